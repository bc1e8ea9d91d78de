"""Finite-difference gradient oracle.

Central differences with h = 1e-5 against float64 analytic gradients.
The comparison uses a relative error with an absolute floor so that
near-zero gradients (where central differences are pure roundoff noise)
do not produce spurious failures.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from openspan.autodiff import ComputationTape, Tensor

H = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-6


def numeric_grad(loss_fn: Callable[[], float], param: Tensor, h: float = H) -> np.ndarray:
    """Central-difference gradient of loss_fn w.r.t. every entry of param.

    loss_fn must re-run the full forward pass reading param.data.
    """
    base = param.data.copy()
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        param.data = flat.reshape(base.shape)
        up = loss_fn()
        flat[i] = keep - h
        param.data = flat.reshape(base.shape)
        down = loss_fn()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    param.data = base
    return grad


def check_gradients(
    loss_fn: Callable[[], "Tensor"],
    params: Mapping[str, Tensor],
    rel_tol: float = REL_TOL,
    h: float = H,
) -> float:
    """Assert analytic and numeric gradients agree for every parameter.

    loss_fn builds the forward pass (no tape management of its own) and
    returns the scalar loss tensor. Returns the worst relative error seen.
    """

    def scalar_loss() -> float:
        return loss_fn().item()

    for p in params.values():
        p.grad = None
    with ComputationTape() as tape:
        loss = loss_fn()
    tape.backward(loss)

    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(scalar_loss, p, h=h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
        rel = np.abs(analytic - numeric) / denom
        err = float(rel.max()) if rel.size else 0.0
        worst = max(worst, err)
        assert err < rel_tol, (
            f"gradient mismatch for '{name}': worst rel err {err:.3e} "
            f"(analytic {analytic.reshape(-1)[np.argmax(rel)]:.6e}, "
            f"numeric {numeric.reshape(-1)[np.argmax(rel)]:.6e})"
        )
    return worst
