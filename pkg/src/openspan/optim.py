"""AdamW with decoupled weight decay.

The decay term is applied directly to the parameter value, not folded into
the gradient, so with a zero gradient a decayed parameter still shrinks by
exactly lr * weight_decay * param per step. Moment estimates use the usual
bias correction. Parameters whose .grad is None are skipped entirely.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, NonFiniteError


class AdamW:
    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        lr_overrides: Mapping[str, float] | None = None,
    ):
        # lr == 0 is legal: a zero step size must leave parameters untouched,
        # which is how pure-evaluation runs are sanity-checked
        if lr < 0:
            raise ConfigError(f"lr: must be non-negative, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ConfigError(f"betas: must lie in [0, 1), got {betas}")
        if weight_decay < 0:
            raise ConfigError(f"weight_decay: must be non-negative, got {weight_decay}")
        self.params = dict(params)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        # longest matching name prefix wins; lets the encoder train at a
        # different rate than the heads
        self.lr_overrides = dict(lr_overrides or {})
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def lr_for(self, name: str) -> float:
        best: str | None = None
        for prefix in self.lr_overrides:
            if name.startswith(prefix) and (best is None or len(prefix) > len(best)):
                best = prefix
        return self.lr_overrides[best] if best is not None else self.lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        # validate every gradient before touching any parameter: a rejected
        # step must leave the whole model untouched
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise NonFiniteError(
                    f"gradient shape {p.grad.shape} does not match parameter "
                    f"'{name}' of shape {p.data.shape}"
                )
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.betas
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            lr = self.lr_for(name)
            if self.weight_decay:
                p.data = p.data - lr * self.weight_decay * p.data
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "lr": self.lr,
            "betas": list(self.betas),
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "lr_overrides": dict(self.lr_overrides),
            "m": {k: v.copy() for k, v in self._m.items()},
            "v": {k: v.copy() for k, v in self._v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.params.items():
            if name not in state["m"]:
                raise ConfigError(f"optimizer state missing parameter '{name}'")
            if state["m"][name].shape != p.data.shape:
                raise ConfigError(
                    f"optimizer state for '{name}' has shape {state['m'][name].shape}, "
                    f"parameter has {p.data.shape}"
                )
        self.step_count = int(state["step_count"])
        self.lr = float(state["lr"])
        self.betas = (float(state["betas"][0]), float(state["betas"][1]))
        self.eps = float(state["eps"])
        self.weight_decay = float(state["weight_decay"])
        self.lr_overrides = dict(state.get("lr_overrides", {}))
        self._m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self._v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}
