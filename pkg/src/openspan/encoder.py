"""Encoder abstraction and the self-contained reference encoder.

Any encoder mapping a token id sequence to one hidden vector per position
can sit under the span heads. The reference implementation is deliberately
small: token embeddings, learned absolute position embeddings, and one
single-head scaled-dot-product self-attention mixing layer with a residual
connection. It exists so the whole system trains and evaluates on a desk
machine; it claims nothing about linguistic quality.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, matmul, row_softmax, scale, take_rows, transpose
from .errors import DataError, SequenceOverflowError
from .nn import uniform_init
from .seeding import derive_rng

# ids appended after the base (tokenizer) vocabulary, in this order
RESERVED_TOKENS = 3


@dataclass(frozen=True)
class ReservedIds:
    cls: int
    label: int
    sep: int


def reserved_ids(base_vocab_size: int) -> ReservedIds:
    """Marker ids live directly above the tokenizer's id space."""
    return ReservedIds(
        cls=base_vocab_size,
        label=base_vocab_size + 1,
        sep=base_vocab_size + 2,
    )


class EncoderInterface(abc.ABC):
    """Token ids in, one hidden row per input position out."""

    hidden_dim: int
    max_seq_len: int
    vocab_size: int

    @abc.abstractmethod
    def encode(self, token_ids) -> Tensor:
        """Return a [len(token_ids) x hidden_dim] tensor."""

    @abc.abstractmethod
    def parameters(self) -> dict[str, Tensor]:
        """Trainable tensors by canonical name."""


class ReferenceEncoder(EncoderInterface):
    def __init__(self, vocab_size: int, hidden_dim: int, max_seq_len: int, seed: int):
        if vocab_size <= 0 or hidden_dim <= 0 or max_seq_len <= 0:
            raise DataError(
                f"encoder dimensions must be positive, got vocab={vocab_size} "
                f"hidden={hidden_dim} max_seq={max_seq_len}")
        self.vocab_size = int(vocab_size)
        self.hidden_dim = int(hidden_dim)
        self.max_seq_len = int(max_seq_len)
        rng = derive_rng(seed, "reference-encoder")
        d = self.hidden_dim
        self.token_emb = uniform_init(rng, (self.vocab_size, d), d, name="token_emb")
        self.pos_emb = uniform_init(rng, (self.max_seq_len, d), d, name="pos_emb")
        self.w_query = uniform_init(rng, (d, d), d, name="w_query")
        self.w_key = uniform_init(rng, (d, d), d, name="w_key")
        self.w_value = uniform_init(rng, (d, d), d, name="w_value")
        self.w_output = uniform_init(rng, (d, d), d, name="w_output")

    def parameters(self) -> dict[str, Tensor]:
        return {
            "token_emb": self.token_emb,
            "pos_emb": self.pos_emb,
            "w_query": self.w_query,
            "w_key": self.w_key,
            "w_value": self.w_value,
            "w_output": self.w_output,
        }

    def encode(self, token_ids) -> Tensor:
        ids = [int(i) for i in token_ids]
        n = len(ids)
        if n > self.max_seq_len:
            raise SequenceOverflowError(
                f"sequence of {n} tokens exceeds the encoder maximum of {self.max_seq_len}",
                needed=n, limit=self.max_seq_len)
        for i in ids:
            if not (0 <= i < self.vocab_size):
                raise DataError(f"token id {i} out of range for vocabulary of {self.vocab_size}")
        if n == 0:
            return Tensor(np.zeros((0, self.hidden_dim)))
        h0 = add(take_rows(self.token_emb, ids), take_rows(self.pos_emb, list(range(n))))
        q = matmul(h0, self.w_query)
        k = matmul(h0, self.w_key)
        v = matmul(h0, self.w_value)
        # each attention row is a distribution over all positions
        att = row_softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(self.hidden_dim)))
        return add(h0, matmul(matmul(att, v), self.w_output))
