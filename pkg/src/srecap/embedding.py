"""Structured self-attention that turns a variable-row relationship matrix into r rows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, softmax, swap_last, tanh


@dataclass
class EmbeddingParams:
    w_s1: Tensor  # (d_a, e)
    w_s2: Tensor  # (r, d_a)

    @property
    def rows(self) -> int:
        return self.w_s2.shape[0]

    def named(self) -> dict[str, Tensor]:
        return {"w_s1": self.w_s1, "w_s2": self.w_s2}

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, attn_dim: int, rows: int, scale: float = 0.08):
        if rows < 1 or attn_dim < 1:
            raise ValueError("rows and attention size must be positive")
        return cls(
            Tensor(rng.uniform(-scale, scale, size=(attn_dim, dim)), requires_grad=True),
            Tensor(rng.uniform(-scale, scale, size=(rows, attn_dim)), requires_grad=True),
        )


def embedding_weights(rel: Tensor, params: EmbeddingParams, mask=None) -> Tensor:
    """A = softmax(W_s2 tanh(W_s1 R^T)) with the softmax over the N input rows; (..., r, N)."""
    if rel.shape[-2] < 1:
        raise ValueError("structured embedding needs at least one input row")
    hidden = tanh(rel @ swap_last(params.w_s1))           # (..., N, d_a)
    logits = swap_last(hidden @ swap_last(params.w_s2))   # (..., r, N)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[..., None, :]
    return softmax(logits, mask=mask)


def structured_embed(rel: Tensor, params: EmbeddingParams, mask=None, return_weights: bool = False):
    """M = A R, always exactly r rows regardless of how many rows R has."""
    a = embedding_weights(rel, params, mask)
    m = a @ rel
    return (m, a) if return_weights else m


def assemble(parts) -> Tensor:
    """M_c = M_g for a single part; M_f = [M_a; M_o; M_r] stacked row-wise for three."""
    if isinstance(parts, Tensor):
        return parts
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    if len(parts) != 3:
        raise ValueError(f"expected one (coarse) or three (fine) embeddings, got {len(parts)}")
    first = parts[0].shape
    for p in parts[1:]:
        if p.shape != first:
            raise ValueError(f"fine embeddings disagree in shape: {[q.shape for q in parts]}")
    return concat(parts, axis=-2)
