"""Multi-head attention blocks and the coarse/fine semantic-relationship explorers.

Inputs are (..., rows, e) tensors; any leading axes are treated as a batch.
Key masks are boolean (..., rows) arrays, True on padded key rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, relu, softmax, swap_last, transpose


@dataclass
class AttentionBlock:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w_f: Tensor
    b_f: Tensor
    w_ff: Tensor
    b_ff: Tensor
    heads: int

    def __post_init__(self):
        e = self.wq.shape[0]
        if e % self.heads:
            raise ValueError(f"embedding size {e} is not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def named(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in ("wq", "wk", "wv", "wo", "w_f", "b_f", "w_ff", "b_ff")}

    @classmethod
    def from_named(cls, params: dict[str, Tensor], heads: int) -> "AttentionBlock":
        return cls(heads=heads, **params)

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, heads: int, ffn_dim: int, scale: float = 0.08):
        if dim % heads:
            raise ValueError(f"embedding size {dim} is not divisible by {heads} heads")

        def w(*shape):
            return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)

        def zeros(n):
            return Tensor(np.zeros(n), requires_grad=True)

        return cls(
            wq=w(dim, dim), wk=w(dim, dim), wv=w(dim, dim), wo=w(dim, dim),
            w_f=w(dim, ffn_dim), b_f=zeros(ffn_dim), w_ff=w(ffn_dim, dim), b_ff=zeros(dim),
            heads=heads,
        )


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (..., rows, e) -> (..., heads, rows, e / heads)
    *lead, rows, e = x.shape
    x = x.reshape(*lead, rows, heads, e // heads)
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, rows, dk = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return transpose(x, axes).reshape(*lead, rows, heads * dk)


def attention_weights(q: Tensor, k: Tensor, block: AttentionBlock, mask=None) -> Tensor:
    """Per-head weights softmax(Q W^Q (K W^K)^T / sqrt(d_k)), shape (..., heads, l, k)."""
    qh = _split_heads(q @ block.wq, block.heads)
    kh = _split_heads(k @ block.wk, block.heads)
    scores = (qh @ swap_last(kh)) * (1.0 / math.sqrt(block.head_dim))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[..., None, None, :]
    return softmax(scores, mask=mask)


def multi_head_attention(q, k, v, block: AttentionBlock, mask=None, return_weights: bool = False):
    """Scaled dot-product attention per head, heads concatenated and projected by W^O."""
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"keys ({k.shape[-2]} rows) and values ({v.shape[-2]} rows) differ")
    weights = attention_weights(q, k, block, mask)
    vh = _split_heads(v @ block.wv, block.heads)
    out = _merge_heads(weights @ vh) @ block.wo
    return (out, weights) if return_weights else out


def feed_forward(x: Tensor, block: AttentionBlock) -> Tensor:
    return relu(x @ block.w_f + block.b_f) @ block.w_ff + block.b_ff


def attend(q, kv, block: AttentionBlock, mask=None) -> Tensor:
    """FFN(MultiHead(q, kv, kv))."""
    return feed_forward(multi_head_attention(q, kv, kv, block, mask), block)


def coarse_explore(c_global: Tensor, block: AttentionBlock, mask=None) -> Tensor:
    """Every concept attends over all concepts."""
    if c_global.shape[-2] < 1:
        raise ValueError("coarse explorer needs at least one concept")
    return attend(c_global, c_global, block, mask)


def attribute_aggregate(c_obj: Tensor, c_attr: Tensor, block: AttentionBlock, attr_mask=None) -> Tensor:
    """Objects query attributes; one output row per object."""
    return attend(c_obj, c_attr, block, attr_mask)


def object_aggregate(c_rel: Tensor, c_obj: Tensor, block: AttentionBlock, obj_mask=None) -> Tensor:
    """Relations query objects; one output row per relation."""
    return attend(c_rel, c_obj, block, obj_mask)


def relation_aggregate(c_obj: Tensor, c_rel: Tensor, block: AttentionBlock, rel_mask=None) -> Tensor:
    """Objects query relations; one output row per object."""
    return attend(c_obj, c_rel, block, rel_mask)


@dataclass
class FineBlocks:
    attribute: AttentionBlock
    object: AttentionBlock
    relation: AttentionBlock


def fine_explore(c_attr, c_obj, c_rel, blocks: FineBlocks, masks=(None, None, None)):
    """(R_a, R_o, R_r) from the three aggregators with independent parameters.

    ``masks`` are the padding masks of (C_a, C_o, C_r).
    """
    attr_mask, obj_mask, rel_mask = masks
    r_a = attribute_aggregate(c_obj, c_attr, blocks.attribute, attr_mask)
    r_o = object_aggregate(c_rel, c_obj, blocks.object, obj_mask)
    r_r = relation_aggregate(c_obj, c_rel, blocks.relation, rel_mask)
    return r_a, r_o, r_r
