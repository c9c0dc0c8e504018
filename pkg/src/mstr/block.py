"""The multi-scale encoder block.

Q/K/V projections are average-pooled into a pyramid of ``L`` temporal
resolutions (each level ``p`` times coarser than the last).  At every level,
self-attention runs independently inside contiguous windows of ``p`` frames,
then the levels are nearest-up-sampled back to full length, passed through
GELU, summed and projected.  The sublayer is wrapped with the usual post-norm
residual and a position-wise feed-forward network.

All functions here operate on row-stacked inputs as well: when several
sequences, each a multiple of ``p**L`` frames, are concatenated along time,
no pooling window or attention window straddles two of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import (
    Tape,
    Tensor,
    add,
    avg_pool_time,
    concat_cols,
    dropout,
    gelu,
    layer_norm,
    matmul,
    slice_cols,
    tape_scope,
    softmax_rows,
    upsample_nearest_time,
    window_apply,
    window_scores,
)

LN_EPS = 1e-5


@dataclass
class MstrBlockParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "", tape: Optional[Tape] = None):
        """Wrap ``arrays[prefix + name]`` as leaves on ``tape`` (or constants)."""
        kw = {}
        for n in cls.names():
            key = prefix + n
            kw[n] = tape.leaf(arrays[key], name=key) if tape is not None else Tensor(arrays[key])
        return cls(**kw)

    @property
    def model_dim(self) -> int:
        return self.w_q.rows


@dataclass
class ScalePyramid:
    levels: list[tuple[Tensor, Tensor, Tensor]]
    scale_factors: list[int]

    def __len__(self):
        return len(self.levels)


@dataclass
class DropoutSpec:
    rate: float
    rng: np.random.Generator


def project_qkv(x: Tensor, params: MstrBlockParams) -> tuple[Tensor, Tensor, Tensor]:
    if x.cols != params.w_q.rows:
        raise DimensionError(f"project_qkv: input has {x.cols} columns, projections expect {params.w_q.rows}")
    with tape_scope(x, params.w_q, name="projections"):
        return matmul(x, params.w_q), matmul(x, params.w_k), matmul(x, params.w_v)


def build_scale_pyramid(q: Tensor, k: Tensor, v: Tensor, p: int, L: int) -> ScalePyramid:
    if p < 2 or L < 1:
        raise ConfigurationError(f"need p >= 2 and L >= 1, got p={p}, L={L}")
    T = q.rows
    need = p ** (L - 1)
    if T % need:
        padded = -(-T // need) * need
        raise ConfigurationError(
            f"T={T} is not divisible by p^(L-1)={need}; pad to {padded} frames (+{padded - T})")
    levels = [(q, k, v)]
    for _ in range(1, L):
        levels.append(tuple(avg_pool_time(m, p) for m in levels[-1]))
    return ScalePyramid(levels, [p ** i for i in range(L)])


def fractal_attention_scale(qk: Tensor, kk: Tensor, vk: Tensor, p: int, heads: int,
                            probs: Optional[list] = None) -> Tensor:
    """Window-local multi-head attention over one pyramid level.

    Rows are split into ``t/p`` contiguous windows and each head (a column
    slice of width ``F/heads``) attends only within its window.  When
    ``probs`` is a list, the t x p probability matrix of every head is
    appended to it.
    """
    t, F = qk.shape
    if t % p:
        raise ConfigurationError(f"level with {t} frames cannot be split into windows of p={p}")
    if heads < 1 or F % heads:
        raise ConfigurationError(f"F={F} is not divisible by heads={heads}")
    d = F // heads
    inv_sqrt_d = 1.0 / math.sqrt(d)
    outs = []
    for h in range(heads):
        if heads == 1:
            qh, kh, vh = qk, kk, vk
        else:
            lo, hi = h * d, (h + 1) * d
            qh, kh, vh = slice_cols(qk, lo, hi), slice_cols(kk, lo, hi), slice_cols(vk, lo, hi)
        with tape_scope(qh, kh, name="attention-scores"):
            a = softmax_rows(window_scores(qh, kh, p, inv_sqrt_d))
        with tape_scope(a, vh, name="attention-values"):
            outs.append(window_apply(a, vh, p))
        if probs is not None:
            probs.append(a.data)
    return concat_cols(outs)


def scale_mix(levels: list[Tensor], scale_factors: list[int], w_o: Tensor, T: int) -> Tensor:
    """Up-sample every level to ``T`` rows, GELU, sum in level order, project."""
    if len(levels) != len(scale_factors):
        raise ConfigurationError("scale_mix: one scale factor per level required")
    total = None
    for y, s in zip(levels, scale_factors):
        up = upsample_nearest_time(y, s)
        if up.rows != T:
            raise ConfigurationError(f"scale_mix: level of {y.rows} rows x{s} gives {up.rows}, expected {T}")
        act = gelu(up)
        total = act if total is None else add(total, act)
    with tape_scope(total, w_o, name="projections"):
        return matmul(total, w_o)


def multiscale_attention(x: Tensor, params: MstrBlockParams, p: int, L: int, heads: int,
                         trace: Optional[dict] = None) -> Tensor:
    """Projection -> pyramid -> fractal attention per level -> scale mixer."""
    q, k, v = project_qkv(x, params)
    pyramid = build_scale_pyramid(q, k, v, p, L)
    ys = []
    for qk, kk, vk in pyramid.levels:
        probs = [] if trace is not None else None
        ys.append(fractal_attention_scale(qk, kk, vk, p, heads, probs))
        if trace is not None:
            trace.setdefault("probs", []).append(probs)
            trace.setdefault("levels", []).append(ys[-1].data)
    return scale_mix(ys, pyramid.scale_factors, params.w_o, x.rows)


def feed_forward(h: Tensor, params: MstrBlockParams) -> Tensor:
    with tape_scope(h, params.ffn_w1, name="ffn"):
        inner = gelu(add(matmul(h, params.ffn_w1), params.ffn_b1))
        return add(matmul(inner, params.ffn_w2), params.ffn_b2)


def post_norm_block(x: Tensor, attn_out: Tensor, params: MstrBlockParams,
                    drop: Optional[DropoutSpec] = None) -> Tensor:
    """``LN(x + attn)`` followed by ``LN(h + FFN(h))``."""
    if drop is not None:
        attn_out = dropout(attn_out, drop.rate, drop.rng)
    h1 = layer_norm(add(x, attn_out), params.ln1_gamma, params.ln1_beta, LN_EPS)
    ff = feed_forward(h1, params)
    if drop is not None:
        ff = dropout(ff, drop.rate, drop.rng)
    return layer_norm(add(h1, ff), params.ln2_gamma, params.ln2_beta, LN_EPS)


def mstr_block_forward(x: Tensor, params: MstrBlockParams, p: int, L: int, heads: int,
                       trace: Optional[dict] = None, drop: Optional[DropoutSpec] = None) -> Tensor:
    if x.rows % (p ** L):
        raise ConfigurationError(f"T={x.rows} must be a multiple of p^L={p ** L} for p={p}, L={L}")
    return post_norm_block(x, multiscale_attention(x, params, p, L, heads, trace), params, drop)

