"""Shared transformer building blocks: multi-head attention and encoder blocks.

All functions operate on stacked inputs of shape (batch, tokens, d_model) so
that a whole minibatch of view images or exam sequences runs through a single
set of matrix products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor


@dataclass
class BlockParams:
    attn: AttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class CrossBlockParams:
    """Single cross-attention block (attention + residual + norm, no FFN)."""

    attn: AttentionParams
    ln_g: Tensor
    ln_b: Tensor


def _weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out)),
                  requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def _ones(n: int) -> Tensor:
    return Tensor(np.ones(n), requires_grad=True)


def init_attention(rng: np.random.Generator, d: int) -> AttentionParams:
    return AttentionParams(
        wq=_weight(rng, d, d), wk=_weight(rng, d, d),
        wv=_weight(rng, d, d), wo=_weight(rng, d, d),
        bq=_zeros(d), bk=_zeros(d), bv=_zeros(d), bo=_zeros(d),
    )


def init_block(rng: np.random.Generator, d: int, hidden: int) -> BlockParams:
    return BlockParams(
        attn=init_attention(rng, d),
        ln1_g=_ones(d), ln1_b=_zeros(d),
        w1=_weight(rng, d, hidden), b1=_zeros(hidden),
        w2=_weight(rng, hidden, d), b2=_zeros(d),
        ln2_g=_ones(d), ln2_b=_zeros(d),
    )


def init_cross_block(rng: np.random.Generator, d: int) -> CrossBlockParams:
    return CrossBlockParams(attn=init_attention(rng, d), ln_g=_ones(d), ln_b=_zeros(d))


def multi_head_attention(q_in: Tensor, kv_in: Tensor, p: AttentionParams,
                         heads: int) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention of q_in rows over kv_in rows.

    Inputs are (batch, tokens, d). Returns (output, attention weights) where
    weights have shape (batch, heads, q_tokens, kv_tokens) and every query
    row sums to one.
    """
    b, nq, d = q_in.shape
    nk = kv_in.shape[1]
    dh = d // heads

    def split(x: Tensor, n: int) -> Tensor:
        return ad.transpose(ad.reshape(x, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split(q_in @ p.wq + p.bq, nq)
    k = split(kv_in @ p.wk + p.bk, nk)
    v = split(kv_in @ p.wv + p.bv, nk)

    scores = ad.scale(q @ ad.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.transpose(attn @ v, (0, 2, 1, 3)), (b, nq, d))
    return ctx @ p.wo + p.bo, attn


def _affine_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return ad.layer_norm(x) * g + b


def encoder_block(x: Tensor, p: BlockParams, heads: int) -> tuple[Tensor, Tensor]:
    """Post-norm self-attention block: attention, norm, feed-forward, norm."""
    a, attn = multi_head_attention(x, x, p.attn, heads)
    x = _affine_norm(x + a, p.ln1_g, p.ln1_b)
    f = ad.gelu(x @ p.w1 + p.b1) @ p.w2 + p.b2
    return _affine_norm(x + f, p.ln2_g, p.ln2_b), attn


def cross_block(q_in: Tensor, kv_in: Tensor, p: CrossBlockParams,
                heads: int) -> tuple[Tensor, Tensor]:
    """Cross-attention block: q rows attend to kv rows, residual on q, norm."""
    a, attn = multi_head_attention(q_in, kv_in, p.attn, heads)
    return _affine_norm(q_in + a, p.ln_g, p.ln_b), attn
