"""Self-attention mechanisms: XNorm linear attention and the softmax baseline.

The linear mechanism never materializes the N x N token-affinity matrix:
each head contracts keys against values first (a d x d context), normalizes
both factors onto scaled unit spheres, and mixes. The softmax baseline
intentionally materializes N x N per head -- it exists to be measured
against.

Axis conventions for the two normalizations (per head of width d):
queries are normalized per token across their d head channels; the context
matrix K^T V is normalized per row, each row being the key-weighted
aggregate of one value channel group. Both factors of the final product are
then unit-scaled vectors, which bounds every output row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor

__all__ = [
    "AttentionParams",
    "AttentionOutput",
    "init_attention_params",
    "xnorm",
    "xnorm_attention",
    "xnorm_attention_core",
    "softmax_attention",
    "class_attention",
    "assoc_check",
]

# re-export: the learnable-gamma normalization lives with the op set
xnorm = ops.xnorm


@dataclass
class AttentionParams:
    """Projection weights plus the per-head learnable scales.

    ``gamma_q`` scales the normalized queries, ``gamma_c`` the normalized
    context rows; both have one entry per head. The two are independent
    learnables -- tying them equal recovers a single shared scale.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    gamma_q: Tensor
    gamma_c: Tensor
    heads: int
    eps: float = 1e-6

    def __post_init__(self):
        c = self.w_q.shape[0] if self.w_q.data.ndim == 2 else -1
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = getattr(self, name)
            if w.data.ndim != 2 or w.shape != (c, c):
                raise ConfigError(f"AttentionParams.{name}: expected ({c}, {c}), got {w.shape}")
        if self.heads < 1 or c % self.heads != 0:
            raise ConfigError(f"channels {c} not divisible by heads {self.heads}")
        for name in ("gamma_q", "gamma_c"):
            g = getattr(self, name)
            if g.shape != (self.heads,):
                raise ConfigError(f"AttentionParams.{name}: expected ({self.heads},), got {g.shape}")
            if not np.all(np.isfinite(g.data)):
                raise ConfigError(f"AttentionParams.{name} must be finite")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


@dataclass
class AttentionOutput:
    """Attention result plus the pre-output-projection activations."""

    out: Tensor
    pre: Tensor  # heads concatenated, before w_o


def init_attention_params(channels: int, heads: int, rng: np.random.Generator,
                          dtype=np.float64, eps: float = 1e-6) -> AttentionParams:
    """Uniform(+-1/sqrt(C)) projection weights, unit gammas."""
    bound = 1.0 / math.sqrt(channels)

    def w():
        return Tensor(rng.uniform(-bound, bound, size=(channels, channels)).astype(dtype))

    ones = np.ones(heads, dtype=dtype)
    return AttentionParams(w(), w(), w(), w(), Tensor(ones), Tensor(ones),
                           heads=heads, eps=eps)


def _check_input(x: Tensor, p: AttentionParams, op: str) -> None:
    if x.data.ndim != 2 or x.shape[1] != p.channels:
        raise ShapeError(f"{op}: input {x.shape} incompatible with {p.channels} channels")


def _xnorm_head(qh: Tensor, kh: Tensor, vh: Tensor, gq: Tensor, gc: Tensor,
                eps: float, normalize: bool) -> Tensor:
    """One head: XN(Q_h) @ XN(K_h^T V_h), or the raw product when unnormalized."""
    ctx = ops.matmul(ops.transpose2d(kh), vh)
    if normalize:
        qh = ops.xnorm(qh, gq, eps)          # per token, whole d-vector rows
        ctx = ops.xnorm(ctx, gc, eps)        # per context row
    return ops.matmul(qh, ctx)


def xnorm_attention(x: Tensor, p: AttentionParams, normalize: bool = True) -> AttentionOutput:
    """Softmax-free attention, linear in token count.

    Per head h: Q_h, K_h, V_h are the head's slices of the projections;
    out_h = XN(Q_h) (XN(K_h^T V_h)). The query normalization happens in one
    grouped call over all heads; heads then run sequentially in index order,
    outputs are concatenated and sent through w_o. Everything materialized
    is O(N*C + d^2 per head); no N x N object ever exists.

    ``normalize=False`` drops both normalizations (raw factorized attention,
    a diagnostic for what the unit-sphere constraint buys).
    """
    _check_input(x, p, "xnorm_attention")
    d = p.head_dim
    q = ops.matmul(x, p.w_q)
    k = ops.matmul(x, p.w_k)
    v = ops.matmul(x, p.w_v)
    if normalize:
        q = ops.xnorm(q, p.gamma_q, p.eps)  # every token's per-head chunk at once
    outs = []
    for h in range(p.heads):
        lo, hi = h * d, (h + 1) * d
        kh = ops.slice_cols(k, lo, hi)
        vh = ops.slice_cols(v, lo, hi)
        ctx = ops.matmul(ops.transpose2d(kh), vh)
        if normalize:
            ctx = ops.xnorm(ctx, ops.slice1d(p.gamma_c, h, h + 1), p.eps)
        outs.append(ops.matmul(ops.slice_cols(q, lo, hi), ctx))
    pre = ops.concat_cols(outs)
    return AttentionOutput(out=ops.matmul(pre, p.w_o), pre=pre)


def xnorm_attention_core(q: Tensor, k: Tensor, v: Tensor, gamma_q: Tensor,
                         gamma_c: Tensor, eps: float = 1e-6) -> Tensor:
    """The normalized mixing given already-projected Q, K, V (N x C each).

    Heads are inferred from len(gamma_q). Returns the pre-w_o concatenation;
    this is the surface the scale-invariance and boundedness properties are
    stated on.
    """
    if not (q.shape == k.shape == v.shape) or q.data.ndim != 2:
        raise ShapeError(f"xnorm_attention_core: Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    heads = gamma_q.shape[0]
    if gamma_c.shape != (heads,):
        raise ConfigError(f"gamma_c length {gamma_c.shape} != heads {heads}")
    c = q.shape[1]
    if c % heads != 0:
        raise ConfigError(f"channels {c} not divisible by heads {heads}")
    d = c // heads
    outs = []
    for h in range(heads):
        lo, hi = h * d, (h + 1) * d
        outs.append(_xnorm_head(
            ops.slice_cols(q, lo, hi), ops.slice_cols(k, lo, hi),
            ops.slice_cols(v, lo, hi),
            ops.slice1d(gamma_q, h, h + 1), ops.slice1d(gamma_c, h, h + 1),
            eps, True))
    return ops.concat_cols(outs)


def softmax_attention(x: Tensor, p: AttentionParams) -> AttentionOutput:
    """The quadratic baseline: softmax(Q K^T / sqrt(d)) V per head.

    Materializes the N x N matrix on purpose; gamma scales are unused here.
    """
    _check_input(x, p, "softmax_attention")
    d = p.head_dim
    inv_sqrt_d = 1.0 / math.sqrt(d)
    outs = []
    for h in range(p.heads):
        lo, hi = h * d, (h + 1) * d
        qh = ops.scale_const(ops.matmul_cols(x, p.w_q, lo, hi), inv_sqrt_d)
        kh = ops.matmul_cols(x, p.w_k, lo, hi)
        vh = ops.matmul_cols(x, p.w_v, lo, hi)
        scores = ops.matmul(qh, ops.transpose2d(kh))   # N x N, the point of this baseline
        outs.append(ops.matmul(ops.softmax_rows(scores), vh))
    pre = ops.concat_cols(outs)
    return AttentionOutput(out=ops.matmul(pre, p.w_o), pre=pre)


def class_attention(cls: Tensor, tokens: Tensor | None, p: AttentionParams) -> Tensor:
    """XNorm attention with the class token as the only query.

    Keys and values cover [cls; tokens] (the class token attends to itself
    too); ``tokens=None`` degenerates to single-token self-attention. Row 0
    of a full xnorm_attention over [cls; tokens] would compute exactly this,
    at N+1 times the query cost.
    """
    if cls.data.ndim != 2 or cls.shape[0] != 1:
        raise ShapeError(f"class_attention: cls must be 1 x C, got {cls.shape}")
    _check_input(cls, p, "class_attention")
    if tokens is None:
        kv = cls
    else:
        if tokens.shape[1] != cls.shape[1]:
            raise ShapeError(f"class_attention: tokens {tokens.shape} vs cls {cls.shape}")
        kv = ops.concat_rows([cls, tokens])
    d = p.head_dim
    q = ops.xnorm(ops.matmul(cls, p.w_q), p.gamma_q, p.eps)
    k = ops.matmul(kv, p.w_k)
    v = ops.matmul(kv, p.w_v)
    outs = []
    for h in range(p.heads):
        lo, hi = h * d, (h + 1) * d
        ctx = ops.matmul(ops.transpose2d(ops.slice_cols(k, lo, hi)),
                         ops.slice_cols(v, lo, hi))
        ctx = ops.xnorm(ctx, ops.slice1d(p.gamma_c, h, h + 1), p.eps)
        outs.append(ops.matmul(ops.slice_cols(q, lo, hi), ctx))
    return ops.matmul(ops.concat_cols(outs), p.w_o)


def assoc_check(q: Tensor, k: Tensor, v: Tensor) -> float:
    """max |(Q K^T) V - Q (K^T V)|: the factorization's numerical footprint.

    Pure diagnostic; computes both association orders densely.
    """
    if not (q.shape == k.shape == v.shape) or q.data.ndim != 2:
        raise ShapeError(f"assoc_check: Q/K/V must share one N x d shape, got "
                         f"{q.shape}, {k.shape}, {v.shape}")
    left = (q.data @ k.data.T) @ v.data
    right = q.data @ (k.data.T @ v.data)
    return float(np.max(np.abs(left - right)))
