"""FLOP accounting: closed-form counters plus a runtime meter.

Convention: a FLOP count is 2x the multiply-accumulate (MAC) count. MACs are
charged to the contraction ops only -- matmul, conv, depthwise conv -- plus
the L2 normalizations (one MAC per element for the squared-sum, one for the
scale multiply, i.e. 2 * size). Elementwise adds, gelu, softmax
exponentials, and affine scale/shift are not charged, matching the usual
projection-dominated accounting of model FLOP tables.

The :class:`FlopMeter` context makes the ops report the same quantities at
runtime so the closed forms can be checked against an instrumented forward
pass.
"""

from __future__ import annotations

import threading

__all__ = [
    "FlopMeter",
    "attention_macs_xnorm",
    "attention_macs_softmax",
    "attention_flops_xnorm",
    "attention_flops_softmax",
    "class_attention_macs_xnorm",
]

_tls = threading.local()


def _meter() -> "FlopMeter | None":
    return getattr(_tls, "meter", None)


class FlopMeter:
    """Accumulates MACs reported by ops executed inside the context."""

    def __init__(self):
        self.macs = 0

    def __enter__(self) -> "FlopMeter":
        if _meter() is not None:
            raise RuntimeError("another FlopMeter is already active on this thread")
        _tls.meter = self
        return self

    def __exit__(self, *exc):
        _tls.meter = None
        return False

    @property
    def flops(self) -> int:
        return 2 * self.macs


def add_macs(n: int) -> None:
    m = _meter()
    if m is not None:
        m.macs += n


# ---------------------------------------------------------------------------
# closed forms for the attention sub-modules
# ---------------------------------------------------------------------------

def attention_macs_xnorm(n_tokens: int, channels: int, heads: int) -> int:
    """MACs of one linear-attention forward on n_tokens x channels input.

    Per head of width d = channels/heads: projections 3*N*C*d, context
    K^T V = N*d^2, mixing XN(Q) @ XN(K^T V) = N*d^2, normalizations
    2*N*d (Q) + 2*d^2 (context). Output projection N*C^2. Every term is
    linear in N except the d^2 normalization constant.
    """
    d = channels // heads
    per_head = 3 * n_tokens * channels * d + 2 * n_tokens * d * d \
        + 2 * n_tokens * d + 2 * d * d
    return heads * per_head + n_tokens * channels * channels


def attention_macs_softmax(n_tokens: int, channels: int, heads: int) -> int:
    """MACs of one softmax-attention forward (materializes N x N per head).

    Projections as above; per head the two quadratic products Q K^T and
    A V cost N^2*d each. Softmax exponentials are not charged.
    """
    d = channels // heads
    per_head = 3 * n_tokens * channels * d + 2 * n_tokens * n_tokens * d
    return heads * per_head + n_tokens * channels * channels


def class_attention_macs_xnorm(n_tokens: int, channels: int, heads: int) -> int:
    """MACs of class attention: one query token over n_tokens+1 keys/values."""
    d = channels // heads
    nk = n_tokens + 1
    per_head = (1 + 2 * nk) * channels * d \
        + nk * d * d + 1 * d * d \
        + 2 * 1 * d + 2 * d * d
    return heads * per_head + 1 * channels * channels


def class_attention_macs_softmax(n_tokens: int, channels: int, heads: int) -> int:
    """Softmax-equivalent class attention (1 x (n_tokens+1) scores per head)."""
    d = channels // heads
    nk = n_tokens + 1
    per_head = (1 + 2 * nk) * channels * d + 2 * 1 * nk * d
    return heads * per_head + 1 * channels * channels


def attention_flops_xnorm(n_tokens: int, channels: int, heads: int) -> int:
    return 2 * attention_macs_xnorm(n_tokens, channels, heads)


def attention_flops_softmax(n_tokens: int, channels: int, heads: int) -> int:
    return 2 * attention_macs_softmax(n_tokens, channels, heads)
