"""Analytic backward rules for the closed forward op set.

These are plain numpy functions: they take the upstream gradient plus
whatever forward context each rule needs and return input gradients. The
tape's recorded nodes call straight into them, and the finite-difference
tests exercise them directly.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "backward_matmul",
    "backward_transpose2d",
    "backward_softmax_rows",
    "backward_xnorm",
    "backward_gelu",
    "backward_affine",
    "backward_conv2d",
    "backward_depthwise_conv3x3",
]

# tanh-approximation constants shared with ops.gelu
GELU_SQRT_2_OVER_PI = 0.7978845608028654
GELU_CUBIC_COEF = 0.044715
_GELU_INNER_COEF = GELU_SQRT_2_OVER_PI * GELU_CUBIC_COEF  # sqrt(2/pi)*0.044715


def backward_matmul(g: np.ndarray, a: np.ndarray, b: np.ndarray):
    """d(a @ b): grad_a = g @ b^T, grad_b = a^T @ g."""
    return g @ b.T, a.T @ g


def backward_transpose2d(g: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(g.T)


def backward_softmax_rows(g: np.ndarray, softmax_out: np.ndarray) -> np.ndarray:
    """Rowwise softmax adjoint: s * (g - <g, s>) with the dot per row."""
    dot = (g * softmax_out).sum(axis=1, keepdims=True)
    return softmax_out * (g - dot)


def backward_xnorm(g: np.ndarray, v: np.ndarray, gamma, eps: float):
    """Adjoint of the smoothed, scaled L2 normalization out = gamma * v / n.

    Vectors lie along the last axis of ``v``; each has its own smoothed norm
    n = sqrt(sum(v^2) + eps^2). ``gamma`` is a scalar or an array already
    broadcastable against ``v`` (e.g. shape (groups, 1)). Returns
    (grad_v, gamma_grad_per_vector):

        grad_v              = (gamma / n) * (g - (g . v / n^2) * v)
        gamma_grad_per_vec  = (g . v) / n        # shape v.shape[:-1]

    The per-vector gamma contributions are returned unsummed; the caller
    reduces them over whatever axes share one learnable scale (all tokens of
    a head, say).
    """
    n = np.sqrt((v * v).sum(axis=-1, keepdims=True) + eps * eps)
    gv = (g * v).sum(axis=-1, keepdims=True)
    grad_v = (gamma / n) * (g - (gv / (n * n)) * v)
    return grad_v, np.squeeze(gv / n, axis=-1)


def backward_gelu(g: np.ndarray, x: np.ndarray,
                  tanh_u: np.ndarray | None = None) -> np.ndarray:
    """Derivative of the tanh-form gelu used in the forward pass.

    ``tanh_u`` lets the caller reuse tanh(sqrt(2/pi)*(x + 0.044715 x^3))
    saved from the forward pass; recomputed when absent.
    """
    x2 = x * x
    t = np.tanh(x * (GELU_SQRT_2_OVER_PI + _GELU_INNER_COEF * x2)) \
        if tanh_u is None else tanh_u
    du = GELU_SQRT_2_OVER_PI + 3.0 * _GELU_INNER_COEF * x2
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def backward_affine(g: np.ndarray, x: np.ndarray, scale: np.ndarray):
    """d(x * scale + shift) per channel: returns (grad_x, grad_scale, grad_shift)."""
    return g * scale, (g * x).sum(axis=0), g.sum(axis=0)


def backward_conv2d(g: np.ndarray, cols: np.ndarray, w: np.ndarray,
                    idx: np.ndarray, padded_shape, pad: int, x_shape,
                    has_bias: bool):
    """Adjoint of the im2col convolution.

    ``cols`` is the unfolded input (Cin*k*k, H'*W') saved in the forward
    pass, ``idx`` the gather indices into the zero-padded input. Returns
    (grad_x, grad_w, grad_b) with grad_b None when the forward had no bias.
    """
    cout = w.shape[0]
    g_mat = g.reshape(cout, -1)
    grad_w = (g_mat @ cols.T).reshape(w.shape)
    grad_cols = w.reshape(cout, -1).T @ g_mat
    # scatter-add back through the gather; bincount sums duplicates in index
    # order, which keeps the reduction deterministic
    n_pad = padded_shape[0] * padded_shape[1] * padded_shape[2]
    grad_pad = np.bincount(idx.reshape(-1), weights=grad_cols.reshape(-1),
                           minlength=n_pad).astype(g.dtype, copy=False)
    grad_pad = grad_pad.reshape(padded_shape)
    if pad:
        grad_x = grad_pad[:, pad:-pad, pad:-pad]
    else:
        grad_x = grad_pad
    grad_b = g.sum(axis=(1, 2)) if has_bias else None
    return np.ascontiguousarray(grad_x.reshape(x_shape)), grad_w, grad_b


def backward_depthwise_conv3x3(g: np.ndarray, xpad: np.ndarray, w: np.ndarray):
    """Adjoint of the per-channel 3x3 correlation with padding 1.

    ``xpad`` is the zero-padded input (C, H+2, W+2) saved in the forward
    pass. Returns (grad_x, grad_w).
    """
    c, hp, wp = xpad.shape
    h, wd = hp - 2, wp - 2
    grad_w = np.empty_like(w)
    grad_pad = np.zeros_like(xpad)
    for u in range(3):
        for v in range(3):
            window = xpad[:, u:u + h, v:v + wd]
            grad_w[:, u, v] = (g * window).sum(axis=(1, 2))
            grad_pad[:, u:u + h, v:v + wd] += w[:, u, v, None, None] * g
    return np.ascontiguousarray(grad_pad[:, 1:-1, 1:-1]), grad_w
