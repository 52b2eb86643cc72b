"""The closed forward op set.

Every op takes tensors, validates shapes, computes with numpy, and returns a
fresh tensor. When a :class:`~xvit.tape.Tape` is recording on the current
thread, the op also appends its vector-Jacobian closure so reverse mode can
replay it (closures call the adjoint rules in :mod:`xvit.adjoints`). When a
:class:`~xvit.flops.FlopMeter` is active, contraction ops report their MACs.

No broadcasting beyond the shapes documented per op, no views across ops:
outputs always own their buffers.
"""

from __future__ import annotations

import numpy as np

from . import adjoints, flops
from .errors import AxisError, ConfigError, NumericError, RankError, ShapeError
from .tape import active_tape
from .tensor import Tensor

__all__ = [
    "matmul", "matmul_cols", "transpose2d", "softmax_rows",
    "l2_normalize_axis", "xnorm", "gelu", "conv2d", "depthwise_conv3x3",
    "affine", "add", "scale_const", "add_row_bias",
    "slice_cols", "slice_rows", "slice1d", "concat_cols", "concat_rows",
    "reshape", "tokens_to_grid", "grid_to_tokens", "cross_entropy_logits",
]


def _require_rank(t: Tensor, rank: int, op: str) -> None:
    if t.data.ndim != rank:
        raise RankError(f"{op}: expected rank {rank}, got shape {t.shape}")


# ---------------------------------------------------------------------------
# contractions
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """c[i,j] = sum_k a[i,k] * b[k,j] for 2-d operands."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise RankError(f"matmul: expected rank 2, got {ad.shape} x {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner extents differ: {ad.shape} x {bd.shape}")
    flops.add_macs(ad.shape[0] * ad.shape[1] * bd.shape[1])
    out = Tensor._wrap(ad @ bd)
    t = active_tape()
    if t is not None:
        t.record(out, (a, b), lambda g: adjoints.backward_matmul(g, ad, bd))
    return out


def matmul_cols(x: Tensor, w: Tensor, start: int, stop: int) -> Tensor:
    """x @ w[:, start:stop] without materializing the weight slice.

    The per-head projection: mathematically identical to slicing the full
    x @ w, but the only allocation is the (rows x slice) output.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 2 or wd.ndim != 2:
        raise RankError(f"matmul_cols: expected rank 2, got {xd.shape} x {wd.shape}")
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError(f"matmul_cols: inner extents differ: {xd.shape} x {wd.shape}")
    if not (0 <= start < stop <= wd.shape[1]):
        raise ShapeError(f"matmul_cols: column range [{start}, {stop}) out of bounds for {wd.shape}")
    flops.add_macs(xd.shape[0] * xd.shape[1] * (stop - start))
    out = Tensor._wrap(xd @ wd[:, start:stop])
    t = active_tape()
    if t is not None:

        def vjp(g):
            grad_w = np.zeros_like(wd)
            grad_w[:, start:stop] = xd.T @ g
            return g @ wd[:, start:stop].T, grad_w

        t.record(out, (x, w), vjp)
    return out


def transpose2d(a: Tensor) -> Tensor:
    """out[j,i] = a[i,j]."""
    _require_rank(a, 2, "transpose2d")
    out = Tensor._wrap(np.ascontiguousarray(a.data.T))
    t = active_tape()
    if t is not None:
        t.record(out, (a,), lambda g: (adjoints.backward_transpose2d(g),))
    return out


# ---------------------------------------------------------------------------
# nonlinearities and normalizations
# ---------------------------------------------------------------------------

def softmax_rows(a: Tensor) -> Tensor:
    """Rowwise softmax with per-row max subtraction for stability."""
    _require_rank(a, 2, "softmax_rows")
    row_max = a.data.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(row_max)):
        raise NumericError("softmax_rows: non-finite input")
    e = np.exp(a.data - row_max)
    out_arr = e / e.sum(axis=1, keepdims=True)
    out = Tensor._wrap(out_arr)
    t = active_tape()
    if t is not None:
        t.record(out, (a,), lambda g: (adjoints.backward_softmax_rows(g, out_arr),))
    return out


def _norm_kernel(v: np.ndarray, gamma, eps: float):
    """Shared core: v has vectors on the last axis, gamma broadcasts on it."""
    n = np.sqrt((v * v).sum(axis=-1, keepdims=True) + eps * eps)
    return gamma * v / n


def l2_normalize_axis(a: Tensor, axis: int, gamma=1.0, eps: float = 1e-6) -> Tensor:
    """Smoothed L2 normalization of every vector along ``axis``.

    Each vector v (obtained by fixing all other indices) maps to
    gamma * v / sqrt(|v|^2 + eps^2). ``gamma`` is a constant here -- a scalar
    or an array of shape a.shape-without-axis for per-slice scales; the
    learnable-gamma entry point is :func:`xnorm`.
    """
    if eps <= 0:
        raise ConfigError(f"l2_normalize_axis: eps must be > 0, got {eps}")
    nd = a.data.ndim
    if not (0 <= axis < nd):
        raise AxisError(f"l2_normalize_axis: axis {axis} out of range for rank {nd}")
    gamma_arr = np.asarray(gamma, dtype=a.data.dtype)
    if gamma_arr.ndim:
        gamma_arr = gamma_arr[..., None]  # broadcast one scale per slice
    flops.add_macs(2 * a.size)
    v = np.moveaxis(a.data, axis, -1)
    out = Tensor._wrap(np.ascontiguousarray(np.moveaxis(_norm_kernel(v, gamma_arr, eps), -1, axis)))
    t = active_tape()
    if t is not None:
        vc = v.copy()

        def vjp(g):
            gm = np.moveaxis(g, axis, -1)
            grad_v, _ = adjoints.backward_xnorm(gm, vc, gamma_arr, eps)
            return (np.moveaxis(grad_v, -1, axis),)

        t.record(out, (a,), vjp)
    return out


def xnorm(a: Tensor, gamma: Tensor, eps: float, axis: int = 1) -> Tensor:
    """Cross-normalization with learnable scales: the named home of gamma.

    ``a`` is rank 2; the extent along ``axis`` is split into len(gamma)
    equal chunks and every chunk vector is smoothed-L2-normalized then
    multiplied by its chunk's gamma. With len(gamma) == 1 this normalizes
    whole rows (axis=1) or columns (axis=0); with len(gamma) == heads it
    normalizes each token's per-head channel groups in one call. Gradients
    flow to both ``a`` and ``gamma``.
    """
    if eps <= 0:
        raise ConfigError(f"xnorm: eps must be > 0, got {eps}")
    ad, gd = a.data, gamma.data
    if ad.ndim != 2 or gd.ndim != 1:
        raise RankError(f"xnorm: expected rank-2 input and rank-1 gamma, "
                        f"got {ad.shape} / {gd.shape}")
    if axis not in (0, 1):
        raise AxisError(f"xnorm: axis {axis} out of range for rank 2")
    groups = gd.shape[0]
    m = ad if axis == 1 else ad.T
    rows, width = m.shape
    if width % groups != 0:
        raise ShapeError(f"xnorm: extent {width} not divisible into {groups} gamma chunks")
    d = width // groups
    v = np.ascontiguousarray(m).reshape(rows, groups, d)
    gamma3 = gamma.data.reshape(1, groups, 1)
    flops.add_macs(2 * a.size)
    out_arr = _norm_kernel(v, gamma3, eps).reshape(rows, width)
    if axis == 0:
        out_arr = out_arr.T
    out = Tensor._wrap(np.ascontiguousarray(out_arr))
    t = active_tape()
    if t is not None:

        def vjp(g):
            gm = g if axis == 1 else g.T
            g3 = np.ascontiguousarray(gm).reshape(rows, groups, d)
            grad_v, gamma_per_vec = adjoints.backward_xnorm(g3, v, gamma3, eps)
            grad_a = grad_v.reshape(rows, width)
            if axis == 0:
                grad_a = grad_a.T
            return np.ascontiguousarray(grad_a), gamma_per_vec.sum(axis=0)

        t.record(out, (a, gamma), vjp)
    return out


def gelu(a: Tensor) -> Tensor:
    """Elementwise x * Phi(x), tanh approximation:

    0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    with sqrt(2/pi) = 0.7978845608028654.
    """
    x = a.data
    x2 = x * x
    th = np.tanh(x * (adjoints.GELU_SQRT_2_OVER_PI
                      + adjoints._GELU_INNER_COEF * x2))
    out = Tensor._wrap(0.5 * x * (1.0 + th))
    t = active_tape()
    if t is not None:
        t.record(out, (a,), lambda g: (adjoints.backward_gelu(g, x, tanh_u=th),))
    return out


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

_im2col_cache: dict = {}


def _im2col_indices(cin, h, w, k, stride, pad):
    key = (cin, h, w, k, stride, pad)
    hit = _im2col_cache.get(key)
    if hit is not None:
        return hit
    hp, wp = h + 2 * pad, w + 2 * pad
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    c_off = np.repeat(np.arange(cin), k * k) * (hp * wp)
    u_off = np.tile(np.repeat(np.arange(k), k), cin) * wp
    v_off = np.tile(np.arange(k), k * cin)
    start = c_off + u_off + v_off
    spatial = (np.arange(h_out)[:, None] * stride * wp
               + np.arange(w_out)[None, :] * stride).reshape(-1)
    idx = start[:, None] + spatial[None, :]
    entry = (idx, (cin, hp, wp), h_out, w_out)
    _im2col_cache[key] = entry
    return entry


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (Cin,H,W) with (Cout,Cin,k,k), optional bias."""
    _require_rank(x, 3, "conv2d")
    _require_rank(w, 4, "conv2d weights")
    cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {w.shape}")
    if cin != cin_w:
        raise ShapeError(f"conv2d: channel mismatch: input {x.shape} vs weights {w.shape}")
    if h + 2 * padding < k or wd + 2 * padding < k or stride < 1 or padding < 0:
        # the usual floor convention: (H + 2p - k)//s + 1 windows; only an
        # empty output is impossible geometry
        raise ShapeError(
            f"conv2d: non-integral output extent for input {x.shape}, "
            f"k={k}, stride={stride}, padding={padding}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")

    idx, padded_shape, h_out, w_out = _im2col_indices(cin, h, wd, k, stride, padding)
    xpad = np.zeros(padded_shape, dtype=x.dtype)
    xpad[:, padding:padding + h, padding:padding + wd] = x.data
    cols = xpad.reshape(-1)[idx]
    out_mat = w.data.reshape(cout, -1) @ cols
    if b is not None:
        out_mat = out_mat + b.data[:, None]
    flops.add_macs(cout * h_out * w_out * cin * k * k)
    out = Tensor._wrap(out_mat.reshape(cout, h_out, w_out))
    t = active_tape()
    if t is not None:
        wd_arr, x_shape, has_bias = w.data, x.shape, b is not None

        def vjp(g):
            grad_x, grad_w, grad_b = adjoints.backward_conv2d(
                g, cols, wd_arr, idx, padded_shape, padding, x_shape, has_bias)
            if has_bias:
                return grad_x, grad_w, grad_b
            return grad_x, grad_w

        t.record(out, (x, w) if b is None else (x, w, b), vjp)
    return out


def depthwise_conv3x3(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel 3x3 correlation with zero padding 1; channels never mix."""
    _require_rank(x, 3, "depthwise_conv3x3")
    _require_rank(w, 3, "depthwise_conv3x3 weights")
    c, h, wd = x.shape
    if w.shape != (c, 3, 3):
        raise ShapeError(f"depthwise_conv3x3: weights {w.shape} != ({c}, 3, 3)")
    xpad = np.zeros((c, h + 2, wd + 2), dtype=x.dtype)
    xpad[:, 1:-1, 1:-1] = x.data
    kd = w.data
    out_arr = np.zeros_like(x.data)
    for u in range(3):
        for v in range(3):
            out_arr += kd[:, u, v, None, None] * xpad[:, u:u + h, v:v + wd]
    flops.add_macs(c * h * wd * 9)
    out = Tensor._wrap(out_arr)
    t = active_tape()
    if t is not None:
        t.record(out, (x, w), lambda g: adjoints.backward_depthwise_conv3x3(g, xpad, kd))
    return out


# ---------------------------------------------------------------------------
# elementwise / structural glue
# ---------------------------------------------------------------------------

def affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel y = x * scale + shift for x of shape (N, C)."""
    _require_rank(x, 2, "affine")
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"affine: scale {scale.shape} / shift {shift.shape} != ({c},)")
    out = Tensor._wrap(x.data * scale.data + shift.data)
    t = active_tape()
    if t is not None:
        xd, sd = x.data, scale.data
        t.record(out, (x, scale, shift), lambda g: adjoints.backward_affine(g, xd, sd))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.data + b.data)
    t = active_tape()
    if t is not None:
        t.record(out, (a, b), lambda g: (g, g))
    return out


def scale_const(a: Tensor, c: float) -> Tensor:
    out = Tensor._wrap(a.data * c)
    t = active_tape()
    if t is not None:
        t.record(out, (a,), lambda g: (g * c,))
    return out


def add_row_bias(x: Tensor, b: Tensor) -> Tensor:
    """(N, P) + (P,) bias broadcast over rows."""
    _require_rank(x, 2, "add_row_bias")
    if b.shape != (x.shape[1],):
        raise ShapeError(f"add_row_bias: bias {b.shape} != ({x.shape[1]},)")
    out = Tensor._wrap(x.data + b.data)
    t = active_tape()
    if t is not None:
        t.record(out, (x, b), lambda g: (g, g.sum(axis=0)))
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _require_rank(a, 2, "slice_cols")
    if not (0 <= start < stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: range [{start}, {stop}) out of bounds for {a.shape}")
    out = Tensor._wrap(np.ascontiguousarray(a.data[:, start:stop]))
    t = active_tape()
    if t is not None:
        shape, dtype = a.shape, a.dtype

        def vjp(g):
            full = np.zeros(shape, dtype=dtype)
            full[:, start:stop] = g
            return (full,)

        t.record(out, (a,), vjp)
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    _require_rank(a, 2, "slice_rows")
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: range [{start}, {stop}) out of bounds for {a.shape}")
    out = Tensor._wrap(np.ascontiguousarray(a.data[start:stop]))
    t = active_tape()
    if t is not None:
        shape, dtype = a.shape, a.dtype

        def vjp(g):
            full = np.zeros(shape, dtype=dtype)
            full[start:stop] = g
            return (full,)

        t.record(out, (a,), vjp)
    return out


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    _require_rank(a, 1, "slice1d")
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"slice1d: range [{start}, {stop}) out of bounds for {a.shape}")
    out = Tensor._wrap(np.ascontiguousarray(a.data[start:stop]))
    t = active_tape()
    if t is not None:
        shape, dtype = a.shape, a.dtype

        def vjp(g):
            full = np.zeros(shape, dtype=dtype)
            full[start:stop] = g
            return (full,)

        t.record(out, (a,), vjp)
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: empty input")
    rows = parts[0].shape[0]
    for p in parts:
        _require_rank(p, 2, "concat_cols")
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ: {[p.shape for p in parts]}")
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=1))
    t = active_tape()
    if t is not None:
        widths = [p.shape[1] for p in parts]

        def vjp(g):
            splits = np.cumsum(widths)[:-1]
            return tuple(np.ascontiguousarray(s) for s in np.split(g, splits, axis=1))

        t.record(out, tuple(parts), vjp)
    return out


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: empty input")
    cols = parts[0].shape[1]
    for p in parts:
        _require_rank(p, 2, "concat_rows")
        if p.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ: {[p.shape for p in parts]}")
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=0))
    t = active_tape()
    if t is not None:
        heights = [p.shape[0] for p in parts]

        def vjp(g):
            splits = np.cumsum(heights)[:-1]
            return tuple(np.ascontiguousarray(s) for s in np.split(g, splits, axis=0))

        t.record(out, tuple(parts), vjp)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    out = Tensor._wrap(a.data.reshape(shape).copy())
    t = active_tape()
    if t is not None:
        old = a.shape
        t.record(out, (a,), lambda g: (g.reshape(old),))
    return out


def tokens_to_grid(x: Tensor, rows: int, cols: int) -> Tensor:
    """(N, C) token matrix -> (C, rows, cols) grid, tokens in row-major order."""
    _require_rank(x, 2, "tokens_to_grid")
    n, c = x.shape
    if rows * cols != n:
        raise ShapeError(f"tokens_to_grid: grid {rows}x{cols} != {n} tokens")
    out = Tensor._wrap(np.ascontiguousarray(x.data.reshape(rows, cols, c).transpose(2, 0, 1)))
    t = active_tape()
    if t is not None:
        t.record(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(1, 2, 0).reshape(n, c)),))
    return out


def grid_to_tokens(x: Tensor) -> Tensor:
    """(C, H, W) grid -> (H*W, C) token matrix, row-major over the grid."""
    _require_rank(x, 3, "grid_to_tokens")
    c, h, w = x.shape
    out = Tensor._wrap(np.ascontiguousarray(x.data.transpose(1, 2, 0).reshape(h * w, c)))
    t = active_tape()
    if t is not None:
        t.record(out, (x,), lambda g: (np.ascontiguousarray(g.reshape(h, w, c).transpose(2, 0, 1)),))
    return out


def cross_entropy_logits(logits: Tensor, label: int) -> Tensor:
    """Softmax cross-entropy of a rank-1 logit vector against one class index."""
    _require_rank(logits, 1, "cross_entropy_logits")
    k = logits.shape[0]
    if not (0 <= label < k):
        raise ShapeError(f"cross_entropy_logits: label {label} out of range for {k} classes")
    z = logits.data
    m = z.max()
    if not np.isfinite(m):
        raise NumericError("cross_entropy_logits: non-finite logits")
    e = np.exp(z - m)
    lse = m + np.log(e.sum())
    out = Tensor._wrap(np.array([lse - z[label]], dtype=z.dtype))
    t = active_tape()
    if t is not None:
        probs = e / e.sum()

        def vjp(g):
            grad = probs.copy()
            grad[label] -= 1.0
            return (grad * g[0],)

        t.record(out, (logits,), vjp)
    return out
