"""Toy-scale X-ViT assembly.

Pipeline: convolutional stem (stride-2 3x3 cascade with gelu between,
channel-doubling up to the embed width), ``depth`` encoder blocks, then a
class token refined by ``class_depth`` class-attention blocks while the
patch tokens stay frozen, a final per-channel affine, and a linear
classifier on the class token.

Each encoder block is three residual branches, every branch preceded by its
own learnable per-channel affine (scale init 1, shift init 0) instead of a
normalization layer:

    x += XNormAttention(Aff1(x))
    x += LPI(Aff2(x))          # depthwise3x3 -> gelu -> depthwise3x3 on the token grid
    x += MLP(Aff3(x))          # linear -> gelu -> linear

Class-attention blocks reuse the same shape minus the LPI branch: the class
token has no grid position, and the patch tokens must pass through
untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import flops, ops
from .attention import AttentionParams, class_attention, xnorm_attention
from .errors import ConfigError, ShapeError
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "BlockParams",
    "ClassBlockParams",
    "ModelParams",
    "CONFIGS",
    "get_config",
    "init_model",
    "stem_forward",
    "block_forward",
    "class_block_forward",
    "model_forward",
    "count_params",
    "count_flops",
    "attention_flops_total",
    "mlp_hidden",
    "stem_channels",
]


@dataclass(frozen=True)
class ModelConfig:
    image_size: int
    in_channels: int
    embed_dim: int
    heads: int
    depth: int
    class_depth: int = 2
    mlp_ratio: float = 4.0
    num_classes: int = 10
    patch_stride: int = 16
    pos_embed: bool = True
    eps: float = 1e-6

    def __post_init__(self):
        if self.embed_dim < 1 or self.embed_dim % self.heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.patch_stride < 2 or self.patch_stride & (self.patch_stride - 1):
            raise ConfigError(f"patch_stride must be a power of two >= 2, got {self.patch_stride}")
        if self.image_size % self.patch_stride != 0:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_stride {self.patch_stride}")
        if self.depth < 1 or self.class_depth < 0:
            raise ConfigError(f"need depth >= 1 and class_depth >= 0, got {self.depth}/{self.class_depth}")
        if self.in_channels < 1 or self.num_classes < 1:
            raise ConfigError("in_channels and num_classes must be positive")
        n_stem = self.patch_stride.bit_length() - 1
        if self.embed_dim % (1 << (n_stem - 1)) != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} cannot halve across {n_stem} stem layers")
        if mlp_hidden(self) < 1:
            raise ConfigError(f"mlp_ratio {self.mlp_ratio} gives an empty hidden layer")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_stride

    @property
    def n_tokens(self) -> int:
        return self.grid_side * self.grid_side


def mlp_hidden(cfg: ModelConfig) -> int:
    return int(cfg.embed_dim * cfg.mlp_ratio)


def stem_channels(cfg: ModelConfig) -> list[int]:
    """Output channels of each stem conv: doubling up to embed_dim."""
    n = cfg.patch_stride.bit_length() - 1
    return [cfg.embed_dim >> (n - 1 - i) for i in range(n)]


CONFIGS = {
    # quadrant-task scale: 1x32x32 in, 16 tokens of width 64
    "nano": ModelConfig(image_size=32, in_channels=1, embed_dim=64, heads=4,
                        depth=4, class_depth=2, mlp_ratio=2.0, num_classes=4,
                        patch_stride=8),
    "micro": ModelConfig(image_size=64, in_channels=3, embed_dim=128, heads=4,
                         depth=6, class_depth=2, mlp_ratio=4.0, num_classes=10,
                         patch_stride=16),
}


def get_config(name: str) -> ModelConfig:
    try:
        return CONFIGS[name]
    except KeyError:
        raise ConfigError(f"unknown config '{name}'; available: {sorted(CONFIGS)}") from None


@dataclass
class BlockParams:
    aff1_scale: Tensor
    aff1_shift: Tensor
    attn: AttentionParams
    aff2_scale: Tensor
    aff2_shift: Tensor
    lpi_w1: Tensor
    lpi_w2: Tensor
    aff3_scale: Tensor
    aff3_shift: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


@dataclass
class ClassBlockParams:
    aff1_scale: Tensor
    aff1_shift: Tensor
    attn: AttentionParams
    aff2_scale: Tensor
    aff2_shift: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


@dataclass
class ModelParams:
    stem_w: list[Tensor]
    stem_b: list[Tensor]
    pos_embed: Tensor | None
    blocks: list[BlockParams]
    cls_token: Tensor
    class_blocks: list[ClassBlockParams]
    final_scale: Tensor
    final_shift: Tensor
    head_w: Tensor
    head_b: Tensor
    names: list[tuple[str, Tensor]] = field(default_factory=list, repr=False)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """Stable (name, tensor) enumeration: checkpoint and gradient order."""
        return list(self.names)


def _build_params(cfg: ModelConfig, make) -> ModelParams:
    """Construct the full parameter tree, sourcing every tensor from ``make``.

    ``make(name, shape, kind)`` returns the tensor; random init and
    checkpoint loading share this walk so enumeration order is one
    definition. ``kind`` is one of weight/bias/scale/shift/gamma/cls/pos.
    """
    names: list[tuple[str, Tensor]] = []

    def mk(name, shape, kind):
        t = make(name, shape, kind)
        names.append((name, t))
        return t

    c = cfg.embed_dim
    stem_w, stem_b = [], []
    cin = cfg.in_channels
    for i, cout in enumerate(stem_channels(cfg)):
        stem_w.append(mk(f"stem.{i}.w", (cout, cin, 3, 3), "weight"))
        stem_b.append(mk(f"stem.{i}.b", (cout,), "bias"))
        cin = cout
    pos = mk("pos_embed", (cfg.n_tokens, c), "pos") if cfg.pos_embed else None

    def attn_params(prefix):
        return AttentionParams(
            w_q=mk(f"{prefix}.w_q", (c, c), "weight"),
            w_k=mk(f"{prefix}.w_k", (c, c), "weight"),
            w_v=mk(f"{prefix}.w_v", (c, c), "weight"),
            w_o=mk(f"{prefix}.w_o", (c, c), "weight"),
            gamma_q=mk(f"{prefix}.gamma_q", (cfg.heads,), "gamma"),
            gamma_c=mk(f"{prefix}.gamma_c", (cfg.heads,), "gamma"),
            heads=cfg.heads, eps=cfg.eps)

    hid = mlp_hidden(cfg)
    blocks = []
    for i in range(cfg.depth):
        pre = f"blocks.{i}"
        blocks.append(BlockParams(
            aff1_scale=mk(f"{pre}.aff1.scale", (c,), "scale"),
            aff1_shift=mk(f"{pre}.aff1.shift", (c,), "shift"),
            attn=attn_params(f"{pre}.attn"),
            aff2_scale=mk(f"{pre}.aff2.scale", (c,), "scale"),
            aff2_shift=mk(f"{pre}.aff2.shift", (c,), "shift"),
            lpi_w1=mk(f"{pre}.lpi.w1", (c, 3, 3), "weight"),
            lpi_w2=mk(f"{pre}.lpi.w2", (c, 3, 3), "weight"),
            aff3_scale=mk(f"{pre}.aff3.scale", (c,), "scale"),
            aff3_shift=mk(f"{pre}.aff3.shift", (c,), "shift"),
            mlp_w1=mk(f"{pre}.mlp.w1", (c, hid), "weight"),
            mlp_b1=mk(f"{pre}.mlp.b1", (hid,), "bias"),
            mlp_w2=mk(f"{pre}.mlp.w2", (hid, c), "weight"),
            mlp_b2=mk(f"{pre}.mlp.b2", (c,), "bias")))

    cls_token = mk("cls_token", (1, c), "cls")
    class_blocks = []
    for i in range(cfg.class_depth):
        pre = f"class_blocks.{i}"
        class_blocks.append(ClassBlockParams(
            aff1_scale=mk(f"{pre}.aff1.scale", (c,), "scale"),
            aff1_shift=mk(f"{pre}.aff1.shift", (c,), "shift"),
            attn=attn_params(f"{pre}.attn"),
            aff2_scale=mk(f"{pre}.aff2.scale", (c,), "scale"),
            aff2_shift=mk(f"{pre}.aff2.shift", (c,), "shift"),
            mlp_w1=mk(f"{pre}.mlp.w1", (c, hid), "weight"),
            mlp_b1=mk(f"{pre}.mlp.b1", (hid,), "bias"),
            mlp_w2=mk(f"{pre}.mlp.w2", (hid, c), "weight"),
            mlp_b2=mk(f"{pre}.mlp.b2", (c,), "bias")))

    return ModelParams(
        stem_w=stem_w, stem_b=stem_b, pos_embed=pos, blocks=blocks,
        cls_token=cls_token, class_blocks=class_blocks,
        final_scale=mk("final.scale", (c,), "scale"),
        final_shift=mk("final.shift", (c,), "shift"),
        head_w=mk("head.w", (c, cfg.num_classes), "weight"),
        head_b=mk("head.b", (cfg.num_classes,), "bias"),
        names=names)


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> ModelParams:
    """Seeded random initialization.

    Weights draw uniform(+-1/sqrt(fan_in)); gammas and affine scales start
    at 1 so every normalized factor begins on the unit sphere; shifts and
    biases start at 0; the position embedding is a small uniform(+-0.02).
    """
    rng = np.random.default_rng(seed)

    def make(name, shape, kind):
        if kind == "weight":
            fan_in = shape[1] * shape[2] * shape[3] if len(shape) == 4 \
                else (9 if len(shape) == 3 else shape[0])
            bound = 1.0 / math.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))
        if kind in ("bias", "shift"):
            return Tensor(np.zeros(shape, dtype=dtype))
        if kind in ("scale", "gamma"):
            return Tensor(np.ones(shape, dtype=dtype))
        if kind == "cls":
            bound = 1.0 / math.sqrt(shape[1])
            return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))
        if kind == "pos":
            return Tensor(rng.uniform(-0.02, 0.02, size=shape).astype(dtype))
        raise ValueError(f"unknown parameter kind {kind!r}")

    return _build_params(cfg, make)


# ---------------------------------------------------------------------------
# forwards
# ---------------------------------------------------------------------------

def stem_forward(img: Tensor, mp: ModelParams, cfg: ModelConfig) -> Tensor:
    """Image (Cin, H, W) -> (N, C) tokens; adds the position embedding."""
    if img.shape != (cfg.in_channels, cfg.image_size, cfg.image_size):
        raise ShapeError(f"stem_forward: image {img.shape} does not match config "
                         f"({cfg.in_channels}, {cfg.image_size}, {cfg.image_size})")
    x = img
    last = len(mp.stem_w) - 1
    for i, (w, b) in enumerate(zip(mp.stem_w, mp.stem_b)):
        x = ops.conv2d(x, w, b, stride=2, padding=1)
        if i != last:
            x = ops.gelu(x)
    tokens = ops.grid_to_tokens(x)
    if mp.pos_embed is not None:
        tokens = ops.add(tokens, mp.pos_embed)
    return tokens


def _mlp(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    h = ops.gelu(ops.add_row_bias(ops.matmul(x, w1), b1))
    return ops.add_row_bias(ops.matmul(h, w2), b2)


def block_forward(x: Tensor, bp: BlockParams, token_grid: tuple[int, int],
                  normalize_attention: bool = True) -> Tensor:
    """One encoder block on an (N, C) token matrix laid out on token_grid.

    ``normalize_attention=False`` is the raw factorized-attention diagnostic:
    the attention branch skips both normalizations.
    """
    rows, cols = token_grid
    if rows * cols != x.shape[0]:
        raise ShapeError(f"block_forward: grid {rows}x{cols} != {x.shape[0]} tokens")
    a = ops.affine(x, bp.aff1_scale, bp.aff1_shift)
    x = ops.add(x, xnorm_attention(a, bp.attn, normalize=normalize_attention).out)

    a = ops.affine(x, bp.aff2_scale, bp.aff2_shift)
    g = ops.tokens_to_grid(a, rows, cols)
    g = ops.depthwise_conv3x3(g, bp.lpi_w1)
    g = ops.depthwise_conv3x3(ops.gelu(g), bp.lpi_w2)
    x = ops.add(x, ops.grid_to_tokens(g))

    a = ops.affine(x, bp.aff3_scale, bp.aff3_shift)
    return ops.add(x, _mlp(a, bp.mlp_w1, bp.mlp_b1, bp.mlp_w2, bp.mlp_b2))


def class_block_forward(cls: Tensor, patches: Tensor, cbp: ClassBlockParams) -> Tensor:
    """One class-attention block; only the class token is updated."""
    y = ops.concat_rows([cls, patches])
    a = ops.affine(y, cbp.aff1_scale, cbp.aff1_shift)
    n1 = a.shape[0]
    cls = ops.add(cls, class_attention(ops.slice_rows(a, 0, 1),
                                       ops.slice_rows(a, 1, n1), cbp.attn))
    a = ops.affine(cls, cbp.aff2_scale, cbp.aff2_shift)
    return ops.add(cls, _mlp(a, cbp.mlp_w1, cbp.mlp_b1, cbp.mlp_w2, cbp.mlp_b2))


def model_forward(img: Tensor, mp: ModelParams, cfg: ModelConfig,
                  normalize_attention: bool = True) -> Tensor:
    """Full forward pass; returns the logits as a rank-1 tensor."""
    tokens = stem_forward(img, mp, cfg)
    grid = (cfg.grid_side, cfg.grid_side)
    for bp in mp.blocks:
        tokens = block_forward(tokens, bp, grid, normalize_attention)
    cls = mp.cls_token
    for cbp in mp.class_blocks:
        cls = class_block_forward(cls, tokens, cbp)
    cls = ops.affine(cls, mp.final_scale, mp.final_shift)
    logits = ops.add_row_bias(ops.matmul(cls, mp.head_w), mp.head_b)
    return ops.reshape(logits, (cfg.num_classes,))


# ---------------------------------------------------------------------------
# closed-form counters
# ---------------------------------------------------------------------------

def count_params(cfg: ModelConfig) -> int:
    """Total learnable scalars; must equal the ModelParams enumeration."""
    c = cfg.embed_dim
    total = 0
    cin = cfg.in_channels
    for cout in stem_channels(cfg):
        total += cout * cin * 9 + cout
        cin = cout
    if cfg.pos_embed:
        total += cfg.n_tokens * c
    hid = mlp_hidden(cfg)
    attn = 4 * c * c + 2 * cfg.heads
    mlp = c * hid + hid + hid * c + c
    total += cfg.depth * (6 * c + attn + 2 * c * 9 + mlp)
    total += c  # class token
    total += cfg.class_depth * (4 * c + attn + mlp)
    total += 2 * c  # final affine
    total += c * cfg.num_classes + cfg.num_classes
    return total


def _stem_macs(cfg: ModelConfig, image_size: int) -> int:
    macs = 0
    cin, side = cfg.in_channels, image_size
    for cout in stem_channels(cfg):
        side //= 2
        macs += side * side * cout * cin * 9
        cin = cout
    return macs


def attention_flops_total(cfg: ModelConfig, image_size: int | None = None,
                          mechanism: str = "xnorm") -> int:
    """FLOPs of all attention sub-modules (encoder + class stages)."""
    n = _n_tokens_at(cfg, image_size)
    c, h = cfg.embed_dim, cfg.heads
    if mechanism == "xnorm":
        enc = flops.attention_macs_xnorm(n, c, h)
        cls = flops.class_attention_macs_xnorm(n, c, h)
    elif mechanism == "softmax":
        enc = flops.attention_macs_softmax(n, c, h)
        cls = flops.class_attention_macs_softmax(n, c, h)
    else:
        raise ConfigError(f"unknown mechanism {mechanism!r}")
    return 2 * (cfg.depth * enc + cfg.class_depth * cls)


def _n_tokens_at(cfg: ModelConfig, image_size: int | None) -> int:
    s = cfg.image_size if image_size is None else image_size
    if s % cfg.patch_stride != 0:
        raise ConfigError(f"image_size {s} not divisible by patch_stride {cfg.patch_stride}")
    side = s // cfg.patch_stride
    return side * side


def count_flops(cfg: ModelConfig, image_size: int | None = None,
                mechanism: str = "xnorm") -> int:
    """Forward-pass FLOPs (2x MACs) under the accounting in :mod:`xvit.flops`.

    Exactly mirrors what an instrumented forward reports: stem convolutions,
    per-block attention + LPI depthwise convs + MLP, class-attention blocks,
    and the classifier. ``mechanism='softmax'`` swaps in the quadratic
    attention formula for the baseline comparison.
    """
    size = cfg.image_size if image_size is None else image_size
    n = _n_tokens_at(cfg, image_size)
    c, h = cfg.embed_dim, cfg.heads
    hid = mlp_hidden(cfg)
    macs = _stem_macs(cfg, size)
    if mechanism == "xnorm":
        attn_enc = flops.attention_macs_xnorm(n, c, h)
        attn_cls = flops.class_attention_macs_xnorm(n, c, h)
    elif mechanism == "softmax":
        attn_enc = flops.attention_macs_softmax(n, c, h)
        attn_cls = flops.class_attention_macs_softmax(n, c, h)
    else:
        raise ConfigError(f"unknown mechanism {mechanism!r}")
    per_block = attn_enc + 2 * n * c * 9 + n * c * hid + n * hid * c
    macs += cfg.depth * per_block
    macs += cfg.class_depth * (attn_cls + c * hid + hid * c)
    macs += c * cfg.num_classes
    return 2 * macs
