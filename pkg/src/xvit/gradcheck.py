"""Whole-model gradients and their finite-difference verification.

``grad_model`` runs a recorded forward over a minibatch, backwards the
mean cross-entropy, and returns one gradient per named parameter.
``gradcheck`` then re-derives sampled entries of every gradient with central
differences and reports the worst relative disagreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, XVitError
from .model import (ModelConfig, ModelParams, block_forward,
                    class_block_forward, init_model, model_forward,
                    stem_forward)
from .tape import Tape
from .tensor import Tensor, no_tracking

__all__ = ["grad_model", "gradcheck", "GradCheckReport", "ParamCheck"]


def grad_model(images, labels, mp: ModelParams, cfg: ModelConfig,
               normalize_attention: bool = True):
    """Mean cross-entropy gradients over a batch.

    ``images`` is a sequence of (Cin, H, W) tensors, ``labels`` the matching
    class indices. Returns (loss, grads, predictions): the scalar loss, a
    dict name -> gradient tensor covering every parameter (zeros where a
    parameter cannot influence the loss), and the argmax predictions.
    """
    if len(images) != len(labels) or not images:
        raise ConfigError(f"batch mismatch: {len(images)} images vs {len(labels)} labels")
    preds = []
    with Tape() as tape:
        total = None
        for img, lab in zip(images, labels):
            logits = model_forward(img, mp, cfg, normalize_attention=normalize_attention)
            preds.append(int(np.argmax(logits.data)))
            loss_i = ops.cross_entropy_logits(logits, int(lab))
            total = loss_i if total is None else ops.add(total, loss_i)
        loss = ops.scale_const(total, 1.0 / len(images))
    tape.backward(loss)
    grads = {}
    for name, t in mp.named_tensors():
        g = tape.grad(t)
        grads[name] = g if g is not None else Tensor(np.zeros(t.shape, dtype=t.dtype.type))
    return loss.item(), grads, preds


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    analytic_norm: float
    numeric_norm: float
    best_step: float
    sampled: int


@dataclass
class GradCheckReport:
    """Finite-difference audit of every parameter gradient.

    ``max_rel_err`` per parameter is max over sampled entries of
    |analytic - numeric| / max(|analytic|, |numeric|, floor), where numeric
    is the best (smallest-error) central difference across the step sweep.
    The floor keeps noise-level entries from dividing by ~0.
    """

    passed: bool
    tolerance: float
    max_rel_err: float
    worst_param: str
    steps: tuple[float, ...]
    samples_per_tensor: int
    denominator_floor: float
    params: list[ParamCheck] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_rel_err": self.max_rel_err,
            "worst_param": self.worst_param,
            "steps": list(self.steps),
            "samples_per_tensor": self.samples_per_tensor,
            "denominator_floor": self.denominator_floor,
            "params": [vars(p) for p in self.params],
        }


def _staged_loss(mp: ModelParams, cfg: ModelConfig, img: Tensor, label: int):
    """Loss re-evaluation that skips stages a perturbed parameter cannot touch.

    Prefix activations (tokens after each block, class token after each
    class block) are cached once; perturbing a parameter of stage k only
    recomputes from stage k on, which is exact because earlier activations
    do not depend on it. Returns (loss_from(stage), stage_of(name)).
    """
    grid = (cfg.grid_side, cfg.grid_side)
    tokens_cache = [stem_forward(img, mp, cfg)]
    for bp in mp.blocks:
        tokens_cache.append(block_forward(tokens_cache[-1], bp, grid))
    cls_cache = [mp.cls_token]  # by reference: pokes to cls_token are seen
    for cbp in mp.class_blocks:
        cls_cache.append(class_block_forward(cls_cache[-1], tokens_cache[-1], cbp))

    def tail_loss(cls: Tensor) -> float:
        c = ops.affine(cls, mp.final_scale, mp.final_shift)
        logits = ops.add_row_bias(ops.matmul(c, mp.head_w), mp.head_b)
        return ops.cross_entropy_logits(ops.reshape(logits, (cfg.num_classes,)), label).item()

    def class_stage(tokens: Tensor, cls: Tensor, start: int) -> float:
        for cbp in mp.class_blocks[start:]:
            cls = class_block_forward(cls, tokens, cbp)
        return tail_loss(cls)

    def loss_from(stage) -> float:
        kind, idx = stage
        if kind == "head":
            return tail_loss(cls_cache[-1])
        if kind == "class":
            return class_stage(tokens_cache[-1], cls_cache[idx], idx)
        tokens = stem_forward(img, mp, cfg) if kind == "stem" else tokens_cache[idx]
        for bp in mp.blocks[0 if kind == "stem" else idx:]:
            tokens = block_forward(tokens, bp, grid)
        return class_stage(tokens, mp.cls_token, 0)

    def stage_of(name: str):
        if name.startswith("stem.") or name == "pos_embed":
            return ("stem", 0)
        if name.startswith("blocks."):
            return ("block", int(name.split(".")[1]))
        if name == "cls_token":
            return ("class", 0)
        if name.startswith("class_blocks."):
            return ("class", int(name.split(".")[1]))
        return ("head", 0)

    return loss_from, stage_of


def gradcheck(cfg: ModelConfig, seed: int = 0, tolerance: float = 1e-5,
              steps: tuple[float, ...] = (1e-4, 1e-5, 1e-6),
              samples_per_tensor: int = 200) -> GradCheckReport:
    """Check analytic gradients of a random model against central differences.

    Runs in float64 on one random input. Tensors larger than
    ``samples_per_tensor`` are spot-checked on a random subsample of entries;
    smaller ones are checked exhaustively. For each entry the central
    difference is evaluated at every step size and the best agreement
    counts, since no single step suits both round-off and curvature.
    """
    mp = init_model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    img = Tensor(rng.uniform(0.0, 1.0, size=(cfg.in_channels, cfg.image_size, cfg.image_size)))
    label = int(rng.integers(cfg.num_classes))

    loss_ref, grads, _ = grad_model([img], [label], mp, cfg)

    # rel err = |a - fd| / max(|a|, |fd|, floor). The floor turns the check
    # into an absolute one (tol * floor) for near-zero entries, whose central
    # differences bottom out at ~1e-10 absolute noise on an O(1) loss.
    floor = 1e-4
    checks = []
    worst = ("", 0.0)
    with no_tracking():
        loss_from, stage_of = _staged_loss(mp, cfg, img, label)
        if loss_from(("stem", 0)) != loss_ref:
            raise XVitError("staged loss disagrees with the recorded forward")

        for name, t in mp.named_tensors():
            stage = stage_of(name)
            flat = t.data.reshape(-1)
            size = flat.shape[0]
            if size <= samples_per_tensor:
                idxs = np.arange(size)
            else:
                idxs = np.sort(rng.choice(size, size=samples_per_tensor, replace=False))
            g_flat = grads[name].data.reshape(-1)
            max_rel, best_step = 0.0, steps[0]
            numeric_sq = 0.0
            for i in idxs:
                a = g_flat[i]
                orig = flat[i]
                rel_i, fd_i, step_i = np.inf, 0.0, steps[0]
                for h in steps:
                    flat[i] = orig + h
                    fp = loss_from(stage)
                    flat[i] = orig - h
                    fm = loss_from(stage)
                    flat[i] = orig
                    fd = (fp - fm) / (2.0 * h)
                    rel = abs(fd - a) / max(abs(a), abs(fd), floor)
                    if rel < rel_i:
                        rel_i, fd_i, step_i = rel, fd, h
                numeric_sq += fd_i * fd_i
                if rel_i > max_rel:
                    max_rel, best_step = rel_i, step_i
            checks.append(ParamCheck(
                name=name, max_rel_err=float(max_rel),
                analytic_norm=float(np.linalg.norm(g_flat[idxs])),
                numeric_norm=float(np.sqrt(numeric_sq)),
                best_step=float(best_step), sampled=int(len(idxs))))
            if max_rel > worst[1]:
                worst = (name, max_rel)

    return GradCheckReport(
        passed=bool(worst[1] <= tolerance), tolerance=tolerance,
        max_rel_err=float(worst[1]), worst_param=worst[0], steps=tuple(steps),
        samples_per_tensor=samples_per_tensor, denominator_floor=floor,
        params=checks)
