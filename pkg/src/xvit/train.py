"""Toy training loop: minibatch SGD on the quadrant task.

Fully deterministic given (config, seed): dataset, init, and shuffling all
derive from the one seed. Allocation tracking is suspended inside the loop
(counter updates are pure overhead at ~10^6 tensors per epoch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .data import quadrant_dataset
from .errors import ConfigError, TrainingDivergedError
from .gradcheck import grad_model
from .model import ModelConfig, ModelParams, init_model, model_forward
from .optim import SGD
from .tensor import Tensor, no_tracking

__all__ = ["train_toy", "evaluate", "TrainResult", "EpochStats", "TOY_DEFAULTS",
           "write_curve_csv", "read_curve_csv"]

CURVE_HEADER = "epoch,loss,accuracy"

# frozen toy-run hyperparameters (calibrated once on the nano config)
TOY_DEFAULTS = {
    "epochs": 12,
    "lr": 0.05,
    "momentum": 0.9,
    "batch_size": 32,
    "n_samples": 2048,
}


@dataclass
class EpochStats:
    epoch: int
    loss: float       # mean minibatch loss across the epoch
    accuracy: float   # clean full-train-set evaluation after the epoch


@dataclass
class TrainResult:
    curve: list[EpochStats]
    final_accuracy: float
    final_loss: float
    params: ModelParams

    def smoothed_losses(self, window: int = 5) -> list[float]:
        """Trailing moving average of the per-epoch losses."""
        losses = [e.loss for e in self.curve]
        return [float(np.mean(losses[max(0, i - window + 1):i + 1]))
                for i in range(len(losses))]


def write_curve_csv(curve: list[EpochStats], path) -> None:
    """Per-epoch loss/accuracy series, one row per epoch."""
    from pathlib import Path
    lines = [CURVE_HEADER]
    lines += [f"{e.epoch},{e.loss:.10g},{e.accuracy:.10g}" for e in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve_csv(path) -> list[EpochStats]:
    from pathlib import Path
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln and not ln.startswith("#")]
    if not lines or lines[0] != CURVE_HEADER:
        raise ConfigError(f"{path}: expected header {CURVE_HEADER!r}")
    out = []
    for ln in lines[1:]:
        e, lo, acc = ln.split(",")
        out.append(EpochStats(epoch=int(e), loss=float(lo), accuracy=float(acc)))
    return out


def evaluate(mp: ModelParams, cfg: ModelConfig, images: np.ndarray,
             labels: np.ndarray, normalize_attention: bool = True):
    """(accuracy, mean loss) over a dataset, no recording."""
    correct, loss_sum = 0, 0.0
    with no_tracking():
        for img, lab in zip(images, labels):
            logits = model_forward(Tensor(img), mp, cfg,
                                   normalize_attention=normalize_attention)
            loss_sum += ops.cross_entropy_logits(logits, int(lab)).item()
            correct += int(np.argmax(logits.data)) == int(lab)
    n = len(labels)
    return correct / n, loss_sum / n


def train_toy(cfg: ModelConfig, epochs: int = TOY_DEFAULTS["epochs"],
              lr: float = TOY_DEFAULTS["lr"],
              momentum: float = TOY_DEFAULTS["momentum"],
              batch_size: int = TOY_DEFAULTS["batch_size"],
              seed: int = 42, n_samples: int = TOY_DEFAULTS["n_samples"],
              dtype=np.float64, normalize_attention: bool = True,
              log=None) -> TrainResult:
    """Train a fresh model on the quadrant task; returns the loss curve.

    Raises :class:`TrainingDivergedError` naming the epoch if the loss goes
    NaN. ``normalize_attention=False`` runs the raw factorized-attention
    diagnostic.
    """
    if cfg.num_classes != 4 or cfg.in_channels != 1:
        raise ConfigError("quadrant task needs in_channels=1 and num_classes=4, "
                          f"got {cfg.in_channels}/{cfg.num_classes}")
    if epochs < 1 or batch_size < 1:
        raise ConfigError(f"need epochs >= 1 and batch_size >= 1, got {epochs}/{batch_size}")
    images, labels = quadrant_dataset(n_samples, seed, image_size=cfg.image_size, dtype=dtype)
    mp = init_model(cfg, seed=seed + 1, dtype=dtype)
    shuffle_rng = np.random.default_rng(seed + 2)
    opt = SGD(lr, momentum)
    named = mp.named_tensors()

    curve: list[EpochStats] = []
    with no_tracking():
        for epoch in range(1, epochs + 1):
            order = shuffle_rng.permutation(n_samples)
            batch_losses = []
            for start in range(0, n_samples, batch_size):
                idx = order[start:start + batch_size]
                batch = [Tensor(images[i]) for i in idx]
                loss, grads, _ = grad_model(batch, labels[idx], mp, cfg,
                                            normalize_attention=normalize_attention)
                if math.isnan(loss):
                    raise TrainingDivergedError(epoch)
                opt.step(named, grads)
                batch_losses.append(loss)
            acc, _ = evaluate(mp, cfg, images, labels,
                              normalize_attention=normalize_attention)
            stats = EpochStats(epoch=epoch, loss=float(np.mean(batch_losses)),
                               accuracy=acc)
            curve.append(stats)
            if log is not None:
                log(f"epoch {epoch:3d}  loss {stats.loss:.4f}  acc {stats.accuracy:.4f}")
    return TrainResult(curve=curve, final_accuracy=curve[-1].accuracy,
                       final_loss=curve[-1].loss, params=mp)
