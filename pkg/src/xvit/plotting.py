"""Figure rendering for the benchmark and training CSV outputs.

Everything here consumes the delimited outputs (or the records behind
them) and writes PNG files next to them; nothing in the measurement or
training paths depends on matplotlib.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchRecord, fit_scaling
from .errors import DataError

__all__ = ["plot_bench_records", "plot_train_curve"]

_FIELD_LABELS = {"peak_bytes": "peak tensor bytes", "mean_ms": "mean time per iteration [ms]"}
_STYLE = {"xnorm": dict(color="tab:blue", marker="o"),
          "softmax": dict(color="tab:red", marker="s")}


def _scaling_axes(ax, records: list[BenchRecord], field_name: str) -> None:
    by_mech: dict[str, list[BenchRecord]] = {}
    for r in records:
        by_mech.setdefault(r.mechanism, []).append(r)
    for mech, recs in sorted(by_mech.items()):
        recs = sorted(recs, key=lambda r: r.n)
        ns = np.array([r.n for r in recs], dtype=float)
        ys = np.array([getattr(r, field_name) for r in recs], dtype=float)
        style = _STYLE.get(mech, {})
        label = mech
        try:
            fit = fit_scaling(recs, field_name)
            xs = np.array([ns.min(), ns.max()])
            ax.plot(xs, np.exp(fit.intercept) * xs**fit.exponent,
                    linestyle="--", linewidth=1, alpha=0.7,
                    color=style.get("color"))
            label = f"{mech} (exp {fit.exponent:.2f}, r$^2$ {fit.r2:.3f})"
        except DataError:
            pass  # too few points for a fit line; plot the data anyway
        ax.plot(ns, ys, linestyle="-", label=label, **style)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("tokens N")
    ax.set_ylabel(_FIELD_LABELS[field_name])
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()


def plot_bench_records(records: list[BenchRecord], out_dir, stem: str = "bench") -> list[Path]:
    """Two log-log figures (memory, time) with fitted power laws; returns paths."""
    if not records:
        raise DataError("plot_bench_records: no records to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for field_name, suffix in (("peak_bytes", "memory"), ("mean_ms", "time")):
        fig, ax = plt.subplots(figsize=(6, 4))
        _scaling_axes(ax, records, field_name)
        ax.set_title(f"attention scaling: {_FIELD_LABELS[field_name]}")
        fig.tight_layout()
        path = out_dir / f"{stem}_{suffix}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def plot_train_curve(rows, path) -> Path:
    """Loss (left axis) and accuracy (right axis) vs epoch.

    ``rows`` is a sequence of (epoch, loss, accuracy) triples or objects
    with those attributes.
    """
    def unpack(row):
        if hasattr(row, "epoch"):
            return row.epoch, row.loss, row.accuracy
        return row

    triples = [unpack(r) for r in rows]
    if not triples:
        raise DataError("plot_train_curve: empty curve")
    epochs = [t[0] for t in triples]
    losses = [t[1] for t in triples]
    accs = [t[2] for t in triples]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color="tab:blue", marker="o", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(epochs, accs, color="tab:green", marker="s", label="accuracy")
    ax2.set_ylabel("train accuracy", color="tab:green")
    ax2.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
