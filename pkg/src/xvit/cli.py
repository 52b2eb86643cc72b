"""Command-line entry point.

Subcommands: bench, gradcheck, count, assoc, train-toy, plot. Machine
friendly by construction: JSON for reports, CSV for series, and a
``<output>.manifest.json`` next to every file written. Exit codes are a
stable contract: 0 success, 1 check/assertion failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import bench as bench_mod
from .attention import assoc_check
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (CheckpointError, ConfigError, DataError,
                     TrainingDivergedError, XVitError)
from .gradcheck import gradcheck
from .model import (attention_flops_total, count_flops, count_params,
                    get_config)
from .tensor import Tensor
from .train import TOY_DEFAULTS, evaluate, read_curve_csv, train_toy, write_curve_csv

OK, CHECK_FAILURE, USAGE_ERROR = 0, 1, 2


def _eprint(*a) -> None:
    print(*a, file=sys.stderr)


def _manifest(out_path, args: argparse.Namespace, **extra) -> None:
    """Write <out_path>.manifest.json describing how the file was produced."""
    flags = {k: (str(v) if isinstance(v, Path) else v)
             for k, v in vars(args).items() if k != "func"}
    doc = {
        "subcommand": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "dtype": getattr(args, "dtype", "f64"),
        "deterministic": getattr(args, "deterministic", True),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        **extra,
    }
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def _np_dtype(args) -> type:
    return np.float32 if args.dtype == "f32" else np.float64


def _parse_n_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise ConfigError(f"--n-list must be comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"--n-list needs positive token counts, got {text!r}")
    if values != sorted(values):
        raise ConfigError(f"--n-list must be ascending, got {text!r}")
    return values


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    n_list = _parse_n_list(args.n_list)
    mechanisms = list(bench_mod.MECHANISMS) if args.mechanism == "both" else [args.mechanism]
    slack, slack_raw = bench_mod.time_slack()
    comments = []
    if slack_raw is not None:
        note = f"{bench_mod.TIME_SLACK_ENV}={slack_raw} (time thresholds widened by {slack})"
        _eprint(f"bench: {note}")
        comments.append(note)

    records = []
    for mech in mechanisms:
        records += bench_mod.run_bench(
            mech, n_list, dim=args.dim, heads=args.heads, batch=args.batch,
            iters=args.iters, warmup=args.warmup, seed=args.seed,
            dtype=_np_dtype(args), log=_eprint)
    bench_mod.write_csv(records, args.out, comments=comments or None)
    _manifest(args.out, args, time_slack=slack_raw)
    for mech in mechanisms:
        mech_records = [r for r in records if r.mechanism == mech]
        medians = [r.median_ms for r in mech_records if r.median_ms is not None]
        if medians:
            _eprint(f"bench: {mech} median_ms per N: " +
                    " ".join(f"{m:.6g}" for m in medians))
    if not args.no_fit:
        for mech in mechanisms:
            mech_records = [r for r in records if r.mechanism == mech]
            for field_name in ("mean_ms", "peak_bytes"):
                fit = bench_mod.fit_scaling(mech_records, field_name)
                print(f"{mech} {field_name} {fit.exponent:.6g} {fit.r2:.6g}")
    if args.plot:
        from .plotting import plot_bench_records
        out = Path(args.out)
        for p in plot_bench_records(records, out.parent, stem=out.stem):
            _manifest(p, args)
            _eprint(f"bench: wrote {p}")
    return OK


def cmd_gradcheck(args) -> int:
    cfg = get_config(args.config)
    report = gradcheck(cfg, seed=args.seed, tolerance=args.tol,
                       samples_per_tensor=args.samples)
    text = json.dumps(report.as_dict(), indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
        _manifest(args.out, args)
    if not report.passed:
        _eprint(f"gradcheck failed: worst parameter '{report.worst_param}' "
                f"rel err {report.max_rel_err:.3e} > tol {report.tolerance:g}")
        return CHECK_FAILURE
    return OK


def cmd_count(args) -> int:
    cfg = get_config(args.config)
    size = args.image_size if args.image_size else cfg.image_size
    side = size // cfg.patch_stride
    doc = {
        "config": args.config,
        "image_size": size,
        "n_tokens": side * side,
        "params": count_params(cfg),
        "flops_xnorm": count_flops(cfg, image_size=size, mechanism="xnorm"),
        "flops_softmax": count_flops(cfg, image_size=size, mechanism="softmax"),
        "flops_xnorm_attn": attention_flops_total(cfg, image_size=size, mechanism="xnorm"),
        "flops_softmax_attn": attention_flops_total(cfg, image_size=size, mechanism="softmax"),
    }
    if args.format == "json":
        print(json.dumps(doc, indent=2))
    else:
        print(f"config          {doc['config']} @ {size}px  ({doc['n_tokens']} tokens)")
        print(f"params          {doc['params']:,}")
        print(f"flops (model)   {doc['flops_xnorm']:,}  [softmax-equivalent: {doc['flops_softmax']:,}]")
        print(f"flops (attn)    {doc['flops_xnorm_attn']:,}  [softmax-equivalent: {doc['flops_softmax_attn']:,}]")
    return OK


def cmd_assoc(args) -> int:
    dtype = _np_dtype(args)
    threshold = 1e-4 if args.dtype == "f32" else 1e-9
    rng = np.random.default_rng(args.seed)

    def mk():
        return Tensor(rng.uniform(-1.0, 1.0, size=(args.n, args.dim)).astype(dtype))

    diff = assoc_check(mk(), mk(), mk())
    print(f"max |(QK^T)V - Q(K^T V)| = {diff:.3e}  "
          f"(threshold {threshold:g}, {args.dtype}, N={args.n}, d={args.dim})")
    return OK if diff <= threshold else CHECK_FAILURE


def cmd_train_toy(args) -> int:
    cfg = get_config(args.config)
    try:
        result = train_toy(cfg, epochs=args.epochs, lr=args.lr,
                           momentum=args.momentum, batch_size=args.batch_size,
                           seed=args.seed, n_samples=args.samples,
                           dtype=_np_dtype(args),
                           normalize_attention=not args.raw_linear,
                           log=_eprint)
    except TrainingDivergedError as exc:
        _eprint(f"train-toy: diverged at epoch {exc.epoch}")
        return CHECK_FAILURE
    if args.out:
        write_curve_csv(result.curve, args.out)
        _manifest(args.out, args)
        if args.plot:
            from .plotting import plot_train_curve
            p = Path(args.out).with_suffix(".png")
            plot_train_curve(result.curve, p)
            _manifest(p, args)
            _eprint(f"train-toy: wrote {p}")
    if args.save:
        save_checkpoint(result.params, cfg, args.save)
        _manifest(args.save, args)
    print(f"final_accuracy {result.final_accuracy:.6g}")
    return OK if result.final_accuracy >= args.min_acc else CHECK_FAILURE


def cmd_plot(args) -> int:
    if not args.bench and not args.train:
        raise ConfigError("plot: give --bench and/or --train CSV inputs")
    from .plotting import plot_bench_records, plot_train_curve
    written = []
    if args.bench:
        records = bench_mod.read_csv(args.bench)
        written += plot_bench_records(records, args.out_dir, stem=Path(args.bench).stem)
    if args.train:
        curve = read_curve_csv(args.train)
        written.append(plot_train_curve(curve, Path(args.out_dir) /
                                        (Path(args.train).stem + ".png")))
    for p in written:
        _manifest(p, args)
        print(p)
    return OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_dtype(p: argparse.ArgumentParser, default: str) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--f32", dest="dtype", action="store_const", const="f32",
                   help="use float32 tensors")
    g.add_argument("--f64", dest="dtype", action="store_const", const="f64",
                   help="use float64 tensors")
    p.set_defaults(dtype=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xvit",
        description="Linear (softmax-free) attention toolkit: benchmarks, "
                    "gradient checks, counters, and toy training.")
    parser.add_argument("--version", action="version", version=f"xvit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="time/memory scaling sweep over token counts")
    p.add_argument("--mechanism", choices=("xnorm", "softmax", "both"), default="both")
    p.add_argument("--n-list", default="256,512,1024,2048,4096",
                   help="ascending comma-separated token counts")
    p.add_argument("--dim", type=int, default=192)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench.csv", help="CSV output path")
    p.add_argument("--no-fit", action="store_true",
                   help="skip the log-log exponent fit (allows < 4 N values)")
    p.add_argument("--plot", action="store_true",
                   help="render scaling figures next to the CSV")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=False,
                   help="recorded in the manifest; timing runs default off")
    _add_dtype(p, "f32")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference audit of all gradients")
    p.add_argument("--config", default="nano")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=200,
                   help="sampled entries per parameter tensor")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_gradcheck, dtype="f64")  # gradcheck is float64 only

    p = sub.add_parser("count", help="parameter and FLOP counters")
    p.add_argument("--config", default="nano")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--format", choices=("json", "text"), default="text")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_count, dtype="f64")

    p = sub.add_parser("assoc", help="matmul associativity diagnostic")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    _add_dtype(p, "f64")
    p.set_defaults(func=cmd_assoc)

    p = sub.add_parser("train-toy", help="train a toy model on the quadrant task")
    p.add_argument("--config", default="nano")
    p.add_argument("--epochs", type=int, default=TOY_DEFAULTS["epochs"])
    p.add_argument("--lr", type=float, default=TOY_DEFAULTS["lr"])
    p.add_argument("--momentum", type=float, default=TOY_DEFAULTS["momentum"])
    p.add_argument("--batch-size", type=int, default=TOY_DEFAULTS["batch_size"])
    p.add_argument("--samples", type=int, default=TOY_DEFAULTS["n_samples"])
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="curve.csv", help="per-epoch CSV output")
    p.add_argument("--save", default=None, help="write a checkpoint here")
    p.add_argument("--min-acc", type=float, default=0.0,
                   help="exit 1 unless final accuracy reaches this")
    p.add_argument("--plot", action="store_true",
                   help="render the loss/accuracy curve next to the CSV")
    p.add_argument("--raw-linear", action="store_true",
                   help="diagnostic: run attention without the normalizations")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    _add_dtype(p, "f64")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("plot", help="render figures from existing CSV outputs")
    p.add_argument("--bench", default=None, help="bench CSV to plot")
    p.add_argument("--train", default=None, help="training-curve CSV to plot")
    p.add_argument("--out-dir", default="figures")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_plot, dtype="f64", seed=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError) as exc:
        _eprint(f"error: {exc}")
        return USAGE_ERROR
    except XVitError as exc:
        _eprint(f"error: {exc}")
        return CHECK_FAILURE


if __name__ == "__main__":
    sys.exit(main())
