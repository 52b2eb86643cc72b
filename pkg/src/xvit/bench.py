"""Scaling benchmark: wall time and peak tensor bytes vs token count.

Measures the attention op in isolation. Peak memory comes from the
library's own allocation counter, not OS RSS: after warmup the counter's
high-water mark is reset to the current live bytes, the measured iterations
run, and the record stores the high-water mark minus that baseline -- the
bytes the mechanism itself allocated above the resident inputs and weights.
That makes the number deterministic, platform-independent, and an honest
stand-in for the mechanism's working set.

Fits are ordinary least squares on (log N, log value); the slope is the
scaling exponent (~1 linear, ~2 quadratic).
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .attention import init_attention_params, softmax_attention, xnorm_attention
from .errors import ConfigError, DataError
from .flops import attention_flops_softmax, attention_flops_xnorm
from .tensor import Tensor, alloc_stats, reset_peak

__all__ = [
    "BenchRecord", "ScalingFit", "MECHANISMS",
    "run_bench", "fit_scaling", "write_csv", "read_csv", "time_slack",
]

MECHANISMS = ("xnorm", "softmax")
CSV_HEADER = "mechanism,N,C,heads,batch,iters,warmup_iters,mean_ms,std_ms,peak_bytes,flops_est"

# environment override: widens TIME thresholds in scaling assertions (never
# memory); consumers must echo it, never apply it silently
TIME_SLACK_ENV = "XVIT_TIME_SLACK"


@dataclass
class BenchRecord:
    """One benchmark row; attribute order matches the CSV schema."""

    mechanism: str
    n: int
    c: int
    heads: int
    batch: int
    iters: int
    warmup_iters: int
    mean_ms: float
    std_ms: float
    peak_bytes: int
    flops_est: int
    times_ms: list[float] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.mean_ms <= 0 or self.peak_bytes <= 0 or self.std_ms < 0:
            raise DataError(f"BenchRecord needs mean_ms/peak_bytes > 0 and std_ms >= 0: {self}")

    @property
    def median_ms(self) -> float | None:
        if self.times_ms is None:
            return None
        return float(np.median(self.times_ms))


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    intercept: float
    r2: float
    n_points: int


def _mech_fn(mechanism: str):
    if mechanism == "xnorm":
        return xnorm_attention, attention_flops_xnorm
    if mechanism == "softmax":
        return softmax_attention, attention_flops_softmax
    raise ConfigError(f"unknown mechanism {mechanism!r}; choose from {MECHANISMS}")


def run_bench(mechanism: str, n_list, dim: int = 192, heads: int = 4,
              batch: int = 1, iters: int = 10, warmup: int = 3,
              seed: int = 0, dtype=np.float32, log=None) -> list[BenchRecord]:
    """One record per token count; inputs are fixed per N by the seed.

    Timing covers the attention calls only (input generation happens before
    the clock). On MemoryError the failing and all larger N are skipped and
    the partial results are returned; skips go to ``log`` when given.
    """
    fn, flops_fn = _mech_fn(mechanism)
    if iters < 1 or warmup < 0 or batch < 1:
        raise ConfigError(f"need iters >= 1, warmup >= 0, batch >= 1; "
                          f"got {iters}/{warmup}/{batch}")
    params = init_attention_params(dim, heads, np.random.default_rng(seed), dtype=dtype)
    records = []
    for n in n_list:
        rng = np.random.default_rng(seed + n)
        try:
            inputs = [Tensor(rng.standard_normal((n, dim)).astype(dtype))
                      for _ in range(batch)]
            for _ in range(warmup):
                for x in inputs:
                    fn(x, params)
            base = alloc_stats().live_bytes
            reset_peak()
            times = []
            for _ in range(iters):
                t0 = time.perf_counter()
                for x in inputs:
                    fn(x, params)
                times.append((time.perf_counter() - t0) * 1e3)
            peak = alloc_stats().peak_bytes - base
        except MemoryError:
            if log is not None:
                log(f"bench: out of memory at N={n} ({mechanism}); skipping larger N")
            break
        records.append(BenchRecord(
            mechanism=mechanism, n=int(n), c=dim, heads=heads, batch=batch,
            iters=iters, warmup_iters=warmup,
            mean_ms=float(np.mean(times)), std_ms=float(np.std(times)),
            peak_bytes=int(peak), flops_est=int(flops_fn(int(n), dim, heads)) * batch,
            times_ms=times))
    return records


def fit_scaling(records: list[BenchRecord], field_name: str) -> ScalingFit:
    """OLS of log(field) on log(N); the slope is the scaling exponent.

    Requires >= 4 distinct token counts spanning at least an 8x range and
    strictly positive field values.
    """
    if field_name not in ("mean_ms", "peak_bytes"):
        raise DataError(f"fit_scaling: field must be mean_ms or peak_bytes, got {field_name!r}")
    mechs = {r.mechanism for r in records}
    if len(mechs) > 1:
        raise DataError(f"fit_scaling: mixed mechanisms {sorted(mechs)}; fit one at a time")
    ns = np.array([r.n for r in records], dtype=np.float64)
    ys = np.array([getattr(r, field_name) for r in records], dtype=np.float64)
    distinct = np.unique(ns)
    if len(distinct) < 4 or distinct.max() < 8 * distinct.min():
        raise DataError("need >= 4 N values spanning an 8x range for fit "
                        f"(got {len(distinct)} values)")
    if np.any(ys <= 0):
        raise DataError(f"fit_scaling: non-positive {field_name} values")
    lx, ly = np.log(ns), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return ScalingFit(exponent=float(slope), intercept=float(intercept),
                      r2=min(max(r2, 0.0), 1.0), n_points=len(records))


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_csv(records: list[BenchRecord], path, comments: list[str] | None = None) -> None:
    """Fixed-schema CSV; optional '#' comment lines precede the header."""
    lines = [f"# {c}" for c in (comments or [])]
    lines.append(CSV_HEADER)
    for r in records:
        lines.append(",".join(_fmt(getattr(r, f.name)) for f in fields(BenchRecord)
                              if f.name != "times_ms"))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> list[BenchRecord]:
    """Parse a file written by :func:`write_csv` (comment lines skipped)."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    if not rows or ",".join(rows[0]) != CSV_HEADER:
        raise DataError(f"{path}: unexpected CSV header "
                        f"{','.join(rows[0]) if rows else '(empty)'!r}")
    records = []
    for row in rows[1:]:
        m, n, c, h, b, it, wu, mean_ms, std_ms, peak, fl = row
        records.append(BenchRecord(
            mechanism=m, n=int(n), c=int(c), heads=int(h), batch=int(b),
            iters=int(it), warmup_iters=int(wu), mean_ms=float(mean_ms),
            std_ms=float(std_ms), peak_bytes=int(peak), flops_est=int(fl)))
    return records


def time_slack() -> tuple[float, str | None]:
    """Parse the time-threshold widening override from the environment.

    Returns (slack, raw) where slack is 0.0 when unset. Callers must log the
    raw value whenever it is nonzero; it may widen time exponent thresholds
    only, never memory ones.
    """
    raw = os.environ.get(TIME_SLACK_ENV)
    if raw is None:
        return 0.0, None
    try:
        slack = float(raw)
    except ValueError:
        raise DataError(f"{TIME_SLACK_ENV} must be a float, got {raw!r}") from None
    if not (0.0 <= slack < 10.0) or math.isnan(slack):
        raise DataError(f"{TIME_SLACK_ENV} out of range: {raw!r}")
    return slack, raw
