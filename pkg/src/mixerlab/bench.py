"""Runtime scaling measurements and log-log slope fits.

Times the operational forms only (streamed attention, feature-space
linear attention, sequential scans), never materialized T x T matrices.
For each sequence length the inputs are generated from the seed outside
the timed region, one warmup run is discarded, and the median of the
timed repeats is recorded. A least-squares line through (log T,
log time) then estimates the empirical complexity exponent: ~2 for the
quadratic attention path, ~1 for the linear-time paths.

Measurements are single-threaded by contract: operations run strictly
one after another on the calling thread. Peak-memory figures are coarse
analytic working-set estimates from the input shapes, recorded for
inspection only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from statistics import median
from typing import Callable, Sequence, Tuple

import numpy as np

from ._io import write_csv
from .attention import (
    _SOFTMAX_CHUNK,
    QkvTriple,
    draw_orthogonal_features,
    favor_attention,
    softmax_attention,
)
from .rng import derive_seed, make_rng
from .ssm import (
    BiMambaParams,
    HydraParams,
    ScanParams,
    bimamba_apply,
    hydra_apply,
    ssm_scan,
)

__all__ = [
    "OP_LABELS",
    "BenchSample",
    "ScalingReport",
    "time_operation",
    "fit_loglog_slope",
    "write_bench_csv",
    "write_scaling_csv",
]

OP_LABELS = (
    "softmax_attention",
    "favor_attention",
    "ssm_scan",
    "bimamba_scan",
    "hydra_scan",
)


@dataclass(frozen=True)
class BenchSample:
    """One timed point: median wall seconds for an op at one size.

    ``r_or_N`` is the feature count (favor), the state size (scans), or
    0 for ops with no such parameter. ``est_peak_bytes`` is the analytic
    working-set estimate.
    """

    op_label: str
    T: int
    d: int
    r_or_N: int
    wall_time: float
    repeats: int
    est_peak_bytes: int

    def __post_init__(self) -> None:
        if self.op_label not in OP_LABELS:
            raise ValueError(f"unknown op_label {self.op_label!r}")
        for name, lo in (("T", 1), ("d", 1), ("r_or_N", 0), ("repeats", 3), ("est_peak_bytes", 0)):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ValueError(f"{name} must be an integer >= {lo}, got {v!r}")
        if not (isinstance(self.wall_time, (int, float)) and self.wall_time > 0):
            raise ValueError(f"wall_time must be positive, got {self.wall_time!r}")


@dataclass(frozen=True)
class ScalingReport:
    """Fitted log-log line for one op across sequence lengths."""

    op_label: str
    fitted_slope: float
    r_squared: float
    samples: Tuple[BenchSample, ...]

    def __post_init__(self) -> None:
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValueError(f"r_squared must be in [0, 1], got {self.r_squared!r}")
        object.__setattr__(self, "samples", tuple(self.samples))


def _scan_params(rng: np.random.Generator, T: int, N: int) -> ScanParams:
    return ScanParams(
        a=rng.uniform(0.85, 0.999, T),
        b=rng.standard_normal((T, N)) / np.sqrt(N),
        c=rng.standard_normal((T, N)) / np.sqrt(N),
    )


def _setup(op_label: str, T: int, d: int, r_or_N: int, seed: int, stream: int):
    """Build seeded inputs and return (thunk, est_peak_bytes)."""
    rng = make_rng(seed, stream)
    if op_label in ("softmax_attention", "favor_attention"):
        scale = 1.0 / np.sqrt(d)
        qkv = QkvTriple(
            q=rng.standard_normal((T, d)) * scale,
            k=rng.standard_normal((T, d)) * scale,
            v=rng.standard_normal((T, d)),
        )
        if op_label == "softmax_attention":
            est = 8 * (4 * T * d + min(T, _SOFTMAX_CHUNK) * T)
            return (lambda: softmax_attention(qkv)), est
        omega = draw_orthogonal_features(d, r_or_N, derive_seed(seed, stream, 1))
        est = 8 * (4 * T * d + 2 * T * r_or_N + r_or_N * d + T)
        return (lambda: favor_attention(qkv, omega)), est
    N = r_or_N
    x = rng.standard_normal(T)
    if op_label == "ssm_scan":
        params = _scan_params(rng, T, N)
        est = 8 * (2 * T * N + 3 * T + N)
        return (lambda: ssm_scan(params, x)), est
    if op_label == "bimamba_scan":
        params = BiMambaParams(_scan_params(rng, T, N), _scan_params(rng, T, N))
        est = 8 * (4 * T * N + 6 * T + 2 * N)
        return (lambda: bimamba_apply(params, x)), est
    if op_label == "hydra_scan":
        params = HydraParams(
            _scan_params(rng, T, N), _scan_params(rng, T, N), rng.standard_normal(T)
        )
        est = 8 * (4 * T * N + 7 * T + 2 * N)
        return (lambda: hydra_apply(params, x)), est
    raise ValueError(f"unknown op_label {op_label!r}; expected one of {OP_LABELS}")


def time_operation(
    op_label: str,
    T_values: Sequence[int],
    d: int,
    r_or_N: int,
    repeats: int,
    seed: int,
) -> list:
    """Time one operation across ascending sequence lengths.

    Per length: seeded input generation (untimed), one warmup run
    (untimed), then ``repeats`` timed runs whose median is recorded.
    """
    if op_label not in OP_LABELS:
        raise ValueError(f"unknown op_label {op_label!r}; expected one of {OP_LABELS}")
    ts = [int(t) for t in T_values]
    if len(ts) < 3:
        raise ValueError(f"need at least 3 sequence lengths, got {len(ts)}")
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError(f"T_values must be strictly ascending, got {ts}")
    if not isinstance(repeats, int) or isinstance(repeats, bool) or repeats < 3:
        raise ValueError(f"repeats must be an integer >= 3, got {repeats!r}")
    samples = []
    for ti, T in enumerate(ts):
        thunk, est = _setup(op_label, T, d, r_or_N, seed, ti)
        thunk()
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            thunk()
            times.append(time.perf_counter() - start)
        samples.append(
            BenchSample(
                op_label=op_label,
                T=T,
                d=d,
                r_or_N=r_or_N,
                wall_time=float(median(times)),
                repeats=repeats,
                est_peak_bytes=est,
            )
        )
    return samples


def fit_loglog_slope(samples: Sequence[BenchSample]) -> ScalingReport:
    """Least-squares slope of log time against log T, with R^2.

    Needs at least 3 samples of one op with pairwise distinct T.
    """
    if len(samples) < 3:
        raise ValueError(f"need at least 3 samples, got {len(samples)}")
    labels = {s.op_label for s in samples}
    if len(labels) != 1:
        raise ValueError(f"samples mix op labels: {sorted(labels)}")
    ts = [s.T for s in samples]
    if len(set(ts)) != len(ts):
        raise ValueError("samples must have pairwise distinct T")
    x = np.log(np.array(ts, dtype=np.float64))
    y = np.log(np.array([s.wall_time for s in samples]))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    r2 = min(1.0, max(0.0, r2))
    return ScalingReport(
        op_label=samples[0].op_label,
        fitted_slope=float(slope),
        r_squared=r2,
        samples=tuple(samples),
    )


def write_bench_csv(path, samples: Sequence[BenchSample]) -> None:
    rows = [
        (s.op_label, s.T, s.d, s.r_or_N, s.wall_time, s.repeats, s.est_peak_bytes)
        for s in samples
    ]
    write_csv(
        path,
        ("op_label", "T", "d", "r_or_N", "median_seconds", "repeats", "est_peak_bytes"),
        rows,
    )


def write_scaling_csv(path, reports: Sequence[ScalingReport]) -> None:
    rows = [(r.op_label, r.fitted_slope, r.r_squared) for r in reports]
    write_csv(path, ("op_label", "slope", "r_squared"), rows)
