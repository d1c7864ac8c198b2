"""Fixed-iteration timing harness for the four engines."""

from __future__ import annotations

import csv
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError
from .evaluation import fit_posterior
from .fitting import ENGINES, FitConfig
from .model import ReturnSeries
from .simulate import simulate

DEFAULT_ITERATIONS = 1000


@dataclass(frozen=True)
class BenchReport:
    engine: str
    sequence_length: int
    iterations: int
    estep_seconds: float
    mstep_seconds: float
    total_seconds: float
    particles: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def default_bench_series(length: int, seed: int = 0) -> ReturnSeries:
    """Lognormal-chain data (S^2 = 0.04): stays in floating range at long T."""
    return simulate("logn", 0.04, length, seed).series


def _time_once(series: ReturnSeries, engine: str, config: FitConfig) -> BenchReport:
    import time

    t0 = time.perf_counter()
    report, _ = fit_posterior(series, engine, config)
    total = time.perf_counter() - t0
    return BenchReport(engine, len(series), report.iterations, report.estep_seconds,
                       report.mstep_seconds, total, config.particles if engine in ("c2", "c4") else None)


def run_benchmark(engines, lengths, particles: int = 2, *, iterations: int = DEFAULT_ITERATIONS,
                  repetitions: int = 3, series: ReturnSeries | None = None, seed: int = 0,
                  warmup: bool = True) -> list[BenchReport]:
    """Time each engine on prefixes of one series, median of ``repetitions``.

    Every run does exactly ``iterations`` EM rounds.  A short warm-up fit
    (excluded from the result) triggers compilation first.
    """
    engines = list(engines)
    lengths = [int(n) for n in lengths]
    for e in engines:
        if e not in ENGINES:
            raise ConfigurationError(f"unknown engine {e!r}; expected one of {ENGINES}")
    if not lengths or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise InputError("lengths must be non-empty and strictly ascending")
    if repetitions < 1 or iterations < 1:
        raise ConfigurationError("repetitions and iterations must be positive")
    if series is None:
        series = default_bench_series(lengths[-1], seed)
    if len(series) < lengths[-1]:
        raise InputError(f"input has {len(series)} returns, the longest benchmark length is {lengths[-1]}")

    config = FitConfig(max_rounds=iterations, fixed_iterations=True, track_objective=False,
                       particles=particles, seed=seed)
    out = []
    for engine in engines:
        if warmup:
            fit_posterior(series.truncated(min(lengths[0], 1000)), engine, config.updated(max_rounds=2))
        for n in lengths:
            piece = series.truncated(n)
            runs = [_time_once(piece, engine, config) for _ in range(repetitions)]
            runs.sort(key=lambda r: r.total_seconds)
            out.append(runs[len(runs) // 2])
    return out


def growth_rate(reports: list[BenchReport], engine: str, field: str = "estep_seconds") -> float:
    """Least-squares slope of time against sequence length (seconds per step)."""
    pts = [(r.sequence_length, getattr(r, field)) for r in reports if r.engine == engine]
    if len(pts) < 2:
        raise InputError(f"need at least two lengths for engine {engine}")
    x, y = np.array(pts, dtype=float).T
    return float(np.polyfit(x, y, 1)[0])


def linearity_error(reports: list[BenchReport], engine: str, field: str = "total_seconds", *,
                    through_origin: bool = False) -> float:
    """Largest relative deviation from a least-squares line in T.

    By default the line has an intercept, which absorbs the per-run cost
    that does not depend on T (the M-step works on a scalar, set-up and
    allocation).  ``through_origin=True`` fits time = c * T instead.
    """
    pts = [(r.sequence_length, getattr(r, field)) for r in reports if r.engine == engine]
    if len(pts) < 2:
        raise InputError(f"need at least two lengths for engine {engine}")
    x, y = np.array(pts, dtype=float).T
    if through_origin:
        fitted = float(np.dot(x, y) / np.dot(x, x)) * x
    else:
        slope, intercept = np.polyfit(x, y, 1)
        fitted = intercept + slope * x
    return float(np.max(np.abs(y - fitted) / fitted))


def write_bench_csv(reports: list[BenchReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [f.name for f in fields(BenchReport)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.to_dict())
    return path


def median_time(samples) -> float:
    return statistics.median(samples)
