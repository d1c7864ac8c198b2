"""Residual normalisation, one-sample KS testing and summary statistics.

A fitted posterior is checked by drawing one ``u_t`` per step from its
marginal and forming ``e_t = dy_t * sqrt(u_t)``; if the volatility estimate
is right these residuals are close to N(0, 1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, DomainError, InputError
from .fitting import FitConfig
from .laplace import GaussianPosterior, fit_logn_vi
from .mc import ParticleCloud, fit_mc
from .model import LatentPath, ReturnSeries
from .numerics import default_rng, sample_log_standard_gamma
from .vi import GammaPosterior, fit

DEFAULT_ALPHA = 0.05
MIN_KS_LENGTH = 8
RESIDUAL_ENGINES = ("raw", "oracle", "c1", "c2", "c3", "c4")


@dataclass(frozen=True)
class ResidualReport:
    instrument_id: str
    ks_statistic: float
    p_value: float
    passed: bool
    residual_count: int
    engine: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SeriesStats:
    sigma_r: float
    gamma_r: float
    sigma_v: float
    gamma_v: float
    length: int

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def _log_u_draw(posterior, n: int, rng: np.random.Generator) -> np.ndarray:
    if posterior is None:
        return np.zeros(n)
    if isinstance(posterior, LatentPath):
        return posterior.log_u.copy()
    if isinstance(posterior, GammaPosterior):
        out = np.empty(n)
        # shapes take only a handful of distinct values along the chain
        for shape in np.unique(posterior.a_u):
            idx = np.flatnonzero(posterior.a_u == shape)
            out[idx] = sample_log_standard_gamma(float(shape), rng, idx.size) - np.log(posterior.b_u[idx])
        return out
    if isinstance(posterior, GaussianPosterior):
        return posterior.mu + np.sqrt(posterior.sigma2) * rng.standard_normal(n)
    if isinstance(posterior, ParticleCloud):
        c = np.cumsum(posterior.weights, axis=1)
        u = rng.random(n) * c[:, -1]
        k = np.minimum((c < u[:, None]).sum(axis=1), posterior.n_particles - 1)
        return posterior.log_u[np.arange(n), k]
    raise InputError(f"unsupported posterior type {type(posterior).__name__}")


def _posterior_length(posterior) -> int | None:
    if posterior is None:
        return None
    if isinstance(posterior, (LatentPath, GaussianPosterior)):
        return len(posterior.log_u) if isinstance(posterior, LatentPath) else len(posterior)
    if isinstance(posterior, GammaPosterior):
        return posterior.a_u.size
    if isinstance(posterior, ParticleCloud):
        return len(posterior)
    return None


def draw_residuals(posterior, series: ReturnSeries, rng: np.random.Generator) -> np.ndarray:
    """e_t = dy_t * sqrt(u_t^s), one posterior draw of u_t per step.

    ``posterior`` may be a :class:`GammaPosterior`, :class:`GaussianPosterior`,
    smoothed :class:`ParticleCloud`, exact :class:`LatentPath`, or ``None``
    (u = 1, i.e. the raw returns).
    """
    n = len(series)
    m = _posterior_length(posterior)
    if m is not None and m != n:
        raise InputError(f"posterior covers {m} steps but the series has {n}")
    log_u = _log_u_draw(posterior, n, rng)
    return series.returns * np.exp(0.5 * log_u)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov
# ---------------------------------------------------------------------------

def kolmogorov_survival(lam: float) -> float:
    """P(K > lam) for the Kolmogorov distribution.

    Alternating series for large ``lam``; the Jacobi-transformed series
    converges faster for small ``lam``.
    """
    if lam <= 0.0:
        return 1.0
    if lam < 1.18:
        s = 0.0
        c = math.pi * math.pi / (8.0 * lam * lam)
        for k in range(1, 50):
            term = math.exp(-(2 * k - 1) ** 2 * c)
            s += term
            if term < 1e-17 * s:
                break
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / lam * s))
    s = 0.0
    for k in range(1, 100):
        term = math.exp(-2.0 * k * k * lam * lam)
        s += term if k % 2 else -term
        if term < 1e-300 or term < 1e-17 * abs(s):
            break
    return min(1.0, max(0.0, 2.0 * s))


def ks_statistic(sample) -> float:
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    cdf = ndtr(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def ks_test_standard_normal(sample, alpha: float = DEFAULT_ALPHA, *, instrument_id: str = "sample",
                            engine: str = "raw") -> ResidualReport:
    """Two-sided one-sample KS test against N(0, 1), asymptotic p-value."""
    x = np.asarray(sample, dtype=float)
    if x.ndim != 1 or x.size < MIN_KS_LENGTH:
        raise InputError(f"KS test needs at least {MIN_KS_LENGTH} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("KS sample contains non-finite values")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    d = ks_statistic(x)
    p = kolmogorov_survival(math.sqrt(x.size) * d)
    return ResidualReport(instrument_id, d, p, p > alpha, int(x.size), engine)


def qq_pairs(sample) -> np.ndarray:
    """(theoretical, empirical) quantile pairs for external Q-Q plotting."""
    from scipy.special import ndtri

    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    theo = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack([theo, x])


# ---------------------------------------------------------------------------
# summary statistics
# ---------------------------------------------------------------------------

def _std_kurt(x: np.ndarray, name: str) -> tuple[float, float]:
    if x.size < 4:
        raise DomainError(f"{name}: kurtosis needs at least 4 values, got {x.size}")
    c = x - x.mean()
    m2 = float(np.mean(c * c))
    if m2 == 0.0:
        raise DomainError(f"{name}: constant input has no kurtosis")
    return math.sqrt(m2), float(np.mean(c ** 4)) / (m2 * m2)


def series_stats(series: ReturnSeries) -> SeriesStats:
    """Population std and non-excess kurtosis of r and of v = diff(log r^2).

    Zero returns are skipped when forming v.  If v is too short or constant,
    its fields are NaN.
    """
    r = np.asarray(series.returns, dtype=float)
    sigma_r, gamma_r = _std_kurt(r, "returns")
    nz = r[r != 0.0]
    v = np.diff(np.log(nz * nz))
    try:
        sigma_v, gamma_v = _std_kurt(v, "v")
    except DomainError:
        sigma_v = float(np.std(v)) if v.size else float("nan")
        gamma_v = float("nan")
    return SeriesStats(sigma_r, gamma_r, sigma_v, gamma_v, int(r.size))


# ---------------------------------------------------------------------------
# pass rates
# ---------------------------------------------------------------------------

def fit_posterior(series: ReturnSeries, engine: str, config: FitConfig = FitConfig()):
    """Fit ``series`` with one engine; returns (report or None, posterior)."""
    if engine == "raw":
        return None, None
    if engine == "c1":
        return fit_logn_vi(series, config)
    if engine == "c2":
        return fit_mc(series, "logn", config)
    if engine == "c3":
        return fit(series, config)
    if engine == "c4":
        return fit_mc(series, "gam", config)
    raise ConfigurationError(f"unknown engine {engine!r}; expected one of {RESIDUAL_ENGINES}")


def residual_report(series: ReturnSeries, posterior, engine: str, rng: np.random.Generator,
                    alpha: float = DEFAULT_ALPHA) -> ResidualReport:
    e = draw_residuals(posterior, series, rng)
    return ks_test_standard_normal(e, alpha, instrument_id=series.instrument_id, engine=engine)


def residual_pass_rate(datasets: Iterable, engine: str, config: FitConfig = FitConfig(), *,
                       alpha: float = DEFAULT_ALPHA, seed: int = 0,
                       posteriors: list | None = None) -> tuple[float, list[ResidualReport]]:
    """Fraction of series whose residuals pass the KS test at ``alpha``.

    ``datasets`` holds ReturnSeries or SyntheticDataset objects; the
    ``oracle`` engine uses the simulator's true latents.  Precomputed
    ``posteriors`` (aligned with ``datasets``) skip the fitting step.
    Residual draws use one generator seeded with ``seed``.
    """
    if engine not in RESIDUAL_ENGINES:
        raise ConfigurationError(f"unknown engine {engine!r}; expected one of {RESIDUAL_ENGINES}")
    items = list(datasets)
    if not items:
        raise InputError("no datasets given")
    if posteriors is not None and len(posteriors) != len(items):
        raise InputError("posteriors must align with datasets")
    rng = default_rng(seed)
    reports = []
    for k, item in enumerate(items):
        series = item if isinstance(item, ReturnSeries) else item.series
        if posteriors is not None:
            post = posteriors[k]
            if post is None and engine not in ("raw",):
                raise InputError(f"missing fit for {series.instrument_id!r}")
        elif engine == "oracle":
            if isinstance(item, ReturnSeries):
                raise InputError("the oracle engine needs simulated datasets with latents")
            post = item.latents
        else:
            _, post = fit_posterior(series, engine, config)
        reports.append(residual_report(series, post, engine, rng, alpha))
    rate = sum(r.passed for r in reports) / len(reports)
    return rate, reports
