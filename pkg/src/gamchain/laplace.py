"""Laplace/mean-field EM for the lognormal chain (C1).

Each node ``l_t = log u_t`` gets a Gaussian factor N(mu_t, sigma2_t).  With
the neighbours held at their means, the local log-posterior

    l/2 - (dy^2 / 2) e^l - sum_nb (l - mu_nb)^2 / (2 S^2)

has its mode in closed form through the Lambert W function; sigma2_t is the
inverse curvature at that mode.  Interior nodes have two prior factors,
boundary nodes one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InputError, NumericalError
from .fitting import FitConfig, FitReport, relative_change
from .model import LogNParams, ReturnSeries
from .numerics import _lambert_w0
from .vi import floored_squares

_EXP_SAFE = 700.0


@dataclass
class GaussianPosterior:
    mu: np.ndarray
    sigma2: np.ndarray

    def validate(self) -> None:
        if self.mu.shape != self.sigma2.shape or self.mu.ndim != 1:
            raise InputError("mu and sigma2 must be 1-d arrays of equal length")
        if not np.all(np.isfinite(self.mu)):
            raise NumericalError("posterior means are not finite")
        if not (np.all(np.isfinite(self.sigma2)) and np.all(self.sigma2 > 0.0)):
            raise NumericalError("posterior variances must be positive and finite")

    def copy(self) -> "GaussianPosterior":
        return GaussianPosterior(self.mu.copy(), self.sigma2.copy())

    def __len__(self) -> int:
        return self.mu.size


def init_gaussian(series: ReturnSeries) -> GaussianPosterior:
    """mu_t = log(1 / max(dy_t^2, eps)), sigma2_t = 1."""
    y2 = floored_squares(series.returns)
    return GaussianPosterior(-np.log(y2), np.ones(y2.size))


@njit(cache=True)
def _w_of_exp(log_x):
    """W(exp(log_x)) without forming exp(log_x) when it would overflow."""
    if log_x < _EXP_SAFE:
        return _lambert_w0(math.exp(log_x))
    w = log_x - math.log(log_x)
    for _ in range(50):
        dw = (w + math.log(w) - log_x) / (1.0 + 1.0 / w)
        w -= dw
        if abs(dw) <= 1e-14 * (1.0 + abs(w)):
            break
    return w


@njit(cache=True)
def _node(mu, y2, s2, t):
    n = mu.size
    if n == 1:
        return 0.0, s2  # unreachable for valid series
    if t == 0 or t == n - 1:
        centre = mu[1] if t == 0 else mu[n - 2]
        shift = 0.5 * s2
        prior_prec = 2.0 / s2
    else:
        centre = 0.5 * (mu[t - 1] + mu[t + 1])
        shift = 0.25 * s2
        prior_prec = 4.0 / s2
    if y2[t] == 0.0:
        m = shift + centre
    else:
        log_arg = math.log(shift * y2[t]) + shift + centre
        m = shift + centre - _w_of_exp(log_arg)
    return m, 2.0 / (math.exp(m) * y2[t] + prior_prec)


@njit(cache=True)
def _sweep(mu, sigma2, y2, s2, damping, sweeps):
    n = mu.size
    for _ in range(sweeps):
        for t in range(n):
            m, _v = _node(mu, y2, s2, t)
            m = (1.0 - damping) * mu[t] + damping * m
            mu[t] = m
            sigma2[t] = 2.0 / (math.exp(m) * y2[t] + (2.0 if (t == 0 or t == n - 1) else 4.0) / s2)
            if not math.isfinite(m):
                return t
    return -1


def laplace_update(posterior: GaussianPosterior, series: ReturnSeries, params: LogNParams,
                   t: int) -> tuple[float, float]:
    """New (mu_t, sigma2_t) for one node, neighbours held fixed."""
    n = len(posterior)
    if not isinstance(t, (int, np.integer)) or not 0 <= t < n:
        raise InputError(f"index {t!r} out of range for length {n}")
    if len(series) != n:
        raise InputError("posterior and series lengths differ")
    y2 = np.asarray(series.returns, dtype=float) ** 2
    m, v = _node(posterior.mu, y2, params.step_variance, int(t))
    return float(m), float(v)


def laplace_estep(posterior: GaussianPosterior, series: ReturnSeries, params: LogNParams,
                  sweeps: int = 1, damping: float = 1.0) -> GaussianPosterior:
    """In-order sweeps of :func:`laplace_update`; returns a new posterior."""
    out = posterior.copy()
    y2 = np.asarray(series.returns, dtype=float) ** 2
    failed = _sweep(out.mu, out.sigma2, y2, params.step_variance, damping, sweeps)
    if failed >= 0:
        raise NumericalError(f"mu diverged at t={failed} (S^2={params.step_variance:.6g})")
    return out


def logn_vi_mstep(posterior: GaussianPosterior, length: int | None = None) -> LogNParams:
    """S^2 = (1/T) sum_{t>=2} (mu_t^2 + s_t^2 - 2 mu_t mu_{t-1} + mu_{t-1}^2 + s_{t-1}^2)."""
    mu, s2 = posterior.mu, posterior.sigma2
    T = mu.size
    if length is not None and length != T:
        raise InputError(f"posterior has length {T}, expected {length}")
    d = np.diff(mu)
    total = float(np.sum(d * d) + np.sum(s2[1:] + s2[:-1]))
    return LogNParams(total / T)


def fit_logn_vi(series: ReturnSeries, config: FitConfig = FitConfig()
                ) -> tuple[FitReport, GaussianPosterior]:
    """EM for S^2 with full Laplace sweeps as the E-step."""
    posterior = init_gaussian(series)
    params = LogNParams(config.s2_init)
    report = FitReport(engine="c1", params=params)
    for round_no in range(config.max_rounds):
        t0 = time.perf_counter()
        try:
            posterior = laplace_estep(posterior, series, params, config.sweeps, config.damping)
        except NumericalError as exc:
            raise NumericalError(f"round {round_no + 1}: {exc}") from None
        t1 = time.perf_counter()
        new = logn_vi_mstep(posterior, len(series))
        t2 = time.perf_counter()
        report.estep_seconds += t1 - t0
        report.mstep_seconds += t2 - t1
        report.iterations += 1
        report.a_trace.append(new.step_variance)
        change = relative_change(new.step_variance, params.step_variance)
        params = new
        if not config.fixed_iterations and change < config.tol_a:
            report.converged = True
            break
    posterior.validate()
    report.params = params
    return report, posterior
