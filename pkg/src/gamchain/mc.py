"""Particle-smoothing E-steps for the gamma chain (C4) and lognormal chain (C2).

Forward pass: bootstrap filter with prior proposals, log-domain weights and
systematic resampling whenever the effective sample size drops below N/2.
Backward pass: backward simulation of M trajectories.  At every step the
categorical backward weights are kept and averaged over trajectories, which
gives Rao-Blackwellised smoothed marginal weights; at the final step they are
exactly the filter weights.

All random numbers are drawn in numpy from the caller's generator before the
compiled kernels run, so results are reproducible from the seed.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .errors import ConfigurationError, InputError, NumericalError
from .fitting import FitConfig, FitReport, relative_change
from .model import GamChainParams, LogNParams, ReturnSeries
from .numerics import default_rng, sample_log_standard_gamma
from .vi import Expectations, floored_squares, mstep

_LOG_2PI = math.log(2.0 * math.pi)
S2_FLOOR = 1e-12
_EXP_CAP = 700.0


@dataclass
class ParticleCloud:
    """Particles on the log scale with per-step normalised weights.

    ``log_v`` holds the dummy-node particles of the gamma chain (T-1 rows)
    and is ``None`` for the lognormal chain.  ``kind`` is ``"u-v-chain"`` or
    ``"u-chain"``; smoothed clouds carry smoothed marginal weights.
    """

    log_u: np.ndarray
    weights: np.ndarray
    kind: str
    log_v: np.ndarray | None = None
    weights_v: np.ndarray | None = None
    log_likelihood: float = float("nan")
    log_weights: np.ndarray | None = None  # filter clouds only, avoids underflow

    def __post_init__(self):
        if self.log_u.shape != self.weights.shape:
            raise InputError("particle and weight arrays differ in shape")

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_u)

    @property
    def n_particles(self) -> int:
        return self.log_u.shape[1]

    def __len__(self) -> int:
        return self.log_u.shape[0]

    def ess(self) -> np.ndarray:
        return 1.0 / np.sum(self.weights ** 2, axis=1)


@dataclass
class LogNExpectations:
    mean_log_u: np.ndarray   # E[log u_t], length T
    sq_log_u: np.ndarray     # E[log^2 u_t], length T
    cross_log_u: np.ndarray  # E[log u_t log u_{t-1}], length T-1 (t = 2..T)


def _log_weights(cloud: ParticleCloud) -> np.ndarray:
    if cloud.log_weights is not None:
        return cloud.log_weights
    with np.errstate(divide="ignore"):
        return np.log(cloud.weights)


def _smoothed_mean(sw: np.ndarray, log_x: np.ndarray) -> np.ndarray:
    """sum_i sw_i exp(log_x_i) per row, formed in log space."""
    with np.errstate(divide="ignore"):
        return np.exp(logsumexp(log_x + np.log(sw), axis=1))


def _check_particles(n: int) -> None:
    if n < 2:
        raise ConfigurationError(f"at least 2 particles are required, got {n}")


# ---------------------------------------------------------------------------
# compiled helpers
# ---------------------------------------------------------------------------

@njit(cache=True)
def _normalise(logw, out, logout):
    m = -np.inf
    for i in range(logw.size):
        if logw[i] > m:
            m = logw[i]
    if not np.isfinite(m):
        return -np.inf
    s = 0.0
    for i in range(logw.size):
        out[i] = math.exp(logw[i] - m)
        s += out[i]
    lse = m + math.log(s)
    for i in range(logw.size):
        out[i] /= s
        logout[i] = logw[i] - lse
    return lse


@njit(cache=True)
def _systematic(w, u, idx):
    n = w.size
    c = w[0]
    j = 0
    for i in range(n):
        pos = (i + u) / n
        while pos > c and j < n - 1:
            j += 1
            c += w[j]
        idx[i] = j


@njit(cache=True)
def _log_lik(lu, half_y2):
    # 0.5 log u - u dy^2 / 2; past e^700 the term continues as a finite,
    # decreasing function so hopeless particles keep their ordering instead
    # of all hitting -inf
    x = lu + math.log(half_y2)
    if x > _EXP_CAP:
        return -math.exp(_EXP_CAP) - (x - _EXP_CAP)
    return 0.5 * lu - math.exp(x)


@njit(cache=True)
def _categorical(p, u):
    c = 0.0
    for i in range(p.size):
        c += p[i]
        if u < c:
            return i
    return p.size - 1


# ---------------------------------------------------------------------------
# gamma chain
# ---------------------------------------------------------------------------

@njit(cache=True)
def _forward_gam(half_y2, lg_init, lg_v, lg_u, unif, log_u, log_v, weights, log_w):
    T, N = log_u.shape
    logw = np.zeros(N)
    idx = np.empty(N, np.int64)
    loglik = 0.0
    for i in range(N):
        log_u[0, i] = lg_init[i] - math.log(half_y2[0])
        # proposal Ga(1/2, dy^2/2) is the one-observation posterior under a
        # 1/u prior; weighting by u turns it into the flat-prior posterior
        logw[i] = log_u[0, i]
    _normalise(logw, weights[0], log_w[0])
    for t in range(T - 1):
        for i in range(N):
            log_v[t, i] = lg_v[t, i] - log_u[t, i]
        ess = 0.0
        for i in range(N):
            ess += weights[t, i] * weights[t, i]
        ess = 1.0 / ess
        if ess < 0.5 * N:
            _systematic(weights[t], unif[t], idx)
            for i in range(N):
                logw[i] = -math.log(N)
        else:
            for i in range(N):
                idx[i] = i
                logw[i] = log_w[t, i]
        for i in range(N):
            lu = lg_u[t, i] - log_v[t, idx[i]]
            log_u[t + 1, i] = lu
            logw[i] += _log_lik(lu, half_y2[t + 1])
        inc = _normalise(logw, weights[t + 1], log_w[t + 1])
        if not np.isfinite(inc):
            return t + 1, loglik
        loglik += inc - 0.5 * _LOG_2PI
    return -1, loglik


@njit(cache=True)
def _backward_gam(log_u, log_v, weights, log_w, a, unif, sw_u, sw_v):
    T, N = log_u.shape
    M = unif.shape[0]
    logp = np.empty(N)
    p = np.empty(N)
    scratch = np.empty(N)
    inv_m = 1.0 / M
    for m in range(M):
        k = _categorical(weights[T - 1], unif[m, 0])
        for i in range(N):
            sw_u[T - 1, i] += weights[T - 1, i] * inv_m
        lu_next = log_u[T - 1, k]
        for t in range(T - 2, -1, -1):
            # v_t given the chosen u_{t+1}
            for i in range(N):
                logp[i] = log_w[t, i] + a * log_v[t, i] - math.exp(log_v[t, i] + lu_next)
            if not np.isfinite(_normalise(logp, p, scratch)):
                return t
            j = _categorical(p, unif[m, 2 * (T - 1 - t) - 1])
            for i in range(N):
                sw_v[t, i] += p[i] * inv_m
            lv = log_v[t, j]
            # u_t given the chosen v_t
            for i in range(N):
                logp[i] = log_w[t, i] + a * log_u[t, i] - math.exp(log_u[t, i] + lv)
            if not np.isfinite(_normalise(logp, p, scratch)):
                return t
            k = _categorical(p, unif[m, 2 * (T - 1 - t)])
            for i in range(N):
                sw_u[t, i] += p[i] * inv_m
            lu_next = log_u[t, k]
    return -1


def forward_filter_gam(series: ReturnSeries, params: GamChainParams, n_particles: int,
                       rng: np.random.Generator) -> ParticleCloud:
    """Bootstrap filter over (u_t, v_t) pairs; u_1 ~ Ga(1/2, dy_1^2/2) weighted by u_1."""
    _check_particles(n_particles)
    T, N, a = len(series), n_particles, params.shape_a
    half_y2 = 0.5 * floored_squares(series.returns)
    lg_init = sample_log_standard_gamma(0.5, rng, N)
    lg_v = sample_log_standard_gamma(a, rng, (T - 1, N))
    lg_u = sample_log_standard_gamma(a, rng, (T - 1, N))
    unif = rng.random(T)
    log_u = np.empty((T, N))
    log_v = np.empty((T - 1, N))
    weights = np.empty((T, N))
    log_w = np.empty((T, N))
    failed, loglik = _forward_gam(half_y2, lg_init, lg_v, lg_u, unif, log_u, log_v, weights, log_w)
    if failed >= 0:
        raise NumericalError(f"all particle weights vanished at t={failed}")
    return ParticleCloud(log_u, weights, "u-v-chain", log_v, None, loglik, log_w)


def backward_smooth_gam(cloud: ParticleCloud, params: GamChainParams, rng: np.random.Generator,
                        n_trajectories: int | None = None) -> tuple[Expectations, ParticleCloud]:
    """Backward simulation through the u/v chain.

    Returns the expectation tables for the M-step and a cloud carrying the
    smoothed marginal weights of u (``weights``) and v (``weights_v``).
    """
    if cloud.kind != "u-v-chain" or cloud.log_v is None:
        raise InputError("backward_smooth_gam needs a cloud from forward_filter_gam")
    T, N = cloud.log_u.shape
    M = N if n_trajectories is None else int(n_trajectories)
    if M < 1:
        raise ConfigurationError("need at least one backward trajectory")
    unif = rng.random((M, 2 * T))
    sw_u = np.zeros((T, N))
    sw_v = np.zeros((max(T - 1, 0), N))
    failed = _backward_gam(cloud.log_u, cloud.log_v, cloud.weights, _log_weights(cloud), params.shape_a, unif, sw_u, sw_v)
    if failed >= 0:
        raise NumericalError(f"backward weights degenerated at t={failed}: all candidate "
                             "transition densities vanished")
    ex = Expectations(
        mean_u=_smoothed_mean(sw_u, cloud.log_u),
        log_u=np.sum(sw_u * cloud.log_u, axis=1),
        log_v=np.sum(sw_v * cloud.log_v, axis=1),
    )
    smoothed = ParticleCloud(cloud.log_u, sw_u, "u-v-chain", cloud.log_v, sw_v, cloud.log_likelihood)
    return ex, smoothed


# ---------------------------------------------------------------------------
# lognormal chain
# ---------------------------------------------------------------------------

@njit(cache=True)
def _forward_logn(half_y2, init, z, s, unif, log_u, weights, log_w):
    T, N = log_u.shape
    logw = np.empty(N)
    idx = np.empty(N, np.int64)
    loglik = 0.0
    for i in range(N):
        lu = init[i]
        log_u[0, i] = lu
        logw[i] = _log_lik(lu, half_y2[0])
    inc = _normalise(logw, weights[0], log_w[0])
    if not np.isfinite(inc):
        return 0, loglik
    loglik += inc - math.log(N) - 0.5 * _LOG_2PI
    for t in range(T - 1):
        ess = 0.0
        for i in range(N):
            ess += weights[t, i] * weights[t, i]
        ess = 1.0 / ess
        if ess < 0.5 * N:
            _systematic(weights[t], unif[t], idx)
            for i in range(N):
                logw[i] = -math.log(N)
        else:
            for i in range(N):
                idx[i] = i
                logw[i] = log_w[t, i]
        for i in range(N):
            lu = log_u[t, idx[i]] + s * z[t, i]
            log_u[t + 1, i] = lu
            logw[i] += _log_lik(lu, half_y2[t + 1])
        inc = _normalise(logw, weights[t + 1], log_w[t + 1])
        if not np.isfinite(inc):
            return t + 1, loglik
        loglik += inc - 0.5 * _LOG_2PI
    return -1, loglik


@njit(cache=True)
def _backward_logn(log_u, weights, log_w, s2, unif, sw, cross):
    T, N = log_u.shape
    M = unif.shape[0]
    logp = np.empty(N)
    p = np.empty(N)
    scratch = np.empty(N)
    inv_m = 1.0 / M
    half_inv_s2 = 0.5 / s2
    for m in range(M):
        k = _categorical(weights[T - 1], unif[m, 0])
        for i in range(N):
            sw[T - 1, i] += weights[T - 1, i] * inv_m
        l_next = log_u[T - 1, k]
        for t in range(T - 2, -1, -1):
            for i in range(N):
                d = l_next - log_u[t, i]
                logp[i] = log_w[t, i] - half_inv_s2 * d * d
            if not np.isfinite(_normalise(logp, p, scratch)):
                return t
            acc = 0.0
            for i in range(N):
                sw[t, i] += p[i] * inv_m
                acc += p[i] * log_u[t, i]
            cross[t] += l_next * acc * inv_m
            k = _categorical(p, unif[m, T - 1 - t])
            l_next = log_u[t, k]
    return -1


def forward_filter_logn(series: ReturnSeries, params: LogNParams, n_particles: int,
                        rng: np.random.Generator) -> ParticleCloud:
    """Bootstrap filter for log u_t = log u_{t-1} + N(0, S^2).

    Initial particles: log u_1 ~ N(log(1 / dy_1^2), 1), weighted by the first
    observation.
    """
    _check_particles(n_particles)
    T, N = len(series), n_particles
    y2 = floored_squares(series.returns)
    half_y2 = 0.5 * y2
    init = -math.log(y2[0]) + rng.standard_normal(N)
    z = rng.standard_normal((T - 1, N))
    unif = rng.random(T)
    log_u = np.empty((T, N))
    weights = np.empty((T, N))
    log_w = np.empty((T, N))
    failed, loglik = _forward_logn(half_y2, init, z, math.sqrt(params.step_variance), unif, log_u,
                                   weights, log_w)
    if failed >= 0:
        raise NumericalError(f"all particle weights vanished at t={failed}")
    return ParticleCloud(log_u, weights, "u-chain", None, None, loglik, log_w)


def backward_smooth_logn(cloud: ParticleCloud, params: LogNParams, rng: np.random.Generator,
                         n_trajectories: int | None = None) -> tuple[LogNExpectations, ParticleCloud]:
    if cloud.kind != "u-chain":
        raise InputError("backward_smooth_logn needs a cloud from forward_filter_logn")
    T, N = cloud.log_u.shape
    M = N if n_trajectories is None else int(n_trajectories)
    if M < 1:
        raise ConfigurationError("need at least one backward trajectory")
    unif = rng.random((M, T))
    sw = np.zeros((T, N))
    cross = np.zeros(max(T - 1, 0))
    failed = _backward_logn(cloud.log_u, cloud.weights, _log_weights(cloud), params.step_variance, unif, sw, cross)
    if failed >= 0:
        raise NumericalError(f"backward weights degenerated at t={failed}")
    ex = LogNExpectations(
        mean_log_u=np.sum(sw * cloud.log_u, axis=1),
        sq_log_u=np.sum(sw * cloud.log_u ** 2, axis=1),
        cross_log_u=cross,
    )
    smoothed = ParticleCloud(cloud.log_u, sw, "u-chain", None, None, cloud.log_likelihood)
    return ex, smoothed


def forward_backward_logn(series: ReturnSeries, params: LogNParams, n_particles: int,
                          rng: np.random.Generator, n_trajectories: int | None = None
                          ) -> tuple[LogNExpectations, ParticleCloud]:
    """Filter, smooth and tabulate E[log^2 u_t] and E[log u_t log u_{t-1}].

    The pairwise term is a double sum over particles (i, j) weighted by the
    joint backward probabilities of (u_t^i, u_{t-1}^j), not by the product of
    the two marginals.
    """
    cloud = forward_filter_logn(series, params, n_particles, rng)
    return backward_smooth_logn(cloud, params, rng, n_trajectories)


def logn_mstep(ex: LogNExpectations, length: int | None = None) -> LogNParams:
    """S^2 = (1/T) sum_{t>=2} E[(log u_t - log u_{t-1})^2]."""
    T = ex.sq_log_u.size
    if length is not None and length != T:
        raise InputError(f"tables have length {T}, expected {length}")
    if ex.cross_log_u.size != T - 1:
        raise InputError("cross table must have length T - 1")
    sq = ex.sq_log_u
    s2 = float(np.sum(sq[1:] - 2.0 * ex.cross_log_u + sq[:-1])) / T
    if not s2 > S2_FLOOR:
        warnings.warn(f"S^2 estimate {s2:.3g} is not positive; floored at {S2_FLOOR}", RuntimeWarning,
                      stacklevel=2)
        s2 = S2_FLOOR
    return LogNParams(s2)


# ---------------------------------------------------------------------------
# EM driver
# ---------------------------------------------------------------------------

def estep_gam(series, params, config: FitConfig, rng):
    cloud = forward_filter_gam(series, params, config.particles, rng)
    return backward_smooth_gam(cloud, params, rng, config.n_trajectories)


def estep_logn(series, params, config: FitConfig, rng):
    return forward_backward_logn(series, params, config.particles, rng, config.n_trajectories)


def fit_mc(series: ReturnSeries, variant: str, config: FitConfig = FitConfig()
           ) -> tuple[FitReport, ParticleCloud]:
    """Monte Carlo EM; ``variant`` is ``"gam"`` (C4) or ``"logn"`` (C2).

    The objective trace records the particle filter's log-likelihood
    estimate of each round.
    """
    if variant not in ("gam", "logn"):
        raise ConfigurationError(f"unknown variant {variant!r}; expected 'gam' or 'logn'")
    _check_particles(config.particles)
    rng = default_rng(config.seed)
    if variant == "gam":
        params = GamChainParams(config.a_init)
        engine = "c4"
    else:
        params = LogNParams(config.s2_init)
        engine = "c2"
    report = FitReport(engine=engine, params=params)
    cloud = None

    for _ in range(config.max_rounds):
        t0 = time.perf_counter()
        if variant == "gam":
            ex, cloud = estep_gam(series, params, config, rng)
        else:
            ex, cloud = estep_logn(series, params, config, rng)
        t1 = time.perf_counter()
        if variant == "gam":
            new = mstep(ex, params, config)
            value, old_value = new.shape_a, params.shape_a
        else:
            new = logn_mstep(ex, len(series))
            value, old_value = new.step_variance, params.step_variance
        t2 = time.perf_counter()
        report.estep_seconds += t1 - t0
        report.mstep_seconds += t2 - t1
        report.iterations += 1
        report.a_trace.append(value)
        if config.track_objective:
            report.objective_trace.append(cloud.log_likelihood)
        params = new
        if not config.fixed_iterations and relative_change(value, old_value) < config.tol_a:
            report.converged = True
            break
    report.params = params
    return report, cloud
