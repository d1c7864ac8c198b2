"""Closed-form variational state estimation and EM for the gamma chain (C3).

Mean-field factors are gamma distributions on every node of the chain::

    u_1 - v_1 - u_2 - v_2 - ... - v_{T-1} - u_T

Each coordinate update only touches the rate; the shapes depend on ``A`` and
the node position alone, so they (and their digammas) are fixed once per EM
round.  A sweep visits ``u_1, v_1, u_2, ..., v_{T-1}, u_T`` in order.

Index convention: Python arrays are 0-based, ``v[t]`` sits between ``u[t]``
and ``u[t + 1]``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InputError, NumericalError
from .fitting import FitConfig, FitReport, relative_change
from .model import GamChainParams, ReturnSeries
from .numerics import _digamma, digamma_array, lgamma_array

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GammaPosterior:
    a_u: np.ndarray
    b_u: np.ndarray
    a_v: np.ndarray
    b_v: np.ndarray

    def __post_init__(self):
        for name in ("a_u", "b_u", "a_v", "b_v"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.b_u.shape != self.a_u.shape or self.a_v.shape != self.b_v.shape:
            raise InputError("shape and rate arrays must have equal lengths")
        if self.a_v.size != self.a_u.size - 1:
            raise InputError("there must be exactly one v node between consecutive u nodes")

    def __len__(self) -> int:
        return self.a_u.size

    def validate(self) -> None:
        for name in ("a_u", "b_u", "a_v", "b_v"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
                raise NumericalError(f"posterior {name} left the positive finite range")

    def copy(self) -> "GammaPosterior":
        return GammaPosterior(self.a_u.copy(), self.b_u.copy(), self.a_v.copy(), self.b_v.copy())

    @property
    def mean_u(self) -> np.ndarray:
        return self.a_u / self.b_u

    @property
    def mean_v(self) -> np.ndarray:
        return self.a_v / self.b_v


@dataclass
class Expectations:
    """Posterior expectations consumed by the M-step."""

    mean_u: np.ndarray
    log_u: np.ndarray
    log_v: np.ndarray

    def __post_init__(self):
        if self.log_u.shape != self.mean_u.shape or self.log_v.size != self.log_u.size - 1:
            raise InputError("expectation tables have inconsistent lengths")


# ---------------------------------------------------------------------------
# initialisation and single-node updates
# ---------------------------------------------------------------------------

def floored_squares(returns: np.ndarray) -> np.ndarray:
    """dy^2 with exact zeros replaced by 1e-12 * median(dy^2).

    Falls back to the median of the positive squares when more than half the
    returns are zero, and to 1e-12 when all are.
    """
    y2 = np.asarray(returns, dtype=float) ** 2
    med = float(np.median(y2))
    if med <= 0.0:
        pos = y2[y2 > 0.0]
        med = float(np.median(pos)) if pos.size else 1.0
    # only exact zeros: genuine tiny returns carry information when the
    # precision wanders over many orders of magnitude
    return np.where(y2 > 0.0, y2, 1e-12 * med)


def init_posterior(series: ReturnSeries) -> GammaPosterior:
    """Single-observation posteriors Ga(1/2, dy^2/2) under a Ga(0, 0) prior."""
    if len(series) < 2:
        raise InputError("need at least 2 returns")
    b_u = 0.5 * floored_squares(series.returns)
    a_u = np.full(b_u.size, 0.5)
    b_v = 0.5 * (b_u[:-1] + b_u[1:])
    a_v = np.full(b_v.size, 0.5)
    return GammaPosterior(a_u, b_u, a_v, b_v)


def node_shapes(a: float, length: int, paper_literal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Shapes of q(u_t) and q(v_t); data-independent."""
    a_u = np.full(length, 2 * a + 0.5)
    a_u[0] = a + 1.5
    a_v = np.full(length - 1, 2 * a)
    if paper_literal:
        a_v[-1] = a
    else:
        a_u[-1] = a + 0.5
    return a_u, a_v


def _check_index(t: int, n: int) -> int:
    if not 0 <= t < n:
        raise InputError(f"index {t} out of range for {n} nodes")
    return t


def update_u(posterior: GammaPosterior, series: ReturnSeries, params: GamChainParams, t: int):
    """Optimal (shape, rate) of q(u_t) given the current v factors."""
    n = len(posterior)
    t = _check_index(t, n)
    a = params.shape_a
    half_y2 = 0.5 * floored_squares(series.returns)[t]
    ev = posterior.mean_v
    rate = half_y2
    if t > 0:
        rate += ev[t - 1]
    if t < n - 1:
        rate += ev[t]
    if t == 0:
        shape = a + 1.5
    elif t == n - 1:
        shape = a + 0.5
    else:
        shape = 2 * a + 0.5
    return shape, rate


def update_v(posterior: GammaPosterior, params: GamChainParams, t: int):
    """Optimal (shape, rate) of q(v_t): Ga(2A, E[u_t] + E[u_{t+1}])."""
    t = _check_index(t, posterior.a_v.size)
    eu = posterior.mean_u
    return 2 * params.shape_a, eu[t] + eu[t + 1]


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sweep_kernel(a_u, b_u, a_v, b_v, half_y2, sweeps, literal):
    n = b_u.size
    for _ in range(sweeps):
        for t in range(n):
            rate = half_y2[t]
            if t > 0:
                rate += a_v[t - 1] / b_v[t - 1]
            if t < n - 1:
                rate += a_v[t] / b_v[t]
            b_u[t] = rate
            if t < n - 1:
                if literal and t == n - 2:
                    b_v[t] = a_u[t] / b_u[t]
                else:
                    b_v[t] = a_u[t] / b_u[t] + a_u[t + 1] / b_u[t + 1]


@njit(cache=True)
def _expectation_kernel(a_u, b_u, a_v, b_v, mean_u, log_u, log_v):
    n = b_u.size
    # shapes repeat by position; reuse digammas of equal neighbours
    prev_a = -1.0
    psi = 0.0
    for t in range(n):
        if a_u[t] != prev_a:
            prev_a = a_u[t]
            psi = _digamma(prev_a)
        mean_u[t] = a_u[t] / b_u[t]
        log_u[t] = psi - math.log(b_u[t])
    prev_a = -1.0
    for t in range(n - 1):
        if a_v[t] != prev_a:
            prev_a = a_v[t]
            psi = _digamma(prev_a)
        log_v[t] = psi - math.log(b_v[t])


def expectations(posterior: GammaPosterior) -> Expectations:
    n = len(posterior)
    mean_u = np.empty(n)
    log_u = np.empty(n)
    log_v = np.empty(n - 1)
    _expectation_kernel(posterior.a_u, posterior.b_u, posterior.a_v, posterior.b_v, mean_u, log_u, log_v)
    return Expectations(mean_u, log_u, log_v)


def estep(
    posterior: GammaPosterior,
    series: ReturnSeries,
    params: GamChainParams,
    sweeps: int = 1,
    *,
    paper_literal: bool = False,
    half_y2: np.ndarray | None = None,
) -> tuple[GammaPosterior, Expectations]:
    """Forward-ordered coordinate sweeps followed by the expectation tables.

    The input posterior is left untouched.
    """
    if sweeps < 1:
        raise InputError("sweeps must be >= 1")
    if len(posterior) != len(series):
        raise InputError("posterior and series lengths differ")
    if half_y2 is None:
        half_y2 = 0.5 * floored_squares(series.returns)
    a_u, a_v = node_shapes(params.shape_a, len(series), paper_literal)
    b_u = posterior.b_u.copy()
    b_v = posterior.b_v.copy()
    _sweep_kernel(a_u, b_u, a_v, b_v, half_y2, sweeps, paper_literal)
    out = GammaPosterior(a_u, b_u, a_v, b_v)
    return out, expectations(out)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _gamma_entropy(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a - np.log(b) + lgamma_array(a) + (1.0 - a) * digamma_array(a)))


def elbo(posterior: GammaPosterior, series: ReturnSeries, params: GamChainParams) -> float:
    """Evidence lower bound of the mean-field posterior (flat prior on u_1)."""
    if len(posterior) != len(series):
        raise InputError("posterior and series lengths differ")
    a = params.shape_a
    half_y2 = 0.5 * floored_squares(series.returns)
    eu = posterior.mean_u
    ev = posterior.mean_v
    elu = digamma_array(posterior.a_u) - np.log(posterior.b_u)
    elv = digamma_array(posterior.a_v) - np.log(posterior.b_v)
    lg = math.lgamma(a)

    obs = np.sum(0.5 * elu - half_y2 * eu) - 0.5 * eu.size * _LOG_2PI
    # v_t | u_t  and  u_{t+1} | v_t
    down = np.sum(a * elu[:-1] + (a - 1) * elv - eu[:-1] * ev) - ev.size * lg
    up = np.sum(a * elv + (a - 1) * elu[1:] - ev * eu[1:]) - ev.size * lg
    entropy = _gamma_entropy(posterior.a_u, posterior.b_u) + _gamma_entropy(posterior.a_v, posterior.b_v)
    return float(obs + down + up + entropy)


def _edge_sum(ex: Expectations, paper_literal: bool = False) -> tuple[float, int]:
    if paper_literal:
        # the printed objective: 2 E[log u_t] per step plus both v sums
        return float(2 * ex.log_u.sum() + 2 * ex.log_v.sum()), 2 * ex.log_u.size
    s = ex.log_u[:-1].sum() + ex.log_u[1:].sum() + 2 * ex.log_v.sum()
    return float(s), 2 * ex.log_v.size


def em_objective(ex: Expectations, a: float, length: int | None = None, *, paper_literal: bool = False) -> float:
    """A-dependent part of the expected complete-data log likelihood."""
    _check_length(ex, length)
    s, n_edges = _edge_sum(ex, paper_literal)
    return a * s - n_edges * math.lgamma(a)


def em_gradient(ex: Expectations, params: GamChainParams, length: int | None = None, *,
                paper_literal: bool = False) -> float:
    """dQ/dA over the 2(T-1) gamma edges; psi(A) is evaluated once."""
    _check_length(ex, length)
    s, n_edges = _edge_sum(ex, paper_literal)
    return s - n_edges * float(_digamma(params.shape_a))


def _check_length(ex: Expectations, length: int | None) -> None:
    if length is not None and (ex.log_u.size != length or ex.mean_u.size != length):
        raise InputError(f"expectation tables have length {ex.log_u.size}, expected {length}")


def mstep(ex: Expectations, old: GamChainParams, config: FitConfig = FitConfig(), *,
          max_steps: int = 10_000) -> GamChainParams:
    """Projected gradient ascent on log A with halving backtracking.

    Starts from ``config.a_init`` (A = 1 by default) and works on the
    objective divided by the number of edges, so the first trial step
    ``config.step0`` is independent of the sequence length.  The result is
    only accepted if it does not lower Q relative to ``old``.
    """
    s, n_edges = _edge_sum(ex, config.paper_literal)
    mean_s = s / n_edges

    def q(a):
        return a * mean_s - math.lgamma(a)

    def grad(a):
        # d Q / d log A
        return a * (mean_s - float(_digamma(a)))

    a = config.a_init
    qa = q(a)
    for _ in range(max_steps):
        g = grad(a)
        lam = config.step0
        while lam > 1e-16:
            cand = a * math.exp(lam * g)
            qc = q(cand)
            if qc > qa:
                break
            # near the optimum Q is flat to rounding; a tie that shrinks the
            # gradient still makes progress
            if qc >= qa - 4e-16 * max(1.0, abs(qa)) and abs(grad(cand)) < abs(g):
                break
            lam *= 0.5
        else:
            break
        step = abs(math.log(cand / a))
        a, qa = cand, qc
        if step < 1e-12:
            break
    if not math.isfinite(a) or a <= 0.0:
        raise NumericalError(f"M-step produced A={a}")
    if qa < q(old.shape_a):
        return old
    return GamChainParams(a)


# ---------------------------------------------------------------------------
# EM driver
# ---------------------------------------------------------------------------

def fit(series: ReturnSeries, config: FitConfig = FitConfig()) -> tuple[FitReport, GammaPosterior]:
    """EM for A: one E-step (``config.sweeps`` sweeps) and one M-step per round."""
    if len(series) < 2:
        raise InputError("need at least 2 returns")
    posterior = init_posterior(series)
    half_y2 = 0.5 * floored_squares(series.returns)
    params = GamChainParams(config.a_init)
    report = FitReport(engine="c3", params=params)

    for _ in range(config.max_rounds):
        t0 = time.perf_counter()
        posterior, ex = estep(posterior, series, params, config.sweeps,
                              paper_literal=config.paper_literal, half_y2=half_y2)
        t1 = time.perf_counter()
        new = mstep(ex, params, config)
        t2 = time.perf_counter()
        report.estep_seconds += t1 - t0
        report.mstep_seconds += t2 - t1
        report.iterations += 1
        report.a_trace.append(new.shape_a)
        if config.track_objective:
            report.objective_trace.append(elbo(posterior, series, params))
        change = relative_change(new.shape_a, params.shape_a)
        params = new
        if not config.fixed_iterations and change < config.tol_a:
            report.converged = True
            break
    posterior.validate()
    report.params = params
    return report, posterior
