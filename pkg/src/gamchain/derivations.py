"""Executable derivation checks for the increment law and its moments.

Each check recomputes one closed-form result numerically (quadrature or
finite differences) and reports the worst error against a fixed tolerance.
All checks are deterministic.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError
from .model import GamChainParams, increment_kurtosis, increment_mgf, log_increment_density
from .numerics import polygamma


@dataclass(frozen=True)
class DerivationCheck:
    name: str
    tolerance: float
    status: str  # "pass" or "fail"
    detail: str
    error: float = 0.0
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return asdict(self)


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


# ---------------------------------------------------------------------------
# dummy-node marginalisation
# ---------------------------------------------------------------------------

def transition_closed_form(u_prev: float, u_next: float, params: GamChainParams) -> float:
    """p(u_next | u_prev) with the dummy node integrated out."""
    a = params.shape_a
    log_p = (a * math.log(u_prev) + (a - 1.0) * math.log(u_next) - 2.0 * a * math.log(u_prev + u_next)
             + math.lgamma(2.0 * a) - 2.0 * math.lgamma(a))
    return math.exp(log_p)


def transition_quadrature(u_prev: float, u_next: float, params: GamChainParams) -> float:
    """Integral over v of Ga(u_next; A, v) Ga(v; A, u_prev), done in s = log v."""
    a = params.shape_a
    lg = math.lgamma(a)

    def log_integrand(s):
        v = math.exp(s)
        # Ga(u_next; A, rate v) * Ga(v; A, rate u_prev) * dv/ds
        return (a * s + (a - 1.0) * math.log(u_next) - v * u_next - lg
                + a * math.log(u_prev) + (a - 1.0) * s - v * u_prev - lg + s)

    # centre the integrand on its peak for a well-scaled quadrature
    s_peak = math.log(2.0 * a / (u_prev + u_next))
    ref = log_integrand(s_peak)
    width = 1.0 / math.sqrt(2.0 * a)
    val, _ = integrate.quad(lambda s: math.exp(log_integrand(s) - ref), s_peak - 60.0 * width - 10.0,
                            s_peak + 10.0 * width + 10.0, points=[s_peak], limit=400,
                            epsabs=0.0, epsrel=1e-12)
    return val * math.exp(ref)


def check_marginalization(params: GamChainParams = GamChainParams(1.0), n_points: int = 20,
                          lo: float = 1e-2, hi: float = 1e2, tolerance: float = 1e-6) -> DerivationCheck:
    """Quadrature against the closed-form transition on a log-spaced grid."""
    t0 = time.perf_counter()
    grid = np.geomspace(lo, hi, n_points)
    rng = np.random.default_rng(0)
    partners = rng.permutation(grid)
    worst = 0.0
    for u_prev, u_next in zip(grid, partners):
        exact = transition_closed_form(u_prev, u_next, params)
        quad = transition_quadrature(u_prev, u_next, params)
        worst = max(worst, abs(quad - exact) / exact)
    return DerivationCheck(
        "marginalization", tolerance, _status(worst <= tolerance),
        f"A={params.shape_a:g}, {n_points} grid points in [{lo:g}, {hi:g}], sup relative error {worst:.3e}",
        worst, time.perf_counter() - t0,
    )


def check_increment_law(params: GamChainParams = GamChainParams(1.0), tolerance: float = 1e-8) -> DerivationCheck:
    """The increment density integrates to one and equals u_next * p(u_next | u_prev)."""
    t0 = time.perf_counter()
    a = params.shape_a
    half = 50.0 / a + 50.0
    total, _ = integrate.quad(lambda w: math.exp(log_increment_density(w, params)), -half, half,
                              points=[0.0], limit=400, epsabs=0.0, epsrel=1e-12)
    worst = abs(total - 1.0)
    for w in np.linspace(-5.0, 5.0, 11):
        u_prev = 0.7
        u_next = u_prev * math.exp(w)
        jac = u_next * transition_closed_form(u_prev, u_next, params)
        dens = math.exp(log_increment_density(w, params))
        worst = max(worst, abs(jac - dens) / dens)
    return DerivationCheck(
        "increment_law", tolerance, _status(worst <= tolerance),
        f"A={a:g}, normalisation {total:.12f}, worst relative error {worst:.3e}", worst,
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# moment generating function
# ---------------------------------------------------------------------------

_STENCILS = {
    1: (np.array([-1.0, 1.0]), np.array([-0.5, 0.5])),
    2: (np.array([-1.0, 0.0, 1.0]), np.array([1.0, -2.0, 1.0])),
    3: (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([-0.5, 1.0, -1.0, 0.5])),
    4: (np.array([-2.0, -1.0, 0.0, 1.0, 2.0]), np.array([1.0, -4.0, 6.0, -4.0, 1.0])),
}


def mgf_derivative(order: int, params: GamChainParams, h: float = 0.05, levels: int = 3) -> float:
    """Richardson-extrapolated central difference of the MGF at zero."""
    offsets, coef = _STENCILS[order]
    table = []
    for k in range(levels):
        hk = h / 2 ** k
        table.append(sum(c * increment_mgf(o * hk, params) for o, c in zip(offsets, coef)) / hk ** order)
    # central stencils have even error expansions in h
    for j in range(1, levels):
        factor = 4.0 ** j
        table = [(factor * table[i + 1] - table[i]) / (factor - 1.0) for i in range(len(table) - 1)]
    return float(table[0])


def closed_form_moments(params: GamChainParams) -> tuple[float, float, float, float]:
    a = params.shape_a
    p1 = polygamma(1, a)
    return 0.0, 2.0 * p1, 0.0, 2.0 * (6.0 * p1 * p1 + polygamma(3, a))


def check_mgf_and_moments(params: GamChainParams = GamChainParams(2.0), tolerance: float = 1e-4,
                          odd_tolerance: float = 1e-6) -> DerivationCheck:
    """Derivatives of the MGF at zero against the polygamma moments."""
    if params.shape_a <= 1.5:
        raise DomainError("the moment check needs A > 1.5")
    t0 = time.perf_counter()
    exact = closed_form_moments(params)
    numeric = [mgf_derivative(k, params) for k in (1, 2, 3, 4)]
    errs = []
    ok = True
    for k, (num, ex) in enumerate(zip(numeric, exact), start=1):
        if k % 2:
            err = abs(num)
            ok &= err <= odd_tolerance
        else:
            err = abs(num - ex) / abs(ex)
            ok &= err <= tolerance
        errs.append(err)
    # the kurtosis formula is the ratio of the even moments
    k_err = abs(numeric[3] / numeric[1] ** 2 - increment_kurtosis(params)) / increment_kurtosis(params)
    ok &= k_err <= tolerance
    detail = (f"A={params.shape_a:g}, derivatives {', '.join(f'{x:.10g}' for x in numeric)}; "
              f"closed form {', '.join(f'{x:.10g}' for x in exact)}; kurtosis relative error {k_err:.2e}")
    return DerivationCheck("mgf_and_moments", tolerance, _status(ok), detail, max(errs + [k_err]),
                           time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# kurtosis range
# ---------------------------------------------------------------------------

def check_kurtosis_bound(lo: float = 1e-4, hi: float = 1e4, n_points: int = 200,
                         tolerance: float = 1e-2) -> DerivationCheck:
    """3 < K(A) < 6, K decreasing, and the two horizontal asymptotes."""
    t0 = time.perf_counter()
    grid = np.geomspace(lo, hi, n_points)
    k = np.array([increment_kurtosis(GamChainParams(a)) for a in grid])
    inside = bool(np.all((k > 3.0) & (k < 6.0)))
    monotone = bool(np.all(np.diff(k) < 0.0))
    low_end = abs(k[0] - 6.0)
    high_end = abs(k[-1] - 3.0)
    ok = inside and monotone and low_end <= tolerance and high_end <= tolerance
    detail = (f"{n_points} points in [{lo:g}, {hi:g}]: inside (3,6)={inside}, decreasing={monotone}, "
              f"K({lo:g})={k[0]:.6f}, K({hi:g})={k[-1]:.6f}")
    return DerivationCheck("kurtosis_bound", tolerance, _status(ok), detail, max(low_end, high_end),
                           time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------

def run_all() -> list[DerivationCheck]:
    return [
        check_marginalization(GamChainParams(1.0)),
        check_marginalization(GamChainParams(2.0)),
        check_marginalization(GamChainParams(0.3)),
        check_increment_law(GamChainParams(1.0)),
        check_increment_law(GamChainParams(0.5)),
        check_mgf_and_moments(GamChainParams(2.0)),
        check_mgf_and_moments(GamChainParams(5.0)),
        check_kurtosis_bound(),
    ]


def render_markdown(checks: list[DerivationCheck]) -> str:
    lines = ["# Derivation checks", "", "| check | status | tolerance | error | detail |",
             "|---|---|---|---|---|"]
    for c in checks:
        lines.append(f"| {c.name} | {c.status} | {c.tolerance:g} | {c.error:.3e} | {c.detail} |")
    passed = sum(c.passed for c in checks)
    lines += ["", f"{passed}/{len(checks)} checks passed.", ""]
    return "\n".join(lines)
