"""Domain types and closed-form analytics of the gamma-chain volatility model.

Generative law (precision ``u_t``, dummy node ``v_t`` between ``u_t`` and
``u_{t+1}``)::

    dy_t    ~ N(0, 1 / u_t)
    v_t     ~ Ga(A, rate=u_t)
    u_{t+1} ~ Ga(A, rate=v_t)

Marginalising ``v_t`` makes the log-precision increment ``w = log(u_{t+1}/u_t)``
a time-invariant law with density::

    p(w) = Gamma(2A) / Gamma(A)^2 * exp(A w) * (1 + exp(w))^(-2A)

Note the sign of the exponent: ``exp(+A w)``.  With ``exp(-A w)`` the density
would not integrate over ``w -> -inf`` and would contradict the symmetric
moment generating function ``Gamma(A - l) Gamma(A + l) / Gamma(A)^2``.  Being
symmetric, the law has the same even moments either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputError
from .numerics import log_gamma, polygamma


@dataclass(frozen=True)
class ReturnSeries:
    returns: np.ndarray
    instrument_id: str = "series"
    period: str = ""

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        if r.ndim != 1:
            raise InputError("returns must be one-dimensional")
        if r.size < 2:
            raise InputError(f"a return series needs at least 2 points, got {r.size}")
        if not np.all(np.isfinite(r)):
            raise InputError("returns must be finite")
        r = r.copy()
        r.flags.writeable = False
        object.__setattr__(self, "returns", r)

    def __len__(self) -> int:
        return self.returns.size

    def truncated(self, length: int) -> "ReturnSeries":
        if length > len(self):
            raise InputError(f"series {self.instrument_id!r} has only {len(self)} points, need {length}")
        return ReturnSeries(self.returns[:length], self.instrument_id, self.period)


@dataclass(frozen=True)
class GamChainParams:
    shape_a: float

    def __post_init__(self):
        a = float(self.shape_a)
        if not math.isfinite(a) or a <= 0.0:
            raise DomainError(f"shape A must be positive and finite, got {self.shape_a!r}")
        object.__setattr__(self, "shape_a", a)


@dataclass(frozen=True)
class LogNParams:
    step_variance: float

    def __post_init__(self):
        s2 = float(self.step_variance)
        if not math.isfinite(s2) or s2 <= 0.0:
            raise DomainError(f"step variance must be positive and finite, got {self.step_variance!r}")
        object.__setattr__(self, "step_variance", s2)


@dataclass(frozen=True)
class LatentPath:
    """Latent precision path, stored on the log scale.

    Long gamma-chain paths wander far outside the floating-point range of
    ``u`` itself, so ``log_u`` / ``log_v`` are the stored quantities.
    ``log_v`` is ``None`` for the lognormal chain, which has no dummy nodes.
    """

    log_u: np.ndarray
    log_v: np.ndarray | None = None

    def __post_init__(self):
        lu = np.asarray(self.log_u, dtype=float)
        if lu.ndim != 1 or not np.all(np.isfinite(lu)):
            raise InputError("log_u must be a finite 1-d array")
        object.__setattr__(self, "log_u", lu)
        if self.log_v is not None:
            lv = np.asarray(self.log_v, dtype=float)
            if lv.shape != (lu.size - 1,) or not np.all(np.isfinite(lv)):
                raise InputError("log_v must be finite with length len(log_u) - 1")
            object.__setattr__(self, "log_v", lv)

    @property
    def u(self) -> np.ndarray:
        return np.exp(self.log_u)

    @property
    def v(self) -> np.ndarray | None:
        return None if self.log_v is None else np.exp(self.log_v)

    @property
    def increments(self) -> np.ndarray:
        """w_t = log u_{t+1} - log u_t."""
        return np.diff(self.log_u)


# ---------------------------------------------------------------------------
# increment law
# ---------------------------------------------------------------------------

def _finite(x: float, name: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x!r}")
    return x


def log_increment_density(w: float, params: GamChainParams) -> float:
    w = _finite(w, "w")
    a = params.shape_a
    # log1p(e^w) without overflow
    softplus = w + math.log1p(math.exp(-w)) if w > 0 else math.log1p(math.exp(w))
    return log_gamma(2 * a) - 2 * log_gamma(a) + a * w - 2 * a * softplus


def increment_density(w: float, params: GamChainParams) -> float:
    """Density of the log-precision increment after marginalising the dummy node."""
    return math.exp(log_increment_density(w, params))


def naive_increment_density(w: float, u_prev: float, params: GamChainParams) -> float:
    """Increment density of the chain without dummy nodes, u_t ~ Ga(A, u_{t-1}).

    Depends on ``u_prev``, so it is not a valid time-invariant increment law.
    The rate enters squared, matching the change-of-variables derivation.
    """
    w = _finite(w, "w")
    u_prev = float(u_prev)
    if not math.isfinite(u_prev) or u_prev <= 0.0:
        raise DomainError(f"u_prev must be positive, got {u_prev!r}")
    a = params.shape_a
    s = math.exp(w) * u_prev * u_prev
    if s == 0.0:
        return 0.0
    return math.exp(-s + a * math.log(s) - log_gamma(a))


def increment_mgf(lam: float, params: GamChainParams) -> float:
    """E[exp(lam * w)] = Gamma(A - lam) Gamma(A + lam) / Gamma(A)^2 for |lam| < A."""
    lam = _finite(lam, "lambda")
    a = params.shape_a
    if abs(lam) >= a:
        raise DomainError(f"MGF diverges for |lambda| >= A (lambda={lam}, A={a})")
    return math.exp(math.lgamma(a - lam) + math.lgamma(a + lam) - 2 * math.lgamma(a))


def increment_variance(params: GamChainParams) -> float:
    return 2.0 * polygamma(1, params.shape_a)


def increment_kurtosis(params: GamChainParams) -> float:
    """Non-excess kurtosis 3 + psi3(A) / (2 psi1(A)^2); always inside (3, 6)."""
    a = params.shape_a
    t = polygamma(1, a)
    return 3.0 + polygamma(3, a) / (2.0 * t * t)


# ---------------------------------------------------------------------------
# return marginal with the volatility chain frozen (v_{t-1} = B)
# ---------------------------------------------------------------------------

def marginal_return_density(y: float, fixed_rate_b: float, params: GamChainParams) -> float:
    """Student-t marginal of a return after integrating out ``u ~ Ga(A, B)``."""
    y = _finite(y, "y")
    b = float(fixed_rate_b)
    if not math.isfinite(b) or b <= 0.0:
        raise DomainError(f"rate B must be positive, got {fixed_rate_b!r}")
    a = params.shape_a
    log_p = (
        a * math.log(2.0 * b)
        - (a + 0.5) * math.log(2.0 * b + y * y)
        + math.lgamma(a + 0.5)
        - 0.5 * math.log(math.pi)
        - math.lgamma(a)
    )
    return math.exp(log_p)


def marginal_return_kurtosis(params: GamChainParams) -> float:
    a = params.shape_a
    if a <= 2.0:
        raise DomainError(f"return kurtosis is undefined for A <= 2 (A={a})")
    return 3.0 * math.exp(math.lgamma(a - 2) + math.lgamma(a) - 2 * math.lgamma(a - 1))
