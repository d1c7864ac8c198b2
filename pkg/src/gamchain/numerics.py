"""Special functions, gamma sampling and function-timing utilities.

The scalar kernels (``_digamma``, ``_trigamma``, ``_psi3``, ``_lambert_w0``)
are numba-compiled so the inference engines can call them from inside their
own compiled loops.  The public wrappers validate arguments and raise
:class:`~gamchain.errors.DomainError` outside the supported domain.

Random numbers always come from an explicitly passed
``numpy.random.Generator``; the documented default bit generator is PCG64
(``numpy.random.default_rng(seed)``), which is portable across platforms.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigurationError, DomainError

# B_2, B_4, ..., B_16
_BERNOULLI = np.array(
    [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0,
     -691.0 / 2730.0, 7.0 / 6.0, -3617.0 / 510.0]
)
_SHIFT_TO = 10.0


def default_rng(seed: int | None = None) -> np.random.Generator:
    """PCG64-backed generator used throughout the package."""
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _digamma(x):
    acc = 0.0
    while x < _SHIFT_TO:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    p = inv2
    for k in range(_BERNOULLI.size):
        series += _BERNOULLI[k] / (2.0 * (k + 1)) * p
        p *= inv2
    return acc + math.log(x) - 0.5 / x - series


@njit(cache=True)
def _trigamma(x):
    acc = 0.0
    while x < _SHIFT_TO:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    p = inv2 * inv
    for k in range(_BERNOULLI.size):
        series += _BERNOULLI[k] * p
        p *= inv2
    return acc + inv + 0.5 * inv2 + series


@njit(cache=True)
def _psi3(x):
    acc = 0.0
    while x < _SHIFT_TO:
        x2 = x * x
        acc += 6.0 / (x2 * x2)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    p = inv2 * inv2 * inv
    for k in range(_BERNOULLI.size):
        m = 2.0 * (k + 1)
        series += _BERNOULLI[k] * (m + 1.0) * (m + 2.0) * p
        p *= inv2
    return acc + 2.0 * inv2 * inv + 3.0 * inv2 * inv2 + series


@njit(cache=True)
def _lambert_w0(x):
    if x == 0.0:
        return 0.0
    if x > 1e100:
        # w + log(w) = log(x), Newton in the log form avoids overflow of w*e^w
        lx = math.log(x)
        w = lx - math.log(lx)
        for _ in range(50):
            dw = (w + math.log(w) - lx) / (1.0 + 1.0 / w)
            w -= dw
            if abs(dw) <= 1e-14 * (1.0 + abs(w)):
                break
        return w
    # Winitzki's approximation as the starting point
    l1 = math.log1p(x)
    w = l1 * (1.0 - math.log1p(l1) / (2.0 + l1))
    for _ in range(50):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if abs(dw) <= 1e-14 * (1.0 + abs(w)):
            break
    return w


@njit(cache=True)
def digamma_array(x):
    out = np.empty(x.size)
    for i in range(x.size):
        out[i] = _digamma(x[i])
    return out


@njit(cache=True)
def lgamma_array(x):
    out = np.empty(x.size)
    for i in range(x.size):
        out[i] = math.lgamma(x[i])
    return out


# ---------------------------------------------------------------------------
# public scalar API
# ---------------------------------------------------------------------------

def _check_positive(x: float, name: str = "x") -> float:
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"{name} must be positive and finite, got {x!r}")
    return x


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for positive ``x``."""
    return math.lgamma(_check_positive(x))


def polygamma(n: int, x: float) -> float:
    """Polygamma function of order 0, 1 or 3.

    Uses the recurrence to shift the argument to at least 10, then the
    Bernoulli-number asymptotic expansion.
    """
    x = _check_positive(x)
    if n == 0:
        return float(_digamma(x))
    if n == 1:
        return float(_trigamma(x))
    if n == 3:
        return float(_psi3(x))
    raise DomainError(f"unsupported polygamma order {n!r}; expected 0, 1 or 3")


def digamma(x: float) -> float:
    return polygamma(0, x)


def trigamma(x: float) -> float:
    return polygamma(1, x)


def lambert_w0(x: float) -> float:
    """Principal branch of the Lambert W function for ``x >= 0``."""
    x = float(x)
    if not math.isfinite(x) or x < 0.0:
        raise DomainError(f"lambert_w0 needs a finite non-negative argument, got {x!r}")
    return float(_lambert_w0(x))


def standard_normal_cdf(x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"standard_normal_cdf needs a finite argument, got {x!r}")
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# gamma sampling
# ---------------------------------------------------------------------------

def sample_log_standard_gamma(shape: float, rng: np.random.Generator, size=None):
    """Logarithm of Ga(shape, 1) draws (Marsaglia-Tsang).

    Working on the log scale keeps draws with tiny shape representable; for
    ``shape < 1`` the usual boost ``G(a) = G(a + 1) * U**(1/a)`` becomes an
    additive ``log(U) / a`` term.
    """
    shape = _check_positive(shape, "shape")
    n = 1 if size is None else int(np.prod(size))
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)

    out = np.empty(n)
    pending = np.arange(n)
    while pending.size:
        z = rng.standard_normal(pending.size)
        v = 1.0 + c * z
        u = rng.random(pending.size)
        v = v * v * v
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = v > 0.0
            z2 = z * z
            squeeze = u < 1.0 - 0.0331 * z2 * z2
            logtest = np.log(u) < 0.5 * z2 + d - d * v + d * np.log(v)
            ok &= squeeze | logtest
            out[pending[ok]] = math.log(d) + np.log(v[ok])
        pending = pending[~ok]
    if boost:
        # 1 - U lies in (0, 1], so the log stays finite
        out += np.log1p(-rng.random(n)) / shape
    if size is None:
        return float(out[0])
    return out.reshape(size)


def sample_gamma(shape: float, rate, rng: np.random.Generator, size=None):
    """Draw from Ga(shape, rate) with rate parametrisation.

    A draw at rate ``b`` is exactly the draw at rate 1 divided by ``b`` for
    the same generator state.
    """
    shape = _check_positive(shape, "shape")
    rate_arr = np.asarray(rate, dtype=float)
    if not np.all(np.isfinite(rate_arr)) or np.any(rate_arr <= 0.0):
        raise DomainError("rate must be positive and finite")
    std = np.exp(sample_log_standard_gamma(shape, rng, size))
    if size is None and rate_arr.ndim == 0:
        return float(std) / float(rate_arr)
    return std / rate_arr


# ---------------------------------------------------------------------------
# function timing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionTimingRecord:
    function_name: str
    mean_eval_time: float  # seconds per call
    sample_count: int


@njit(cache=True)
def _loop_baseline(x, y):
    s = 0.0
    for i in range(x.size):
        s += x[i]
    return s


@njit(cache=True)
def _loop_add(x, y):
    s = 0.0
    for i in range(x.size):
        s += x[i] + y[i]
    return s


@njit(cache=True)
def _loop_mul(x, y):
    s = 0.0
    for i in range(x.size):
        s += x[i] * y[i]
    return s


@njit(cache=True)
def _loop_exp(x, y):
    s = 0.0
    for i in range(x.size):
        s += math.exp(x[i])
    return s


@njit(cache=True)
def _loop_log(x, y):
    s = 0.0
    for i in range(x.size):
        s += math.log(x[i])
    return s


@njit(cache=True)
def _loop_pow(x, y):
    s = 0.0
    for i in range(x.size):
        s += x[i] ** y[i]
    return s


@njit(cache=True)
def _loop_gamma(x, y):
    s = 0.0
    for i in range(x.size):
        s += math.gamma(x[i])
    return s


@njit(cache=True)
def _loop_digamma(x, y):
    s = 0.0
    for i in range(x.size):
        s += _digamma(x[i])
    return s


@njit(cache=True)
def _loop_lambert_w(x, y):
    s = 0.0
    for i in range(x.size):
        s += _lambert_w0(x[i])
    return s


TIMED_FUNCTIONS = {
    "add": _loop_add,
    "mul": _loop_mul,
    "exp": _loop_exp,
    "log": _loop_log,
    "pow": _loop_pow,
    "gamma": _loop_gamma,
    "digamma": _loop_digamma,
    "lambert_w": _loop_lambert_w,
}

# one-tick resolution per call; keeps the record positive when the op is
# hidden entirely behind the baseline loop's own latency
_MIN_EVAL_TIME = 1e-12


def time_function(
    function_name: str,
    evaluations: int = 1_000_000,
    *,
    repetitions: int = 3,
    seed: int = 0,
) -> FunctionTimingRecord:
    """Mean wall time per call of one of the E-step building blocks.

    Arguments are pre-generated LogN(0, 1) draws; the timed region is a
    compiled loop over that buffer, and the time of the same loop without
    the function call is subtracted.  The median over ``repetitions`` runs
    is reported.
    """
    if function_name not in TIMED_FUNCTIONS:
        raise ConfigurationError(
            f"unknown function {function_name!r}; expected one of {sorted(TIMED_FUNCTIONS)}"
        )
    if evaluations < 1_000_000:
        raise ConfigurationError("evaluations must be at least 1e6 for a stable measurement")
    if repetitions < 1:
        raise ConfigurationError("repetitions must be positive")

    rng = default_rng(seed)
    x = np.exp(rng.standard_normal(evaluations))
    y = np.exp(rng.standard_normal(evaluations))
    loop = TIMED_FUNCTIONS[function_name]
    # compile outside the timed region
    loop(x[:8], y[:8])
    _loop_baseline(x[:8], y[:8])

    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        _loop_baseline(x, y)
        t1 = time.perf_counter_ns()
        loop(x, y)
        t2 = time.perf_counter_ns()
        samples.append(((t2 - t1) - (t1 - t0)) * 1e-9 / evaluations)
    mean = max(statistics.median(samples), _MIN_EVAL_TIME)
    return FunctionTimingRecord(function_name, mean, evaluations)
