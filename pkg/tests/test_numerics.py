import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamchain.errors import ConfigurationError, DomainError
from gamchain.numerics import (
    default_rng,
    digamma,
    lambert_w0,
    log_gamma,
    polygamma,
    sample_gamma,
    sample_log_standard_gamma,
    standard_normal_cdf,
    time_function,
)

mpmath.mp.dps = 40


# --- log_gamma ---------------------------------------------------------------

def test_log_gamma_examples():
    assert log_gamma(1.0) == 0.0
    assert log_gamma(2.0) == 0.0
    # ln sqrt(pi)
    assert log_gamma(0.5) == pytest.approx(0.5723649429247001, rel=1e-12)


@pytest.mark.parametrize("x", np.geomspace(1e-3, 1e6, 40))
def test_log_gamma_relative_error(x):
    ref = float(mpmath.loggamma(mpmath.mpf(x)))
    assert abs(log_gamma(x) - ref) <= 1e-12 * max(abs(ref), 1.0)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_log_gamma_domain(bad):
    with pytest.raises(DomainError):
        log_gamma(bad)


# --- polygamma ---------------------------------------------------------------

def test_polygamma_examples():
    assert polygamma(0, 1.0) == pytest.approx(-0.5772156649015329, rel=1e-10)
    assert polygamma(1, 1.0) == pytest.approx(1.6449340668482264, rel=1e-10)
    assert polygamma(3, 1.0) == pytest.approx(6.493939402266829, rel=1e-10)


@pytest.mark.parametrize("n", [0, 1, 3])
@pytest.mark.parametrize("x", [1e-3, 0.1, 0.5, 1.0, 2.0, 7.5, 10.0, 123.4, 1e5])
def test_polygamma_against_mpmath(n, x):
    ref = float(mpmath.polygamma(n, mpmath.mpf(x)))
    assert polygamma(n, x) == pytest.approx(ref, rel=1e-10)


def _series_oracle(n: int, x: float, terms: int = 10_000_000) -> float:
    """psi^(n)(x) = (-1)^(n+1) n! sum 1/(x+k)^(n+1) plus an integral tail bound (n >= 1)."""
    k = np.arange(terms, dtype=float)
    s = float(np.sum(1.0 / (x + k) ** (n + 1)))
    # tail: Euler-Maclaurin, integral plus half the first omitted term
    end = x + terms
    s += end ** (-n) / n + 0.5 * end ** (-(n + 1))
    return (-1) ** (n + 1) * math.factorial(n) * s


@pytest.mark.parametrize("n", [1, 3])
@pytest.mark.parametrize("x", [0.1, 0.5, 1.0, 2.0, 10.0])
def test_polygamma_against_direct_series(n, x):
    assert polygamma(n, x) == pytest.approx(_series_oracle(n, x), rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("x", [0.1, 0.5, 1.0, 2.0, 10.0])
def test_digamma_against_series(x):
    # psi(x) = -gamma + sum_k (1/(k+1) - 1/(k+x)), tail ~ (x-1)/K
    terms = 10_000_000
    k = np.arange(terms, dtype=float)
    s = float(np.sum(1.0 / (k + 1.0) - 1.0 / (k + x)))
    s += (x - 1.0) / (terms + 0.5 * (1.0 + x))
    assert digamma(x) == pytest.approx(-0.5772156649015329 + s, rel=1e-8, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.1, max_value=100.0))
def test_digamma_recurrence(x):
    assert abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) <= 1e-10


def test_polygamma_domain():
    with pytest.raises(DomainError):
        polygamma(2, 1.0)
    with pytest.raises(DomainError):
        polygamma(0, 0.0)
    with pytest.raises(DomainError):
        polygamma(1, -3.0)


# --- Lambert W ---------------------------------------------------------------

def test_lambert_examples():
    assert lambert_w0(0.0) == 0.0
    assert lambert_w0(math.e) == pytest.approx(1.0, abs=1e-14)
    assert lambert_w0(1.0) == pytest.approx(0.5671432904097838, rel=1e-12)


@pytest.mark.parametrize("x", np.concatenate([[0.0], np.geomspace(1e-12, 1e6, 60)]))
def test_lambert_round_trip(x):
    w = lambert_w0(x)
    assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, x)


@pytest.mark.parametrize("x", [1e-300, 1e-5, 0.3, 10.0, 1e50, 1e200, 1e300])
def test_lambert_against_mpmath(x):
    assert lambert_w0(x) == pytest.approx(float(mpmath.lambertw(x)), rel=1e-13)


@pytest.mark.parametrize("bad", [-1e-9, -1.0, float("nan"), float("inf")])
def test_lambert_domain(bad):
    with pytest.raises(DomainError):
        lambert_w0(bad)


# --- normal CDF --------------------------------------------------------------

def test_normal_cdf_examples():
    assert standard_normal_cdf(0.0) == 0.5
    assert standard_normal_cdf(8.0) == pytest.approx(1.0 - 6.22e-16, abs=1e-16)
    assert standard_normal_cdf(-1.959964) == pytest.approx(0.025, abs=1e-7)


@pytest.mark.parametrize("x", np.linspace(-38.0, 9.0, 95))
def test_normal_cdf_absolute_error(x):
    assert abs(standard_normal_cdf(x) - float(mpmath.ncdf(x))) <= 1e-12


def test_normal_cdf_domain():
    with pytest.raises(DomainError):
        standard_normal_cdf(float("inf"))


# --- gamma sampling ----------------------------------------------------------

def test_sample_gamma_deterministic():
    a = sample_gamma(2.0, 4.0, default_rng(11))
    b = sample_gamma(2.0, 4.0, default_rng(11))
    assert a == b


def test_sample_gamma_moments():
    x = sample_gamma(3.0, 2.0, default_rng(1), 1_000_000)
    assert abs(x.mean() - 1.5) < 0.01
    assert abs(x.var() - 0.75) < 0.02


@pytest.mark.parametrize("shape", [0.05, 0.5, 1.0, 7.0])
def test_sample_gamma_distribution(shape):
    from scipy import stats

    x = sample_gamma(shape, 1.0, default_rng(3), 200_000)
    assert stats.kstest(x, stats.gamma(shape).cdf).pvalue > 1e-3


def test_sample_gamma_rate_scaling():
    base = sample_gamma(2.5, 1.0, default_rng(5), 1000)
    scaled = sample_gamma(2.5, 4.0, default_rng(5), 1000)
    np.testing.assert_allclose(scaled, base / 4.0, rtol=1e-15)


def test_sample_log_gamma_tiny_shape_is_finite():
    x = sample_log_standard_gamma(1e-3, default_rng(0), 10_000)
    assert np.all(np.isfinite(x))


@pytest.mark.parametrize("shape,rate", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0), (1.0, -2.0)])
def test_sample_gamma_domain(shape, rate):
    with pytest.raises(DomainError):
        sample_gamma(shape, rate, default_rng(0))


# --- timing ------------------------------------------------------------------

def test_time_function_record():
    rec = time_function("add", 1_000_000)
    assert rec.function_name == "add"
    assert rec.mean_eval_time > 0
    assert rec.sample_count == 1_000_000


def test_time_function_orderings():
    t = {name: time_function(name).mean_eval_time for name in ("add", "exp", "lambert_w")}
    assert t["exp"] < t["lambert_w"]
    assert t["add"] < t["lambert_w"]


def test_time_function_errors():
    with pytest.raises(ConfigurationError):
        time_function("add", 0)
    with pytest.raises(ConfigurationError):
        time_function("sinh")
