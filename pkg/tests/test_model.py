import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gamchain.errors import DomainError, InputError
from gamchain.model import (
    GamChainParams,
    LatentPath,
    LogNParams,
    ReturnSeries,
    increment_density,
    increment_kurtosis,
    increment_mgf,
    increment_variance,
    marginal_return_density,
    marginal_return_kurtosis,
    naive_increment_density,
)


def P(a):
    return GamChainParams(a)


# --- types -------------------------------------------------------------------

def test_return_series_validation():
    s = ReturnSeries([0.1, -0.2, 0.3], "X", "1d")
    assert len(s) == 3
    with pytest.raises(ValueError):
        s.returns[0] = 1.0
    with pytest.raises(InputError):
        ReturnSeries([0.1])
    with pytest.raises(InputError):
        ReturnSeries([0.1, float("nan")])
    assert len(s.truncated(2)) == 2
    with pytest.raises(InputError):
        s.truncated(5)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("inf"), float("nan")])
def test_params_validation(bad):
    with pytest.raises(DomainError):
        GamChainParams(bad)
    with pytest.raises(DomainError):
        LogNParams(bad)


def test_latent_path_lengths():
    p = LatentPath(np.zeros(4), np.zeros(3))
    assert np.all(p.u == 1.0) and p.v.shape == (3,)
    with pytest.raises(InputError):
        LatentPath(np.zeros(4), np.zeros(4))


# --- increment law -----------------------------------------------------------

def test_increment_density_examples():
    assert increment_density(0.0, P(1.0)) == pytest.approx(0.25, rel=1e-14)
    total, _ = integrate.quad(lambda w: increment_density(w, P(0.5)), -40, 40, limit=200, epsabs=0, epsrel=1e-12)
    assert total == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(-30, 30), st.floats(0.01, 50))
def test_increment_density_symmetric(w, a):
    assert increment_density(w, P(a)) == pytest.approx(increment_density(-w, P(a)), rel=1e-12)


def test_increment_density_domain():
    with pytest.raises(DomainError):
        increment_density(float("nan"), P(1.0))


def test_naive_density_examples():
    assert naive_increment_density(0.0, 1.0, P(1.0)) == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert naive_increment_density(0.3, 1.0, P(1.0)) != pytest.approx(naive_increment_density(0.3, 2.0, P(1.0)))
    for u_prev in (0.5, 1.0, 3.0):
        total, _ = integrate.quad(lambda w: naive_increment_density(w, u_prev, P(1.7)), -60, 20, limit=400,
                                  epsabs=0, epsrel=1e-12, points=[-2 * math.log(u_prev)])
        assert total == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(DomainError):
        naive_increment_density(0.0, 0.0, P(1.0))


def test_mgf_examples():
    assert increment_mgf(0.0, P(3.3)) == pytest.approx(1.0, rel=1e-15)
    assert increment_mgf(0.5, P(1.0)) == pytest.approx(math.pi / 2, rel=1e-13)
    with pytest.raises(DomainError):
        increment_mgf(1.0, P(1.0))
    with pytest.raises(DomainError):
        increment_mgf(-2.0, P(1.0))


def test_variance_examples():
    assert increment_variance(P(1.0)) == pytest.approx(3.2898681337, rel=1e-10)
    assert increment_variance(P(0.01)) > increment_variance(P(100.0))
    assert increment_variance(P(100.0)) == pytest.approx(0.0201007, abs=1e-6)


def test_kurtosis_examples():
    assert abs(increment_kurtosis(P(1.0)) - 4.2) <= 1e-9
    assert 5.9 < increment_kurtosis(P(1e-4)) < 6.0
    assert 3.0 < increment_kurtosis(P(1e4)) < 3.001


@pytest.mark.parametrize("a", [0.3, 1.0, 3.0, 10.0])
def test_moments_match_quadrature(a):
    p = P(a)
    half = 40.0 / a + 40.0
    m2, _ = integrate.quad(lambda w: w * w * increment_density(w, p), -half, half, limit=400, epsabs=0, epsrel=1e-12)
    m4, _ = integrate.quad(lambda w: w ** 4 * increment_density(w, p), -half, half, limit=400, epsabs=0, epsrel=1e-12)
    v = increment_variance(p)
    assert m2 == pytest.approx(v, rel=1e-5)
    assert m4 == pytest.approx(increment_kurtosis(p) * v * v, rel=1e-5)


def test_mgf_second_difference():
    p = P(1.3)
    estimates = []
    for h in (0.02, 0.01):
        estimates.append((increment_mgf(h, p) - 2 * increment_mgf(0.0, p) + increment_mgf(-h, p)) / h ** 2)
    richardson = (4 * estimates[1] - estimates[0]) / 3
    assert richardson == pytest.approx(increment_variance(p), rel=1e-4)


def test_kurtosis_bound_property():
    grid = np.geomspace(1e-3, 1e4, 200)
    k = np.array([increment_kurtosis(P(a)) for a in grid])
    assert np.all((k > 3) & (k < 6))
    assert np.all(np.diff(k) < 0)


# --- return marginal ---------------------------------------------------------

def test_marginal_density_examples():
    assert marginal_return_density(0.0, 1.0, P(1.0)) == pytest.approx(2 ** -1.5, rel=1e-14)
    assert marginal_return_density(0.7, 1.0, P(1.0)) == marginal_return_density(-0.7, 1.0, P(1.0))
    total, _ = integrate.quad(lambda y: marginal_return_density(y, 1.0, P(1.5)), -200, 200, limit=400,
                              epsabs=0, epsrel=1e-12, points=[0.0])
    assert total == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(DomainError):
        marginal_return_density(0.0, 0.0, P(1.0))


@pytest.mark.parametrize("y,b,a", [(0.0, 1.0, 1.0), (1.3, 0.4, 2.5), (-3.0, 2.0, 0.7)])
def test_marginal_density_compound(y, b, a):
    def integrand(u):
        return (math.sqrt(u / (2 * math.pi)) * math.exp(-0.5 * u * y * y)
                * b ** a * u ** (a - 1) * math.exp(-b * u) / math.gamma(a))

    ref, _ = integrate.quad(integrand, 0, math.inf, limit=400, epsabs=0, epsrel=1e-12)
    assert marginal_return_density(y, b, P(a)) == pytest.approx(ref, abs=1e-7)


def test_marginal_kurtosis_examples():
    assert abs(marginal_return_kurtosis(P(3.0)) - 6.0) <= 1e-9
    # Student-t with 2A degrees of freedom: 3 + 3/(A-2); 3*9/8 at A=10
    for a in (3.0, 10.0, 4.5):
        assert abs(marginal_return_kurtosis(P(a)) - (3.0 + 3.0 / (a - 2.0))) <= 1e-9
    with pytest.raises(DomainError):
        marginal_return_kurtosis(P(2.0))
    grid = np.linspace(2.1, 50, 50)
    k = [marginal_return_kurtosis(P(a)) for a in grid]
    assert np.all(np.diff(k) < 0)
