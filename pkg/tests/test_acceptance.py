"""Acceptance criteria 1-10, one PASS/FAIL line each at the stated tolerances."""

import math
import time

import numpy as np
import pytest
from scipy.special import gammaln

from gamchain.bench import growth_rate, run_benchmark
from gamchain.derivations import run_all
from gamchain.evaluation import residual_pass_rate
from gamchain.fitting import FitConfig
from gamchain.model import GamChainParams, ReturnSeries, increment_kurtosis, increment_variance, \
    marginal_return_kurtosis
from gamchain.numerics import polygamma, time_function
from gamchain.simulate import gamchain_log_path, simulate, simulate_gamchain
from gamchain.storage import write_posterior_csv
from gamchain.evaluation import fit_posterior
from gamchain.vi import (
    Expectations,
    GammaPosterior,
    elbo,
    em_gradient,
    em_objective,
    estep,
    floored_squares,
    init_posterior,
    update_u,
    update_v,
)
from scipy import optimize


@pytest.fixture
def verdict(request, capsys):
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        request.config._acceptance_lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line
    return record


# --- 1 -------------------------------------------------------------------------

def test_criterion_1_kurtosis_bound(verdict):
    t0 = time.perf_counter()
    grid = np.geomspace(1e-3, 1e4, 200)
    k = np.array([increment_kurtosis(GamChainParams(a)) for a in grid])
    elapsed = time.perf_counter() - t0
    inside = bool(np.all((k > 3) & (k < 6)))
    decreasing = bool(np.all(np.diff(k) < 0))
    ok = inside and decreasing and abs(k[0] - 6) <= 1e-2 and abs(k[-1] - 3) <= 1e-2 and elapsed < 1.0
    verdict(1, ok, f"inside={inside} decreasing={decreasing} K(1e-3)={k[0]:.6f} K(1e4)={k[-1]:.6f} "
                   f"time={elapsed:.3f}s")


# --- 2 -------------------------------------------------------------------------

def _series_polygamma(n, x, terms=2_000_000):
    # psi^(n)(x) = (-1)^(n+1) n! sum_k 1/(x+k)^(n+1), tail by the integral bound
    k = np.arange(terms, dtype=float)
    s = np.sum(1.0 / (x + k) ** (n + 1))
    tail = 1.0 / (n * (x + terms) ** n) + 0.5 / (x + terms) ** (n + 1)
    return (-1) ** (n + 1) * math.factorial(n) * (s + tail)


def test_criterion_2_spot_values(verdict):
    p1 = GamChainParams(1.0)
    v_oracle = 2 * _series_polygamma(1, 1.0)
    k_oracle = 3 + _series_polygamma(3, 1.0) / (2 * _series_polygamma(1, 1.0) ** 2)
    # marginal return kurtosis 3 Gamma(A-2) Gamma(A) / Gamma(A-1)^2
    def mk(a):
        return 3 * math.exp(gammaln(a - 2) + gammaln(a) - 2 * gammaln(a - 1))
    checks = {
        "V(1)": (increment_variance(p1), math.pi ** 2 / 3, v_oracle),
        "K(1)": (increment_kurtosis(p1), 4.2, k_oracle),
        "Kr(3)": (marginal_return_kurtosis(GamChainParams(3.0)), 6.0, mk(3.0)),
        # gamma-function evaluation 3*G(8)G(10)/G(9)^2 = 3*9/8 = 3.375
        "Kr(10)": (marginal_return_kurtosis(GamChainParams(10.0)), 3.375, mk(10.0)),
    }
    ok = all(abs(got - want) <= 1e-9 and abs(want - oracle) <= 1e-9 for got, want, oracle in checks.values())
    detail = " ".join(f"{k}={v[0]:.12g}" for k, v in checks.items())
    verdict(2, ok, detail + " (Kr(10) checked against the gamma-function value 3.375)")


# --- 3 -------------------------------------------------------------------------

def test_criterion_3_simulator_moments(verdict):
    t0 = time.perf_counter()
    log_u, _ = gamchain_log_path(GamChainParams(1.0), 1_000_000, np.random.default_rng(2024))
    w = np.diff(log_u)
    elapsed = time.perf_counter() - t0
    n = w.size
    mean = w.mean()
    c = w - mean
    var = np.mean(c ** 2)
    exk = np.mean(c ** 4) / var ** 2 - 3
    se_mean = math.sqrt(var / n)
    se_var = math.sqrt((np.mean(c ** 4) - var ** 2) / n)
    # batch means for the kurtosis standard error
    batches = c[: n - n % 100].reshape(100, -1)
    kb = np.mean(batches ** 4, axis=1) / np.mean(batches ** 2, axis=1) ** 2 - 3
    se_k = kb.std(ddof=1) / math.sqrt(kb.size)
    z = (abs(mean) / se_mean, abs(var - math.pi ** 2 / 3) / se_var, abs(exk - 1.2) / se_k)
    ok = max(z) <= 3 and elapsed < 30
    verdict(3, ok, f"mean={mean:.5f} var={var:.5f} excess_kurtosis={exk:.4f} z={z[0]:.2f},{z[1]:.2f},{z[2]:.2f} "
                   f"time={elapsed:.2f}s")


# --- 4 -------------------------------------------------------------------------

def _t2_oracle(a, y):
    h1, h2 = 0.5 * y[0] ** 2, 0.5 * y[1] ** 2
    x = optimize.brentq(lambda x: x * ((a + 1.5) / (x + h1) + (a + 0.5) / (x + h2)) - 2 * a, 1e-12, 1e12,
                        xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    return np.array([x + h1, x + h2, 2 * a / x])


def test_criterion_4_vi_correctness(verdict):
    # ELBO never decreases over a coordinate sweep
    data = simulate_gamchain(GamChainParams(1.0), 300, rng=np.random.default_rng(3))
    series, params = data.series, GamChainParams(1.0)
    post, _ = estep(init_posterior(series), series, params, 1)
    values = [elbo(post, series, params)]
    for _ in range(50):
        post, _ = estep(post, series, params, 1)
        values.append(elbo(post, series, params))
    drops = np.diff(values)
    monotone = bool(np.all(drops >= -1e-9 * np.maximum(1.0, np.abs(values[:-1]))))

    # T=2 fixed point against the algebraic solve
    fp_err = 0.0
    for a, y in [(1.0, (1.0, 1.0)), (0.4, (2.0, 0.1)), (3.0, (-0.5, 1.2))]:
        s = ReturnSeries(np.array(y))
        fp, _ = estep(init_posterior(s), s, GamChainParams(a), 2000)
        fp_err = max(fp_err, float(np.max(np.abs(np.r_[fp.b_u, fp.b_v] - _t2_oracle(a, y)))))

    # conjugate local updates equal the conditional posterior parameters
    rng = np.random.default_rng(4)
    s = ReturnSeries(rng.standard_normal(5))
    g = GammaPosterior(rng.uniform(0.5, 3, 5), rng.uniform(0.5, 3, 5), rng.uniform(0.5, 3, 4),
                       rng.uniform(0.5, 3, 4))
    a = 0.9
    h = 0.5 * floored_squares(s.returns)
    ev, eu = g.mean_v, g.mean_u
    expected_u = {0: (a + 1.5, ev[0] + h[0]), 2: (2 * a + 0.5, ev[2] + ev[1] + h[2]), 4: (a + 0.5, ev[3] + h[4])}
    exact = all(update_u(g, s, GamChainParams(a), t) == pytest.approx(v, rel=1e-15, abs=0)
                for t, v in expected_u.items())
    exact &= all(update_v(g, GamChainParams(a), t) == pytest.approx((2 * a, eu[t] + eu[t + 1]), rel=1e-15, abs=0)
                 for t in range(4))
    ok = monotone and fp_err <= 1e-10 and exact
    verdict(4, ok, f"elbo_monotone={monotone} (min step {drops.min():.2e}) t2_fixed_point_err={fp_err:.2e} "
                   f"conjugate_updates_exact={exact}")


# --- 5 -------------------------------------------------------------------------

def test_criterion_5_em_gradient(verdict):
    worst = 0.0
    for a in (0.5, 1.0, 2.0):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            n = 40
            ex = Expectations(rng.uniform(0.5, 2, n), rng.normal(0, 1, n), rng.normal(0, 1, n - 1))
            h = 1e-5 * a
            fd = (em_objective(ex, a + h, n) - em_objective(ex, a - h, n)) / (2 * h)
            g = em_gradient(ex, GamChainParams(a), n)
            worst = max(worst, abs(g - fd) / abs(fd))
    verdict(5, worst <= 1e-6, f"max relative error vs central differences {worst:.2e}")


# --- 6 and 7 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus_rates():
    t0 = time.perf_counter()
    corpus = [simulate("gam", 1.0, 2000, seed=s) for s in range(100)]
    rates = {
        "c3": residual_pass_rate(corpus, "c3", FitConfig())[0],
        "c1": residual_pass_rate(corpus, "c1", FitConfig())[0],
        "oracle": residual_pass_rate(corpus, "oracle")[0],
    }
    # per-series seeds for the particle engine
    c4 = [residual_pass_rate([d], "c4", FitConfig(particles=20, max_rounds=30, tol_a=1e-3, seed=k), seed=k)[0]
          for k, d in enumerate(corpus)]
    rates["c4"] = float(np.mean(c4))
    rates["seconds"] = time.perf_counter() - t0
    return rates


@pytest.mark.slow
def test_criterion_6_c3_vs_c4(verdict, corpus_rates):
    r = corpus_rates
    ok = r["c3"] >= 0.80 and abs(r["c3"] - r["c4"]) <= 0.10 and r["seconds"] < 600
    verdict(6, ok, f"pass rates c3={r['c3']:.2f} c4(N=20)={r['c4']:.2f} oracle={r['oracle']:.2f} "
                   f"time={r['seconds']:.0f}s")


@pytest.mark.slow
def test_criterion_7_c1_below_c3(verdict, corpus_rates):
    r = corpus_rates
    verdict(7, r["c1"] < r["c3"], f"pass rates c1={r['c1']:.2f} c3={r['c3']:.2f}")


# --- 8 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_performance(verdict):
    lengths = [10_000, 50_000, 100_000]
    reports = run_benchmark(["c3", "c2"], lengths, particles=2, iterations=1000, repetitions=3)
    reports += run_benchmark(["c1"], [100_000], iterations=1000, repetitions=3)
    e = {(r.engine, r.sequence_length): r.estep_seconds for r in reports}
    ratio = growth_rate(reports, "c3") / growth_rate(reports, "c2")
    times = {name: time_function(name, 1_000_000).mean_eval_time
             for name in ("add", "exp", "gamma", "lambert_w", "digamma")}
    order = list(times)
    fn_ok = all(times[a] < times[b] for a, b in zip(order, order[1:]))
    ok = e["c3", 100_000] < e["c2", 100_000] and e["c3", 100_000] < e["c1", 100_000] and ratio <= 0.5 and fn_ok
    verdict(8, ok, f"E-step at T=1e5: c3={e['c3', 100_000]:.2f}s c2={e['c2', 100_000]:.2f}s "
                   f"c1={e['c1', 100_000]:.2f}s; growth ratio c3/c2={ratio:.3f}; function ns "
                   + ", ".join(f"{k}={v * 1e9:.2f}" for k, v in times.items()) + f"; function_order={fn_ok}")


# --- 9 -------------------------------------------------------------------------

def test_criterion_9_determinism(verdict, tmp_path):
    series = simulate("gam", 1.0, 500, seed=9).series
    same = {}
    for engine in ("c1", "c2", "c3", "c4"):
        blobs = []
        for k in range(2):
            cfg = FitConfig(max_rounds=25, seed=123)
            report, post = fit_posterior(series, engine, cfg)
            path = write_posterior_csv(post, tmp_path / f"{engine}{k}.csv")
            blobs.append(report.to_json().encode() + path.read_bytes())
        same[engine] = blobs[0] == blobs[1]
    verdict(9, all(same.values()), " ".join(f"{k}={'identical' if v else 'differs'}" for k, v in same.items()))


# --- 10 ------------------------------------------------------------------------

def test_criterion_10_derivations(verdict):
    t0 = time.perf_counter()
    checks = run_all()
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and elapsed < 60
    verdict(10, ok, f"{sum(c.passed for c in checks)}/{len(checks)} checks passed in {elapsed:.1f}s")
