import math

import numpy as np
import pytest
from scipy import stats

from tautline import (EtaSpec, IntervalFamily, check_eq11, check_multiresolution,
                      default_lambda, eta_bounds, fit_quantile, fit_taut, local_squeeze,
                      make_quadratic, make_quantile, sigma_hat)
from tautline.errors import InvalidData, InvalidParameter, NonTermination
from tautline.multiscale import binom_cdf, poisson_cdf
from tautline.verify import check_lemma21, check_lemma22, count_extrema


def test_default_lambda_examples():
    assert default_lambda("mean", 100, scale=1.0) == pytest.approx(2.0)
    assert default_lambda("quantile", 100, beta=0.5) == pytest.approx(1.0)


def test_sigma_hat_examples(rng):
    assert sigma_hat(np.full(10, 2.0), "rice") == 0.0
    assert sigma_hat(np.full(10, 2.0), "mad") == 0.0
    alternating = np.tile([0.0, 1.0], 50)
    assert sigma_hat(alternating, "rice") == pytest.approx(math.sqrt(0.5))
    assert sigma_hat(rng.standard_normal(10_000), "rice") == pytest.approx(1.0, abs=0.05)
    assert sigma_hat(rng.standard_normal(10_000), "mad") == pytest.approx(1.0, abs=0.05)
    with pytest.raises(InvalidData):
        sigma_hat([1.0])


def test_dyadic_family():
    fam = IntervalFamily("dyadic", 8)
    starts, stops = fam.arrays()
    got = set(zip(starts.tolist(), stops.tolist()))
    assert got == {(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8),
                   (0, 2), (2, 4), (4, 6), (6, 8), (0, 4), (4, 8), (0, 8)}
    assert len(IntervalFamily("all", 5)) == 15
    assert len(IntervalFamily("dyadic", 100)) == 201


def test_gaussian_bound_example():
    lo, hi = eta_bounds(EtaSpec("gaussian", sigma=1.0), 0, 4, n=100)
    assert hi == pytest.approx(2 * math.sqrt(2 * math.log(100)))
    assert lo == pytest.approx(-hi)


def test_quantile_bound_single_point():
    lo, hi = eta_bounds(EtaSpec("quantile", beta=0.5), 0, 1, n=4)
    assert hi == pytest.approx(0.5)
    assert lo == pytest.approx(-0.5)


def test_quantile_bounds_cover_with_stated_probability():
    n, m, beta = 200, 37, 0.3
    lo, hi = eta_bounds(EtaSpec("quantile", beta=beta), 0, m, n=n)
    # derivative sum S - m beta with S ~ Bin(m, beta): right sum >= lo and left sum <= hi
    dist = stats.binom(m, beta)
    assert dist.cdf(m * beta + lo - 1e-9) <= 1.0 / n + 1e-12 or lo == 0.0
    assert dist.sf(m * beta + hi) <= 1.0 / n + 1e-12


def test_bound_spec_validation():
    with pytest.raises(InvalidParameter):
        EtaSpec("laplace")
    with pytest.raises(InvalidParameter):
        EtaSpec("gaussian")
    with pytest.raises(InvalidParameter):
        EtaSpec("quantile", beta=1.0)
    with pytest.raises(InvalidParameter):
        eta_bounds(EtaSpec("poisson"), 0, 3, n=5)
    with pytest.raises(InvalidParameter):
        eta_bounds(EtaSpec("gaussian", sigma=1.0), 3, 3, n=5)


def test_exact_cdfs_match_scipy(rng):
    for _ in range(200):
        big_n = int(rng.integers(1, 5000))
        p = float(rng.uniform(0.001, 0.999))
        k = int(rng.integers(0, big_n + 1))
        ref = stats.binom.cdf(k, big_n, p)
        if ref > 1e-300:
            assert binom_cdf(k, big_n, p) == pytest.approx(ref, rel=1e-9)
        mu = float(rng.uniform(0.01, 3000))
        k = int(rng.integers(0, int(3 * mu) + 5))
        ref = stats.poisson.cdf(k, mu)
        if ref > 1e-300:
            assert poisson_cdf(k, mu) == pytest.approx(ref, rel=1e-9)


def test_interpolating_quantile_fit_has_no_violations(rng):
    y = rng.normal(size=64)
    fit = fit_quantile(y, 0.5, 1e-6)
    model = make_quantile(y, 0.5)
    assert check_multiresolution(model, fit, "all", EtaSpec("quantile", beta=0.5)) == []
    # every summand lies in [-1, 1]
    assert check_eq11(model, fit, 1.0) <= 1.0


def test_step_straddling_interval_flagged():
    y = np.concatenate([np.zeros(32), np.full(32, 10.0)])
    model = make_quadratic(y)
    const = np.full(64, y.mean())
    spec = EtaSpec("gaussian", sigma=1.0)
    bad = check_multiresolution(model, const, "dyadic", spec)
    assert (0, 32) in bad and (32, 64) in bad


def test_truth_satisfies_residual_bound(rng):
    f = np.sin(np.linspace(0, 6, 300))
    y = f + 0.4 * rng.standard_normal(300)
    assert check_eq11(make_quadratic(y), f, 4.0) <= 1.0


def test_single_observation_guards():
    model = make_quadratic([1.0])
    assert check_multiresolution(model, np.array([1.0]), "dyadic",
                                 EtaSpec("gaussian", sigma=1.0)) == []
    assert check_eq11(model, np.array([1.0]), 8.0) == 0.0


def test_squeeze_pure_noise(rng):
    for seed in range(5):
        y = np.random.default_rng(seed).normal(0, 1, 256)
        fit, trace = local_squeeze(y, "mean")
        assert count_extrema(fit.values, convention="interior").count <= 3
        assert check_multiresolution(make_quadratic(y), fit, "dyadic",
                                     EtaSpec("gaussian", sigma=sigma_hat(y))) == []
        assert trace.violations[-1] == []


def test_squeeze_step_signal():
    for seed in range(10):
        gen = np.random.default_rng(seed)
        y = np.concatenate([np.zeros(64), np.full(64, 10.0)]) + 0.4 * gen.standard_normal(128)
        fit, _ = local_squeeze(y, "mean")
        jumps = np.diff(fit.values)
        big = int(np.argmax(np.abs(jumps)))
        assert abs(big + 1 - 64) <= 2
        # the rest is a staircase next to the step plus small noise steps
        others = np.delete(jumps, big)
        assert np.max(np.abs(others)) < 1.0


def test_squeeze_trace_and_penalties(rng):
    y = np.concatenate([np.zeros(40), np.full(40, 3.0), np.zeros(40)])
    y = y + 0.4 * rng.standard_normal(y.size)
    fit, trace = local_squeeze(y, "mean", gamma=0.8)
    assert trace.iterations == len(trace.violations) == len(trace.summaries)
    # penalties only ever shrink
    for a, b in zip(trace.lambdas, trace.lambdas[1:]):
        assert np.all(b <= a)
    np.testing.assert_array_equal(trace.lambdas[-1], fit.lam)
    assert check_lemma22(make_quadratic(y), fit.lam, fit.values)


@pytest.mark.parametrize("kind,beta", [("quantile", 0.5), ("quantile", 0.1),
                                       ("poisson", None), ("bernoulli", None)])
def test_squeeze_other_models(rng, kind, beta):
    t = np.linspace(0, 1, 200)
    signal = np.where((t > 0.3) & (t < 0.6), 4.0, 1.0)
    if kind == "poisson":
        y = rng.poisson(signal).astype(float)
    elif kind == "bernoulli":
        y = (rng.random(200) < signal / 5).astype(float)
    else:
        y = signal + 0.4 * rng.standard_normal(200)
    fit, trace = local_squeeze(y, kind, beta=beta)
    assert trace.violations[-1] == []
    if kind == "quantile":
        assert check_lemma21(make_quantile(y, beta), fit.lam, fit.values)


def test_squeeze_all_intervals(rng):
    y = np.concatenate([np.zeros(30), np.full(30, 2.0)]) + 0.4 * rng.standard_normal(60)
    fit, _ = local_squeeze(y, "mean", family="all")
    spec = EtaSpec("gaussian", sigma=sigma_hat(y))
    assert check_multiresolution(make_quadratic(y), fit, "all", spec) == []


def test_squeeze_iteration_guard(rng):
    y = np.concatenate([np.zeros(30), np.full(30, 5.0)]) + 0.1 * rng.standard_normal(60)
    with pytest.raises(NonTermination):
        local_squeeze(y, "mean", max_iter=1)


def test_squeeze_rejects_bad_arguments():
    with pytest.raises(InvalidParameter):
        local_squeeze([0.0, 1.0], "mean", gamma=1.0)
    with pytest.raises(InvalidParameter):
        local_squeeze([0.0, 1.0], "median")
    with pytest.raises(InvalidParameter):
        local_squeeze([0.0, 1.0], "quantile")


def test_fixed_lambda_fit_runs_with_default_rule(rng):
    y = rng.normal(size=100)
    lam = default_lambda("mean", y.size, scale=sigma_hat(y))
    fit = fit_taut(make_quadratic(y), lam)
    assert check_lemma22(make_quadratic(y), lam, fit.values)
