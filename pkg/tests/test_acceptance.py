"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import csv
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from tautline import (brute_force_min, check_eq11, check_lemma21, check_lemma22,
                      check_multiresolution, check_theorem24, fit_expfam, fit_quantile, fit_taut,
                      isotonic_oracle, local_squeeze, make_expfam, make_pseudo_huber,
                      make_quadratic, make_quantile, random_tube_search, smooth_loss)
from tautline.cli import _thread_cap, main, simulate_table
from tautline.multiscale import default_spec
from tautline.verify import antitonic_oracle, check_isotonic_conditions

from conftest import ACCEPTANCE_LINES

SEED = 20240601


def report(number, title, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# 1 -------------------------------------------------------------------------------------

def test_criterion_01_smooth_losses_match_brute_force():
    gen = np.random.default_rng(SEED + 1)
    start = time.perf_counter()
    worst_cert, worst_gap, failures = 0.0, -np.inf, 0
    for i in range(500):
        n = int(gen.integers(1, 13))
        y = gen.normal(0.0, 2.0, n)
        lam = gen.uniform(0.05, 3.0, n - 1)
        model = make_quadratic(y) if i % 2 == 0 else make_pseudo_huber(y, gen.uniform(0.1, 1.0))
        fit = fit_taut(model, lam)
        cert = check_lemma22(model, lam, fit.values, tol=1e-8)
        value, _ = brute_force_min(model, lam, rng=gen)
        worst_cert = max(worst_cert, cert.worst_violation)
        worst_gap = max(worst_gap, fit.objective - value)
        failures += (not cert.passed) or fit.objective > value + 1e-6
    elapsed = time.perf_counter() - start
    report(1, "tube certificate and brute-force optimality, 500 smooth instances",
           failures == 0 and elapsed < 30,
           f"failures={failures}, worst certificate={worst_cert:.2e}, "
           f"worst T(fit)-T(brute)={worst_gap:.2e}, {elapsed:.1f}s")


# 2 and 3 -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def quantile_instances():
    gen = np.random.default_rng(SEED + 2)
    out = []
    for _ in range(200):
        n = int(gen.integers(2, 8))
        if gen.random() < 0.3:
            y = gen.integers(0, 3, n).astype(float)
        else:
            y = np.round(gen.normal(0.0, 2.0, n), 3)
        beta = float(gen.choice([0.1, 0.25, 0.5, 0.9]))
        lam = gen.uniform(0.05, 3.0, n - 1)
        out.append((y, beta, lam))
    return out


def test_criterion_02_quantile_matches_enumeration(quantile_instances):
    start = time.perf_counter()
    worst, failures = 0.0, 0
    for y, beta, lam in quantile_instances:
        fit = fit_quantile(y, beta, lam)
        model = make_quantile(y, beta)
        value, _ = brute_force_min(model, lam)
        gap = abs(fit.objective - value)
        cert = check_lemma21(model, lam, fit.values)
        worst = max(worst, gap)
        failures += gap > 1e-10 or not cert.passed
    elapsed = time.perf_counter() - start
    report(2, "quantile fit equals exhaustive minimum, 200 instances",
           failures == 0 and elapsed < 60,
           f"failures={failures}, worst |T diff|={worst:.2e}, {elapsed:.1f}s")


def test_criterion_03_rank_fit_strictly_inside(quantile_instances):
    failures, closest = 0, np.inf
    for y, beta, lam in quantile_instances:
        g = fit_quantile(y, beta, lam).latent
        n = y.size
        closest = min(closest, float(np.min(g - beta)), float(np.min(n - 1 + beta - g)))
        failures += not (np.all(g > beta) and np.all(g < n - 1 + beta))
    report(3, "rank-scale fit strictly inside (beta, n-1+beta)", failures == 0,
           f"failures={failures}, smallest margin={closest:.3g}")


# 4 -------------------------------------------------------------------------------------

def test_criterion_04_exponential_family_shortcut():
    gen = np.random.default_rng(SEED + 4)
    done, failures, worst = 0, 0, 0.0
    while done < 200:
        family = "poisson" if done % 2 == 0 else "bernoulli"
        n = int(gen.integers(2, 51))
        if family == "poisson":
            y = gen.poisson(gen.uniform(0.3, 6.0), n).astype(float)
        else:
            y = (gen.random(n) < gen.uniform(0.1, 0.9)).astype(float)
        if y.min() == y.max():
            continue
        lam = gen.uniform(0.05, 3.0, n - 1)
        fit = fit_expfam(y, lam, family)
        ls = fit_taut(make_quadratic(y), lam)
        cert = check_lemma22(make_expfam(y, family), lam, fit.values, tol=1e-8)
        worst = max(worst, cert.worst_violation)
        failures += (not cert.passed) or fit.segments != ls.segments
        done += 1
    report(4, "Poisson/Bernoulli fits certified, partitions equal least squares",
           failures == 0, f"failures={failures}, worst certificate={worst:.2e}")


# 5 -------------------------------------------------------------------------------------

def _interior_monotone_stretches(values):
    """Unit ranges a..b entered and left by strict moves in the same direction."""
    runs = []
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or values[i] != values[start]:
            runs.append((start, i, values[start]))
            start = i
    out = []
    for direction in (1.0, -1.0):
        idx = 1
        while idx < len(runs) - 1:
            if direction * (runs[idx][2] - runs[idx - 1][2]) <= 0:
                idx += 1
                continue
            last = idx
            while last + 1 < len(runs) and direction * (runs[last + 1][2] - runs[last][2]) > 0:
                last += 1
            if last - 1 >= idx:
                out.append((direction, runs[idx][0], runs[last - 1][1]))
            idx = last + 1
    return out


def test_criterion_05_monotone_stretches_match_isotonic_oracle():
    gen = np.random.default_rng(SEED + 5)
    failures, stretches, worst = 0, 0, 0.0
    for _ in range(100):
        n = int(gen.integers(3, 40))
        y = np.cumsum(gen.normal(0.0, 1.0, n)) + gen.normal(0.0, 0.5, n)
        lam = float(gen.uniform(0.05, 1.5))
        model = make_quadratic(y)
        fit = fit_taut(model, lam)
        cert = check_theorem24(model, lam, fit, tol=1e-8)
        failures += not cert.passed
        worst = max(worst, cert.worst_violation)
        for direction, a, b in _interior_monotone_stretches(fit.values):
            stretches += 1
            if direction > 0:
                ref = isotonic_oracle(model, a, b)
                ok = check_isotonic_conditions(model, ref, start=a, tol=1e-10)
            else:
                ref = antitonic_oracle(model, a, b)
                mirrored = make_quadratic(-y)
                ok = check_isotonic_conditions(mirrored, -ref, start=a, tol=1e-10)
            worst = max(worst, float(np.max(np.abs(ref - fit.values[a:b]))))
            failures += (not ok) or np.max(np.abs(ref - fit.values[a:b])) > 1e-8
    report(5, "interior monotone stretches equal the isotonic oracle",
           failures == 0 and stretches > 0,
           f"failures={failures}, stretches={stretches}, worst deviation={worst:.2e}")


# 6 -------------------------------------------------------------------------------------

def test_criterion_06_randomized_minimality():
    gen = np.random.default_rng(SEED + 6)
    failures, feasible, margin = 0, 0, np.inf
    for i in range(50):
        n = int(gen.integers(2, 11))
        y = gen.normal(0.0, 2.0, n)
        lam = gen.uniform(0.1, 2.0, n - 1)
        model = make_quadratic(y) if i % 2 == 0 else make_pseudo_huber(y, 0.3)
        fit = fit_taut(model, lam)
        res = random_tube_search(model, lam, fit, trials=10_000, rng=gen)
        feasible += res.feasible
        margin = min(margin, res.min_extrema - res.fit_extrema)
        failures += (res.min_extrema < res.fit_extrema or res.extremum_failures > 0
                     or res.feasible < 10_000)
    report(6, "no tube-feasible draw has fewer extrema than the fit",
           failures == 0, f"failures={failures}, feasible draws={feasible}, "
           f"min(draw extrema - fit extrema)={margin}")


# 7 -------------------------------------------------------------------------------------

def test_criterion_07_table_one_medians():
    start = time.perf_counter()
    rows = simulate_table(["blocks", "bumps", "heavisine"], "gaussian", ["usual"], [2048],
                          reps=20, seed=1, workers=_thread_cap())
    elapsed = time.perf_counter() - start
    expected = {"blocks": 9, "bumps": 21, "heavisine": 6}
    medians = {sig: med for sig, _, _, _, med, _, _ in rows}
    ok = all(abs(medians[s] - v) <= 1 for s, v in expected.items()) and elapsed < 120
    report(7, "median extrema at n=2048, 20 Gaussian replicates", ok,
           ", ".join(f"{s} {medians[s]:g} (target {v})" for s, v in expected.items())
           + f", {elapsed:.1f}s")


# 8 -------------------------------------------------------------------------------------

def test_criterion_08_quantile_fit_scaling():
    gen = np.random.default_rng(SEED + 8)
    sizes = [2 ** k for k in range(10, 18)]
    fit_quantile(gen.normal(size=512), 0.5, 1.0)
    times = []
    for n in sizes:
        y = gen.normal(size=n)
        lam = 0.2 * np.sqrt(n) * 0.5
        reps = 5 if n <= 2 ** 14 else 3
        best = np.inf
        for _ in range(reps):
            t0 = time.perf_counter()
            fit_quantile(y, 0.5, lam)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    ratios = [b / a for a, b in zip(times, times[1:])]
    report(8, "quantile fit time ratio per doubling, n=2^10..2^17", max(ratios) <= 2.6,
           "ratios " + " ".join(f"{r:.2f}" for r in ratios) + f", t(2^17)={times[-1]:.2f}s")


# 9 -------------------------------------------------------------------------------------

def test_criterion_09_smoothing_converges_to_quantile_optimum():
    gen = np.random.default_rng(SEED + 9)
    failures, worst_final = 0, 0.0
    for _ in range(20):
        n = int(gen.integers(2, 7))
        y = np.round(gen.normal(0.0, 2.0, n), 2)
        beta = float(gen.choice([0.1, 0.25, 0.5, 0.9]))
        lam = gen.uniform(0.05, 2.0, n - 1)
        base = make_quantile(y, beta)
        best = fit_quantile(y, beta, lam).objective
        gaps = []
        for eps in (1e-2, 1e-3, 1e-4):
            smoothed = fit_taut(smooth_loss(base, eps), lam)
            value = float(base.total_loss(smoothed.values)
                          + np.sum(lam * np.abs(np.diff(smoothed.values))))
            gaps.append(value - best)
        monotone = gaps[0] >= gaps[1] - 1e-12 and gaps[1] >= gaps[2] - 1e-12
        worst_final = max(worst_final, gaps[2])
        failures += (not monotone) or gaps[2] > 1e-3 or min(gaps) < -1e-12
    report(9, "smoothed fits approach the quantile optimum monotonically",
           failures == 0, f"failures={failures}, worst gap at eps=1e-4: {worst_final:.2e}")


# 10 ------------------------------------------------------------------------------------

_SQUEEZE_RESULTS = []


@settings(max_examples=40, deadline=None, derandomize=True,
          suppress_health_check=[HealthCheck.too_slow])
@given(kind=st.sampled_from(["mean", "quantile", "poisson", "bernoulli"]),
       n=st.integers(2, 300), seed=st.integers(0, 2 ** 32 - 1),
       family=st.sampled_from(["dyadic", "all"]))
def _squeeze_property(kind, n, seed, family):
    gen = np.random.default_rng(seed)
    if family == "all":
        n = min(n, 120)
    t = np.arange(1, n + 1) / n
    signal = 1.0 + 2.0 * (t > 0.4) - 1.5 * (t > 0.75) + np.sin(6 * t)
    beta = 0.5
    if kind == "poisson":
        y = gen.poisson(np.maximum(signal, 0.2)).astype(float)
    elif kind == "bernoulli":
        y = (gen.random(n) < (signal - signal.min() + 0.2) / (np.ptp(signal) + 0.4)).astype(float)
    else:
        beta = float(gen.choice([0.1, 0.5, 0.9])) if kind == "quantile" else None
        y = signal + 0.4 * gen.standard_normal(n)
    if kind in ("poisson", "bernoulli") and y.min() == y.max():
        return
    fit, _ = local_squeeze(y, kind, family=family, beta=beta)
    if kind == "mean":
        model = make_quadratic(y)
    elif kind == "quantile":
        model = make_quantile(y, beta)
    else:
        model = make_expfam(y, kind)
    spec = default_spec(kind, y, beta)
    bad = check_multiresolution(model, fit, family, spec)
    ratio = check_eq11(model, fit, 8.0)
    _SQUEEZE_RESULTS.append((kind, family, len(bad), ratio))


def test_criterion_10_squeeze_postconditions():
    _SQUEEZE_RESULTS.clear()
    _squeeze_property()
    violations = sum(r[2] for r in _SQUEEZE_RESULTS)
    worst = max(r[3] for r in _SQUEEZE_RESULTS)
    ok = violations == 0 and worst <= 1.0
    report(10, "squeezed fits satisfy the multiresolution and residual bounds", ok,
           f"{len(_SQUEEZE_RESULTS)} fits, violations={violations}, "
           f"worst residual ratio (c_o=8)={worst:.3f}")


# 11 ------------------------------------------------------------------------------------

def test_criterion_11_tube_export_touches_at_change_points(tmp_path):
    gen = np.random.default_rng(SEED + 11)
    x = np.arange(1, 26)
    truth = np.where(x <= 8, 0.0, np.where(x <= 17, 4.0, 1.5))
    y = truth + gen.normal(0.0, 1.0, 25)
    data = tmp_path / "fig.csv"
    with open(data, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        w.writerows(zip(x.tolist(), y.tolist()))
    args = ["--method", "huber", "--delta", "0.1", "--lambda", "2"]
    tube_out, fit_out = tmp_path / "tube.csv", tmp_path / "fit.csv"
    assert main(["tube", str(data), "-o", str(tube_out)] + args) == 0
    assert main(["fit", str(data), "-o", str(fit_out)] + args) == 0
    with open(tube_out, newline="") as fh:
        tube = list(csv.DictReader(fh))
    with open(fit_out, newline="") as fh:
        fitted = np.array([float(r["fitted"]) for r in csv.DictReader(fh)])
    csum = np.array([float(r["cumsum"]) for r in tube])
    change = np.flatnonzero(fitted[1:] != fitted[:-1])
    inside = bool(np.all(np.abs(csum) <= 2.0 + 1e-8))
    touching = np.flatnonzero(np.abs(np.abs(csum[:-1]) - 2.0) <= 1e-8)
    signs_ok = all(np.sign(csum[k]) == np.sign(fitted[k + 1] - fitted[k]) for k in change)
    ok = inside and np.array_equal(touching, change) and signs_ok and len(change) > 0
    report(11, "tube export stays in [-2, 2] and touches exactly at change points", ok,
           f"change points {(change + 1).tolist()}, touches {(touching + 1).tolist()}, "
           f"max |cumsum|={np.max(np.abs(csum)):.6f}")
