"""Optimality certificates and independent oracles for TV-penalized fits.

Every check works on the unit level: with tie blocks (``bounds``) each block
is one unit whose derivative is the within-block sum, and penalties live on
the gaps between consecutive units.  Locations are reported 0-based; an
interval ``(start, stop)`` is half-open.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidData, InvalidParameter, UnsupportedCertificate
from .losses import LossModel, _ResponseLoss
from .taut import Fit, as_lambda, objective

__all__ = [
    "Certificate",
    "Extrema",
    "TubeSearch",
    "check_lemma21",
    "check_lemma22",
    "check_tube",
    "count_extrema",
    "isotonic_oracle",
    "antitonic_oracle",
    "check_isotonic_conditions",
    "check_theorem24",
    "brute_force_min",
    "random_tube_search",
]


@dataclass(frozen=True)
class Certificate:
    """Outcome of an optimality check.

    ``worst_violation`` is the largest amount by which any inequality fails
    (0 when all hold strictly); ``passed`` is ``worst_violation <= tolerance``.
    """

    passed: bool
    worst_violation: float
    location: Optional[tuple]
    condition: str
    tolerance: float

    def __bool__(self) -> bool:
        return self.passed


def _tolerance(tol, lam) -> float:
    scale = max(1.0, float(np.max(lam))) if len(lam) else 1.0
    return float(tol) * scale


def _unit_bounds(n, bounds):
    if bounds is None:
        return np.arange(n + 1, dtype=np.int64)
    bounds = np.asarray(bounds, dtype=np.int64)
    if bounds[0] != 0 or bounds[-1] != n or np.any(np.diff(bounds) <= 0):
        raise InvalidData("bounds must increase strictly from 0 to n")
    return bounds


def _unit_values(f, bounds):
    starts = bounds[:-1]
    fu = f[starts]
    if not np.array_equal(np.repeat(fu, np.diff(bounds)), f):
        raise InvalidData("fit is not constant within tie blocks")
    return fu


def _prepare(model: LossModel, lam, f, bounds):
    f = np.asarray(f.values if isinstance(f, Fit) else f, dtype=float)
    if f.shape != (model.n,):
        raise InvalidData(f"fit has shape {f.shape}, model has n={model.n}")
    bounds = _unit_bounds(model.n, bounds)
    fu = _unit_values(f, bounds)
    lam = as_lambda(lam, fu.size - 1)
    d_right = np.add.reduceat(model.deriv_right(f), bounds[:-1])
    d_left = np.add.reduceat(model.deriv_left(f), bounds[:-1])
    return fu, lam, d_right, d_left


def check_lemma21(model: LossModel, lam, f, tol: float = 1e-8, bounds=None) -> Certificate:
    """Directional-derivative certificate valid for any convex losses.

    For all unit ranges ``j..k`` checks::

        sum_{j..k} R'(f+) >= lam_{j-1} s_(f_{j-1} - f_j) + lam_k s_(f_{k+1} - f_k)
        sum_{j..k} R'(f-) <= lam_{j-1} s^(f_{j-1} - f_j) + lam_k s^(f_{k+1} - f_k)

    with ``s_(z) = 1{z > 0} - 1{z <= 0}``, ``s^(z) = 1{z >= 0} - 1{z < 0}``
    and zero penalties outside the range.  Linear time: for fixed ``k`` the
    binding ``j`` is found from a running maximum (minimum) of prefix sums.
    """
    fu, lam, d_right, d_left = _prepare(model, lam, f, bounds)
    m = fu.size
    tol = _tolerance(tol, lam)
    gap_lam = np.concatenate([[0.0], lam, [0.0]])        # index k -> lam_k
    diff_prev = np.concatenate([[0.0], fu[:-1] - fu[1:]])  # f_{j-1} - f_j
    diff_next = np.concatenate([fu[1:] - fu[:-1], [0.0]])  # f_{k+1} - f_k
    low_sign = lambda z: np.where(z > 0, 1.0, -1.0)  # noqa: E731
    high_sign = lambda z: np.where(z >= 0, 1.0, -1.0)  # noqa: E731

    a_low = gap_lam[:m] * low_sign(diff_prev)
    b_low = gap_lam[1:] * low_sign(diff_next)
    a_high = gap_lam[:m] * high_sign(diff_prev)
    b_high = gap_lam[1:] * high_sign(diff_next)

    p_right = np.concatenate([[0.0], np.cumsum(d_right)])
    p_left = np.concatenate([[0.0], np.cumsum(d_left)])
    # first line: P+_k - B_k >= max_{j<=k} (P+_{j-1} + A_j)
    run_max = np.maximum.accumulate(p_right[:-1] + a_low)
    viol_low = run_max - (p_right[1:] - b_low)
    # second line: P-_k - B'_k <= min_{j<=k} (P-_{j-1} + A'_j)
    run_min = np.minimum.accumulate(p_left[:-1] + a_high)
    viol_high = (p_left[1:] - b_high) - run_min

    k_low, k_high = int(np.argmax(viol_low)), int(np.argmax(viol_high))
    if viol_low[k_low] >= viol_high[k_high]:
        worst, k = float(viol_low[k_low]), k_low
        j = int(np.argmax(p_right[:k + 1] + a_low[:k + 1]))
        condition = "right-derivative sums"
    else:
        worst, k = float(viol_high[k_high]), k_high
        j = int(np.argmin(p_left[:k + 1] + a_high[:k + 1]))
        condition = "left-derivative sums"
    worst = max(worst, 0.0)
    return Certificate(worst <= tol, worst, (j, k + 1), condition, tol)


def check_lemma22(model: LossModel, lam, f, tol: float = 1e-8, bounds=None) -> Certificate:
    """Tube certificate for differentiable losses.

    ``C_k = sum_{i<=k} R_i'(f_i)`` must lie in ``[-lam_k, lam_k]``, equal
    ``+lam_k`` where the fit steps up after unit ``k``, ``-lam_k`` where it
    steps down, and ``C_m = 0``.  Location is the 0-based unit ``k``.
    """
    if not model.differentiable:
        raise UnsupportedCertificate(
            f"{type(model).__name__} is not differentiable; use check_lemma21")
    fu, lam, d_right, _ = _prepare(model, lam, f, bounds)
    tol = _tolerance(tol, lam)
    c = np.cumsum(d_right)
    bound = np.concatenate([lam, [0.0]])
    viol = np.maximum(np.abs(c) - bound, 0.0)
    step = np.concatenate([np.sign(fu[1:] - fu[:-1]), [0.0]])
    viol = np.where(step > 0, np.maximum(viol, np.abs(c - bound)), viol)
    viol = np.where(step < 0, np.maximum(viol, np.abs(c + bound)), viol)
    k = int(np.argmax(viol))
    worst = float(viol[k])
    return Certificate(worst <= tol, worst, (k,), "cumulative derivative tube", tol)


def check_tube(model: LossModel, lam, f, tol: float = 1e-8, bounds=None) -> bool:
    """Feasibility ``|sum_{i<=k} R_i'(f_i)| <= lam_k`` for every ``k`` (``lam_m = 0``)."""
    fu, lam, d_right, _ = _prepare(model, lam, f, bounds)
    tol = _tolerance(tol, lam)
    c = np.cumsum(d_right)
    return bool(np.all(np.abs(c) <= np.concatenate([lam, [0.0]]) + tol))


# -- local extrema --------------------------------------------------------------

@dataclass(frozen=True)
class Extrema:
    """Local maxima and minima as 0-based half-open index ranges."""

    maxima: tuple
    minima: tuple

    @property
    def count(self) -> int:
        return len(self.maxima) + len(self.minima)


def _snapped_runs(f, tol):
    f = np.asarray(f, dtype=float)
    runs = []
    start = 0
    for i in range(1, f.size + 1):
        if i == f.size or abs(f[i] - f[start]) > tol:
            runs.append((start, i, float(f[start])))
            start = i
    return runs


def count_extrema(f, tol: float = 1e-9, convention: str = "literal") -> Extrema:
    """Maximal constant runs strictly above (below) all existing neighbours.

    ``convention="literal"`` counts every such run except the whole range,
    so monotone end pieces count.  ``convention="interior"`` only counts runs
    with neighbours on both sides.  Values within ``tol`` of the first value
    of the current run are treated as equal.
    """
    if convention not in ("literal", "interior"):
        raise InvalidParameter(f"unknown convention {convention!r}")
    runs = _snapped_runs(f, tol)
    maxima, minima = [], []
    if len(runs) < 2:
        return Extrema((), ())
    for idx, (start, stop, value) in enumerate(runs):
        neighbours = []
        if idx > 0:
            neighbours.append(runs[idx - 1][2])
        if idx + 1 < len(runs):
            neighbours.append(runs[idx + 1][2])
        if convention == "interior" and len(neighbours) < 2:
            continue
        if all(value > v for v in neighbours):
            maxima.append((start, stop))
        elif all(value < v for v in neighbours):
            minima.append((start, stop))
    return Extrema(tuple(maxima), tuple(minima))


# -- monotone regression -----------------------------------------------------------

def isotonic_oracle(model: LossModel, start: int = 0, stop: Optional[int] = None,
                    bounds=None) -> np.ndarray:
    """Isotonic minimizer of ``sum R_i`` over units ``start:stop`` (pool adjacent violators).

    A block's value is the smallest root ``min{z : R'_block(z+) >= 0}``;
    adjacent blocks are pooled while their values decrease.  Returns one
    value per unit of the range.
    """
    b = _unit_bounds(model.n, bounds)
    m = b.size - 1
    stop = m if stop is None else stop
    if not 0 <= start < stop <= m:
        raise IndexError(f"invalid unit range [{start}, {stop}) for {m} units")
    blocks = []  # [first_unit, stop_unit, value]
    for u in range(start, stop):
        blocks.append([u, u + 1, model.lower_inverse(int(b[u]), int(b[u + 1]), 0.0)])
        while len(blocks) >= 2 and blocks[-2][2] > blocks[-1][2]:
            first = blocks[-2][0]
            del blocks[-2:]
            blocks.append([first, u + 1,
                           model.lower_inverse(int(b[first]), int(b[u + 1]), 0.0)])
    out = np.empty(stop - start)
    for first, last, value in blocks:
        out[first - start:last - start] = value
    return out


class _Reflected(LossModel):
    """``R_i(-z)``: turns antitonic problems into isotonic ones."""

    def __init__(self, base: LossModel):
        super().__init__(base.n)
        self.base = base
        self.differentiable = base.differentiable

    def _value(self, sl, z):
        return self.base._value(sl, -z)

    def _deriv(self, sl, z, side):
        other = "left" if side == "right" else "right"
        return -self.base._deriv(sl, -z, other)

    def lower_inverse(self, start, stop, t):
        return -self.base.upper_inverse(start, stop, -t)

    def upper_inverse(self, start, stop, t):
        return -self.base.lower_inverse(start, stop, -t)


def antitonic_oracle(model: LossModel, start: int = 0, stop: Optional[int] = None,
                     bounds=None) -> np.ndarray:
    """Antitonic minimizer of ``sum R_i`` over units ``start:stop``."""
    return -isotonic_oracle(_Reflected(model), start, stop, bounds)


def check_isotonic_conditions(model: LossModel, values, start: int = 0,
                              bounds=None, tol: float = 1e-10) -> Certificate:
    """Optimality of an isotonic vector over units ``start:start+len(values)``.

    For every ``j <= k`` inside one constant run, ``sum_{j..k} R'(f-) <= 0``
    when ``j`` starts the run and ``sum_{j..k} R'(f+) >= 0`` when ``k`` ends
    it (the neighbours outside the range count as -inf and +inf).
    """
    values = np.asarray(values, dtype=float)
    b = _unit_bounds(model.n, bounds)
    if np.any(np.diff(values) < 0):
        return Certificate(False, float(np.max(-np.diff(values))), None, "monotonicity", tol)
    stop = start + values.size
    obs = np.repeat(values, np.diff(b[start:stop + 1]))
    sl = slice(int(b[start]), int(b[stop]))
    sub_b = b[start:stop + 1] - b[start]
    d_right = np.add.reduceat(model._deriv(sl, obs, "right"), sub_b[:-1])
    d_left = np.add.reduceat(model._deriv(sl, obs, "left"), sub_b[:-1])
    worst, where = 0.0, None
    for run_start, run_stop, _ in _snapped_runs(values, 0.0):
        # run_start begins a run: prefix sums of left derivatives must be <= 0
        pre = np.cumsum(d_left[run_start:run_stop])
        k = int(np.argmax(pre))
        if pre[k] > worst:
            worst, where = float(pre[k]), (start + run_start, start + run_start + k + 1)
        # run_stop - 1 ends a run: suffix sums of right derivatives must be >= 0
        suf = np.cumsum(d_right[run_start:run_stop][::-1])
        k = int(np.argmin(suf))
        if -suf[k] > worst:
            worst, where = float(-suf[k]), (start + run_stop - k - 1, start + run_stop)
    return Certificate(worst <= tol, worst, where, "isotonic optimality", tol)


def check_theorem24(model: LossModel, lam, fit, tol: float = 1e-8, bounds=None) -> Certificate:
    """Interior monotone stretches of a fit solve the matching monotone problem.

    For every maximal stretch of units ``a..b`` with ``f_{a-1} < f_a <= ... <=
    f_b < f_{b+1}`` (and the antitonic analogue) on which the penalties of
    gaps ``a-1..b`` are all equal, the fit restricted to ``a..b`` must equal
    the isotonic (antitonic) oracle there.
    """
    values = np.asarray(fit.values if isinstance(fit, Fit) else fit, dtype=float)
    b = _unit_bounds(model.n, bounds)
    fu = _unit_values(values, b)
    lam = as_lambda(lam, fu.size - 1)
    runs = _snapped_runs(fu, 0.0)
    worst, where, checked = 0.0, None, 0
    for direction in (1.0, -1.0):
        idx = 1
        while idx < len(runs) - 1:
            if direction * (runs[idx][2] - runs[idx - 1][2]) <= 0:
                idx += 1
                continue
            last = idx
            while last + 1 < len(runs) and direction * (runs[last + 1][2] - runs[last][2]) > 0:
                last += 1
            # stretch idx..last-1: entered from below, left going up
            if last - 1 >= idx:
                a, bb = runs[idx][0], runs[last - 1][1]
                gaps = lam[a - 1:bb]
                if np.all(gaps == gaps[0]):
                    oracle = isotonic_oracle if direction > 0 else antitonic_oracle
                    ref = oracle(model, a, bb, bounds=b)
                    dev = float(np.max(np.abs(ref - fu[a:bb])))
                    checked += 1
                    if dev > worst:
                        worst, where = dev, (a, bb)
            idx = last + 1
    cert = Certificate(worst <= tol, worst, where, f"monotone stretches ({checked} checked)", tol)
    return cert


# -- brute force -------------------------------------------------------------------

def _enumeration_min(model: _ResponseLoss, lam, chunk: int = 200_000):
    n = model.n
    levels = np.unique(model.y)
    if levels.size ** n > 5_000_000:
        raise InvalidParameter(f"enumeration over {levels.size}^{n} states is too large")
    best_val, best_arg = np.inf, None
    grid = itertools.product(levels, repeat=n)
    while True:
        block = np.array(list(itertools.islice(grid, chunk)), dtype=float)
        if block.size == 0:
            break
        vals = model._value(slice(0, n), block.T).sum(axis=0)
        if n > 1:
            vals = vals + np.abs(np.diff(block, axis=1)) @ lam
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_arg = float(vals[i]), block[i].copy()
    return best_val, best_arg


def _interval_directions(n):
    dirs = []
    for j in range(n):
        for k in range(j + 1, n + 1):
            d = np.zeros(n)
            d[j:k] = 1.0
            dirs.append(d)
            dirs.append(-d)
    return np.array(dirs)


def _batch_objective(model, lam, cand):
    vals = model._value(slice(0, model.n), cand.T).sum(axis=0)
    if model.n > 1:
        vals = vals + np.abs(np.diff(cand, axis=1)) @ lam
    return vals


def _interval_descent(model, lam, f, width, passes=50, tol=1e-10):
    """Golden-section line searches along every interval indicator, best move first."""
    dirs = _interval_directions(model.n)
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    current = _batch_objective(model, lam, f[None, :])[0]
    for _ in range(passes):
        lo = np.zeros(len(dirs))
        hi = np.full(len(dirs), width)
        while hi[0] - lo[0] > tol:
            x1 = hi - ratio * (hi - lo)
            x2 = lo + ratio * (hi - lo)
            v1 = _batch_objective(model, lam, f + x1[:, None] * dirs)
            v2 = _batch_objective(model, lam, f + x2[:, None] * dirs)
            left = v1 <= v2
            hi = np.where(left, x2, hi)
            lo = np.where(left, lo, x1)
        steps = 0.5 * (lo + hi)
        vals = _batch_objective(model, lam, f + steps[:, None] * dirs)
        i = int(np.argmin(vals))
        if not vals[i] < current - 1e-15:
            break
        f = f + steps[i] * dirs[i]
        current = vals[i]
    return f, current


def _split_variable_polish(model, lam, x0):
    """Smooth reformulation ``f_{k+1} - f_k = p_k - q_k`` with ``p, q >= 0``."""
    n = model.n
    diff = np.diff(np.eye(n), axis=0)
    eye = np.eye(n - 1)
    cons = {
        "type": "eq",
        "fun": lambda v: diff @ v[:n] - v[n:2 * n - 1] + v[2 * n - 1:],
        "jac": lambda v: np.hstack([diff, -eye, eye]),
    }
    d = np.diff(x0)
    v0 = np.concatenate([x0, np.maximum(d, 0.0), np.maximum(-d, 0.0)])
    res = minimize(
        lambda v: model.total_loss(v[:n]) + lam @ (v[n:2 * n - 1] + v[2 * n - 1:]),
        v0,
        jac=lambda v: np.concatenate([model.deriv_right(v[:n]), lam, lam]),
        method="SLSQP",
        constraints=[cons],
        bounds=[(None, None)] * n + [(0.0, None)] * (2 * n - 2),
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    return res.x[:n]


def brute_force_min(model: LossModel, lam, rng=None, starts: int = 5):
    """Independent minimizer for small instances: ``(value, argmin)``.

    Piecewise-linear losses of the form ``rho(z - Y_i)`` (``n <= 7``): exhaustive
    search over ``{Y_(1), ..., Y_(n)}^n``, which contains a minimizer.  Smooth
    losses (``n <= 12``): the best of ``starts`` points drawn from a 20-per-axis
    grid over ``[min Y, max Y]`` is polished by SLSQP on the split-variable
    reformulation and then by golden-section searches along all interval
    indicators ``+-1{j..k}``, the directions that certify optimality.
    """
    n = model.n
    lam = as_lambda(lam, n - 1)
    if not model.differentiable:
        if not isinstance(model, _ResponseLoss):
            raise InvalidParameter("enumeration needs losses of the form rho(z - Y_i)")
        if n > 7:
            raise InvalidParameter(f"enumeration mode supports n <= 7, got {n}")
        return _enumeration_min(model, lam)
    if n > 12:
        raise InvalidParameter(f"smooth mode supports n <= 12, got {n}")
    if isinstance(model, _ResponseLoss):
        low, high = float(model.y.min()), float(model.y.max())
    else:
        low, high = -1.0, 1.0
    if n == 1:
        z = model.lower_inverse(0, 1, 0.0)
        return float(model.total_loss(np.array([z]))), np.array([z])
    rng = np.random.default_rng(0) if rng is None else rng
    grid = np.linspace(low, high, 20)
    cands = grid[rng.integers(0, 20, size=(starts, n))]
    cands[0] = 0.5 * (low + high)
    vals = _batch_objective(model, lam, cands)
    f = _split_variable_polish(model, lam, cands[int(np.argmin(vals))])
    f, value = _interval_descent(model, lam, f, width=max(high - low, 1.0))
    return float(objective(model, lam, f)), f


# -- randomized minimality -------------------------------------------------------------

@dataclass(frozen=True)
class TubeSearch:
    """Summary of ``random_tube_search``.

    ``min_extrema`` is the fewest local extrema among all feasible draws;
    ``extremum_failures`` counts draws whose max (min) over some local
    maximum (minimum) of the fit fell below (rose above) the fit's value.
    """

    draws: int
    feasible: int
    min_extrema: int
    fit_extrema: int
    extremum_failures: int


def _extrema_counts(rows) -> np.ndarray:
    """Literal local-extremum counts of every row (vectorized ``count_extrema``)."""
    signs = np.sign(np.diff(rows, axis=1))
    last = np.zeros(rows.shape[0])
    changes = np.zeros(rows.shape[0], dtype=np.int64)
    for col in signs.T:
        moved = col != 0
        changes += (moved & (last != 0) & (col != last)).astype(np.int64)
        last = np.where(moved, col, last)
    return np.where(last != 0, changes + 2, 0)


def random_tube_search(model: LossModel, lam, fit, trials: int = 10_000, rng=None,
                       bounds=None, tol: float = 1e-8, batch: int = 2000) -> TubeSearch:
    """Sample vectors inside the tube and compare their extrema with the fit's.

    Each draw is built unit by unit: given the running sum ``C_{k-1}``, unit
    ``k`` takes a value in ``[M_k(-lam_k - C_{k-1}), M_k(lam_k - C_{k-1})]``,
    so every draw satisfies the tube condition by construction (the last
    unit, where the tube has width zero, is solved exactly).  Values are a
    random mix of fit perturbations, repeats of the previous value (which
    favours few extrema), and uniform positions inside the admissible
    interval, each clipped to that interval.
    """
    if not model.differentiable:
        raise UnsupportedCertificate("tube sampling needs differentiable losses")
    rng = np.random.default_rng(0) if rng is None else rng
    b = _unit_bounds(model.n, bounds)
    values = np.asarray(fit.values if isinstance(fit, Fit) else fit, dtype=float)
    fu = _unit_values(values, b)
    m = fu.size
    lam = as_lambda(lam, m - 1)
    gap = np.concatenate([lam, [0.0]])
    fit_ext = count_extrema(fu, tol=0.0)
    spread = max(float(np.ptp(fu)), 1e-3)

    min_ext, feasible, failures, done = None, 0, 0, 0
    while done < trials:
        size = min(batch, trials - done)
        done += size
        draws = np.empty((size, m))
        csum = np.zeros(size)
        noise_scale = spread * rng.choice([0.0, 1e-3, 0.05, 0.3, 1.0], size=size)
        hold_prob = rng.uniform(0.0, 1.0, size=size)
        mode = rng.integers(0, 3, size=size)
        for k in range(m):
            s, e = int(b[k]), int(b[k + 1])
            low = np.atleast_1d(model.lower_inverse(s, e, -gap[k] - csum))
            high = np.atleast_1d(model.upper_inverse(s, e, gap[k] - csum))
            high = np.maximum(high, low)
            target = np.where(mode == 0, fu[k] + noise_scale * rng.standard_normal(size),
                              rng.uniform(low, high))
            if k > 0:
                hold = rng.uniform(size=size) < hold_prob
                target = np.where(hold & (mode != 1), draws[:, k - 1], target)
            z = np.clip(target, low, high)
            draws[:, k] = z
            csum = csum + model.pooled_derivative(s, e, z)
        full = np.repeat(draws, np.diff(b), axis=1)
        derivs = model._deriv(slice(0, model.n), full.T, "right")
        csums = np.cumsum(np.add.reduceat(derivs, b[:-1], axis=0), axis=0)
        ok = np.all(np.abs(csums) <= gap[:, None] + _tolerance(tol, lam), axis=0)
        rows = draws[ok]
        feasible += rows.shape[0]
        if rows.shape[0]:
            ext = _extrema_counts(rows)
            low_count = int(ext.min())
            min_ext = low_count if min_ext is None else min(min_ext, low_count)
            bad = np.zeros(rows.shape[0], dtype=bool)
            for a, c in fit_ext.maxima:
                bad |= rows[:, a:c].max(axis=1) < fu[a:c].max() - tol
            for a, c in fit_ext.minima:
                bad |= rows[:, a:c].min(axis=1) > fu[a:c].min() + tol
            failures += int(bad.sum())
    return TubeSearch(draws=trials, feasible=feasible,
                      min_extrema=-1 if min_ext is None else int(min_ext),
                      fit_extrema=fit_ext.count, extremum_failures=failures)
