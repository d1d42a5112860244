"""Penalty selection: fixed rules and adaptive local squeezing.

A fit is accepted when, on every interval of a family, the sums of one-sided
loss derivatives stay inside bounds ``eta_lo < 0 < eta_hi`` that the true
regression function would satisfy with probability about ``1 - 1/n``::

    sum_{i in I} R_i'(f_i+) >= eta_lo(I)   and   sum_{i in I} R_i'(f_i-) <= eta_hi(I)

Local squeezing starts from a penalty large enough to give a constant fit and
shrinks the penalties of the gaps touching every violating interval by a
factor ``gamma`` until no interval violates.

Bound families:

* ``"gaussian"``: Gaussian noise: ``sigma sqrt(m) sqrt(2 log n)`` (variant ``"A"``)
  or ``sigma sqrt(m) (sqrt(2 log(e n / m)) + c)`` (variant ``"B"``).
* ``"quantile"``: the derivative sum plus ``m beta`` is Binomial(m, beta).
* ``"poisson"``: the interval count is Poisson(sum exp(f_i)).
* ``"bernoulli"``: the interval count is bounded via Binomial(m, mean p_i).

For ``"quantile"`` the derivative sum is ``S - E S``; for ``"poisson"`` and
``"bernoulli"`` it is ``E S - S``, so the upper bound comes from the lower tail of ``S``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, gammaln
from scipy.stats import norm

from .errors import InvalidData, InvalidParameter, NonTermination
from .expfam import fit_expfam
from .losses import LossModel, make_expfam, make_quadratic, make_quantile
from .quantile import fit_quantile
from .taut import DataSet, Fit, fit_taut
from .verify import count_extrema

__all__ = [
    "IntervalFamily",
    "EtaSpec",
    "SqueezeTrace",
    "default_lambda",
    "sigma_hat",
    "binom_cdf",
    "poisson_cdf",
    "eta_bounds",
    "check_multiresolution",
    "local_squeeze",
    "check_eq11",
]

_MAD_SCALE = math.sqrt(2.0) * norm.ppf(0.75)


# -- interval families ------------------------------------------------------------

@dataclass(frozen=True)
class IntervalFamily:
    """Index intervals of ``0..n-1`` as 0-based half-open ``(start, stop)``.

    ``kind="dyadic"`` gives ``{2^l k, ..., 2^l (k + 1) - 1}`` clipped to the
    range for all scales ``l <= log2 n``; ``kind="all"`` gives every interval.
    """

    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in ("dyadic", "all"):
            raise InvalidParameter(f"unknown interval family {self.kind!r}")
        if self.n < 1:
            raise InvalidParameter("interval family needs n >= 1")

    def arrays(self):
        """``(starts, stops)`` as int arrays."""
        n = self.n
        if self.kind == "all":
            starts, stops = np.triu_indices(n + 1, k=1)
            return starts.astype(np.int64), stops.astype(np.int64)
        starts, stops = [], []
        for level in range(int(math.floor(math.log2(n))) + 1):
            size = 1 << level
            k = np.arange((n - 1) // size + 1)
            starts.append(k * size)
            stops.append(np.minimum((k + 1) * size, n))
        return np.concatenate(starts), np.concatenate(stops)

    def __len__(self) -> int:
        if self.kind == "all":
            return self.n * (self.n + 1) // 2
        return sum((self.n - 1) // (1 << lv) + 1
                   for lv in range(int(math.floor(math.log2(self.n))) + 1))


# -- fixed penalties ------------------------------------------------------------------

def sigma_hat(y, method: str = "mad") -> float:
    """Noise level from first differences.

    ``"rice"``: ``sqrt(sum (Y_{i+1} - Y_i)^2 / (2 (n - 1)))``;
    ``"mad"``: ``median |Y_{i+1} - Y_i| / (sqrt(2) Phi^{-1}(3/4))``.
    """
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise InvalidData("noise level needs at least two observations")
    d = np.diff(y)
    if method == "rice":
        return float(np.sqrt(np.sum(d * d) / (2.0 * (y.size - 1))))
    if method == "mad":
        return float(np.median(np.abs(d)) / _MAD_SCALE)
    raise InvalidParameter(f"unknown noise estimator {method!r}")


def default_lambda(kind: str, n: int, scale: Optional[float] = None,
                   beta: Optional[float] = None, c: float = 0.2) -> float:
    """Constant penalty ``c sqrt(n) sigma`` (mean) or ``c sqrt(n beta (1 - beta))`` (quantile)."""
    if n < 2:
        raise InvalidParameter("a penalty needs n >= 2")
    if kind == "mean":
        if scale is None:
            raise InvalidParameter("mean penalty needs the noise scale")
        return float(c * math.sqrt(n) * scale)
    if kind == "quantile":
        if beta is None or not 0.0 < beta < 1.0:
            raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
        return float(c * math.sqrt(n) * math.sqrt(beta * (1.0 - beta)))
    raise InvalidParameter(f"unknown penalty kind {kind!r}")


# -- exact discrete distributions -------------------------------------------------------

_SMALL = np.arange(1, 16, dtype=float)
_STIRLING_SMALL = (gammaln(_SMALL + 1.0) - (_SMALL + 0.5) * np.log(_SMALL) + _SMALL
                   - 0.5 * math.log(2.0 * math.pi))


def _stirlerr(k):
    """``log(k!) - ((k + 1/2) log k - k + log sqrt(2 pi))`` for integer ``k >= 1``."""
    k = np.asarray(k, dtype=float)
    safe = np.maximum(k, 1.0)
    kk = safe * safe
    series = (1.0 / 12 - (1.0 / 360 - (1.0 / 1260 - (1.0 / 1680 - (1.0 / 1188) / kk) / kk) / kk) / kk) / safe
    table = _STIRLING_SMALL[np.clip(safe.astype(np.int64) - 1, 0, 14)]
    return np.where(safe <= 15, table, series)


def _bd0(x, mean):
    """Deviance term ``x log(x / mean) + mean - x`` without cancellation."""
    x = np.asarray(x, dtype=float)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), x.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = x * np.log(x / mean) + mean - x
        v = (x - mean) / (x + mean)
    close = np.abs(x - mean) < 0.1 * (x + mean)
    if not close.any():
        return direct
    vv = np.where(close, v, 0.0)
    total = (x - mean) * vv
    term = 2.0 * x * vv
    v2 = vv * vv
    for j in range(1, 1000):
        term = term * v2
        inc = term / (2 * j + 1)
        total = total + inc
        if np.all(np.abs(inc) <= 1e-17 * np.abs(total)):
            break
    return np.where(close, total, direct)


def _binom_logpmf(k, big_n, p):
    """Log pmf of Binomial(N, p) in saddle-point form, accurate to a few ulps."""
    k, big_n, p = np.broadcast_arrays(np.asarray(k, dtype=float),
                                      np.asarray(big_n, dtype=float),
                                      np.asarray(p, dtype=float))
    q = 1.0 - p
    inside = (k > 0) & (k < big_n)
    kk = np.where(inside, k, 1.0)
    nn = np.where(inside, big_n, 2.0)
    pp = np.where(inside, p, 0.5)
    qq = 1.0 - pp
    with np.errstate(divide="ignore", invalid="ignore"):
        body = (_stirlerr(nn) - _stirlerr(kk) - _stirlerr(nn - kk)
                - _bd0(kk, nn * pp) - _bd0(nn - kk, nn * qq)
                - 0.5 * (math.log(2.0 * math.pi) + np.log(kk) + np.log1p(-kk / nn)))
        at_zero = big_n * np.log1p(-p)
        at_top = big_n * np.log(p)
    out = np.where(inside, body, np.where(k == 0, at_zero, at_top))
    out = np.where((k < 0) | (k > big_n), -np.inf, out)
    # degenerate success probabilities put all mass on one point
    out = np.where(p <= 0.0, np.where(k == 0, 0.0, -np.inf), out)
    out = np.where(q <= 0.0, np.where(k == big_n, 0.0, -np.inf), out)
    return out


def _poisson_logpmf(k, mu):
    """Log pmf of Poisson(mu) in saddle-point form."""
    k, mu = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(mu, dtype=float))
    kk = np.maximum(k, 1.0)
    mm = np.where(mu > 0, mu, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        body = -_stirlerr(kk) - _bd0(kk, mm) - 0.5 * (math.log(2.0 * math.pi) + np.log(kk))
    out = np.where(k == 0, -mu, body)
    out = np.where(mu <= 0.0, np.where(k == 0, 0.0, -np.inf), out)
    return np.where(k < 0, -np.inf, out)


def _logsum(logs) -> float:
    logs = np.asarray(logs, dtype=float)
    if logs.size == 0:
        return -np.inf
    top = np.max(logs)
    if not np.isfinite(top):
        return -np.inf
    return float(top + np.log(np.sum(np.exp(logs - top))))


def binom_cdf(k, big_n: int, p: float) -> float:
    """``P(S <= k)`` for ``S ~ Binomial(N, p)`` by log-space summation of the smaller tail."""
    k = math.floor(k)
    if k < 0:
        return 0.0
    if k >= big_n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    if k < big_n * p:
        return math.exp(_logsum(_binom_logpmf(np.arange(0, k + 1), big_n, p)))
    upper = math.exp(_logsum(_binom_logpmf(np.arange(k + 1, big_n + 1), big_n, p)))
    return 1.0 - upper


def poisson_cdf(k, mu: float) -> float:
    """``P(S <= k)`` for ``S ~ Poisson(mu)`` by log-space summation of the smaller tail."""
    k = math.floor(k)
    if k < 0:
        return 0.0
    if mu <= 0.0:
        return 1.0
    if k < mu:
        return math.exp(_logsum(_poisson_logpmf(np.arange(0, k + 1), mu)))
    # upper tail: sum terms until they drop below double precision
    stop = int(k + 1 + mu + 40.0 * math.sqrt(mu) + 50)
    upper = math.exp(_logsum(_poisson_logpmf(np.arange(k + 1, stop), mu)))
    return 1.0 - upper


def _tail_quantiles(family: str, mean, count, alpha: float):
    """Integer ``s_hi = min{s : F(s) >= 1 - alpha}`` and ``s_lo = max{s : F(s) <= alpha}``.

    Vectorized over rows; ``family`` is ``"poisson"`` (``mean`` is the rate) or
    ``"binomial"`` (``count`` trials with success probability ``mean / count``).
    The CDF is summed over a window of 12 standard deviations plus 30 around
    the mean; the mass outside is below 1e-30, far under ``alpha``.
    """
    mean = np.asarray(mean, dtype=float)
    count = np.asarray(count, dtype=float) if count is not None else None
    var = mean if family == "poisson" else mean * (1.0 - mean / count)
    width = int(np.ceil(12.0 * np.sqrt(np.max(var)) + 30.0)) if mean.size else 0
    base = np.maximum(np.floor(mean) - width, 0.0)
    grid = base[:, None] + np.arange(2 * width + 1)[None, :]
    if family == "poisson":
        logs = _poisson_logpmf(grid, mean[:, None])
    else:
        logs = _binom_logpmf(grid, count[:, None], (mean / count)[:, None])
    cdf = np.cumsum(np.exp(logs), axis=1)
    hi_idx = np.argmax(cdf >= 1.0 - alpha, axis=1)
    s_hi = base + hi_idx
    below = cdf <= alpha
    any_below = below.any(axis=1)
    lo_idx = below.shape[1] - 1 - np.argmax(below[:, ::-1], axis=1)
    s_lo = np.where(any_below, base + lo_idx, base - 1)
    # rows whose mass sits at a point (rate 0, p in {0, 1}) are exact anyway
    return s_hi, s_lo


# -- bounds -----------------------------------------------------------------------------

@dataclass(frozen=True)
class EtaSpec:
    """Which bound family to use, with its parameters.

    ``kind`` is ``"gaussian"``, ``"quantile"``, ``"poisson"`` or ``"bernoulli"``.
    ``sigma``, ``variant`` and ``c`` apply to ``"gaussian"``; ``beta`` to
    ``"quantile"``.
    """

    kind: str
    sigma: Optional[float] = None
    variant: str = "A"
    c: float = 0.0
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "quantile", "poisson", "bernoulli"):
            raise InvalidParameter(f"unknown bound family {self.kind!r}")
        if self.kind == "gaussian":
            if self.sigma is None or self.sigma < 0:
                raise InvalidParameter("Gaussian bounds need sigma >= 0")
            if self.variant not in ("A", "B"):
                raise InvalidParameter(f"unknown Gaussian variant {self.variant!r}")
        if self.kind == "quantile" and (self.beta is None or not 0.0 < self.beta < 1.0):
            raise InvalidParameter("quantile bounds need beta in (0, 1)")


def _eta_arrays(spec: EtaSpec, sizes, fit_sums, n: int):
    """Bounds for intervals with ``sizes`` observations.

    ``fit_sums`` holds per-interval ``sum exp(f_i)`` for ``"poisson"`` and
    ``sum logistic(f_i)`` for ``"bernoulli"``.
    """
    sizes = np.asarray(sizes, dtype=float)
    alpha = 1.0 / n
    if spec.kind == "gaussian":
        if spec.variant == "A":
            hi = spec.sigma * np.sqrt(sizes) * math.sqrt(2.0 * math.log(n))
        else:
            hi = spec.sigma * np.sqrt(sizes) * (np.sqrt(2.0 * np.log(math.e * n / sizes)) + spec.c)
        return -hi, hi
    if spec.kind == "quantile":
        uniq, inv = np.unique(sizes, return_inverse=True)
        s_hi, s_lo = _tail_quantiles("binomial", uniq * spec.beta, uniq, alpha)
        center = uniq * spec.beta
        hi = np.maximum(s_hi - center, 0.0)
        lo = np.minimum(s_lo + 1.0 - center, 0.0)
        return lo[inv], hi[inv]
    fit_sums = np.asarray(fit_sums, dtype=float)
    if spec.kind == "poisson":
        s_hi, s_lo = _tail_quantiles("poisson", fit_sums, None, alpha)
    else:
        s_hi, s_lo = _tail_quantiles("binomial", fit_sums, sizes, alpha)
    hi = np.maximum(fit_sums - (s_lo + 1.0), 0.0)
    lo = np.minimum(fit_sums - s_hi, 0.0)
    return lo, hi


def eta_bounds(spec: EtaSpec, start: int, stop: int, fit_values=None, n: Optional[int] = None):
    """``(eta_lo, eta_hi)`` for observations ``start:stop``.

    ``fit_values`` (the whole fitted vector, natural scale) is needed for
    ``"poisson"``/``"bernoulli"``; ``n`` defaults to its length.
    """
    if stop <= start:
        raise InvalidParameter("empty interval")
    if n is None:
        if fit_values is None:
            raise InvalidParameter("n is required without fit values")
        n = len(fit_values)
    sums = None
    if spec.kind in ("poisson", "bernoulli"):
        if fit_values is None:
            raise InvalidParameter(f"bounds {spec.kind} depend on the fitted values")
        seg = np.asarray(fit_values, dtype=float)[start:stop]
        sums = [float(np.sum(np.exp(seg) if spec.kind == "poisson" else expit(seg)))]
    lo, hi = _eta_arrays(spec, [stop - start], sums, max(int(n), 2))
    return float(lo[0]), float(hi[0])


# -- multiresolution check ----------------------------------------------------------------

def _unit_prefix(model: LossModel, values, bounds):
    d_right = np.add.reduceat(model.deriv_right(values), bounds[:-1])
    d_left = np.add.reduceat(model.deriv_left(values), bounds[:-1])
    return (np.concatenate([[0.0], np.cumsum(d_right)]),
            np.concatenate([[0.0], np.cumsum(d_left)]))


def check_multiresolution(model: LossModel, fit, family, spec: EtaSpec, bounds=None):
    """Intervals of ``family`` violating the multiresolution bounds.

    ``family`` is an ``IntervalFamily`` or its kind; with tie blocks it runs
    over units, and interval sizes count observations.  Returns a list of
    ``(start, stop)`` unit intervals.
    """
    values = np.asarray(fit.values if isinstance(fit, Fit) else fit, dtype=float)
    if values.shape != (model.n,):
        raise InvalidData(f"fit has shape {values.shape}, model has n={model.n}")
    b = np.arange(model.n + 1) if bounds is None else np.asarray(bounds, dtype=np.int64)
    m = b.size - 1
    if not isinstance(family, IntervalFamily):
        family = IntervalFamily(family, m)
    starts, stops = family.arrays()
    p_right, p_left = _unit_prefix(model, values, b)
    right = p_right[stops] - p_right[starts]
    left = p_left[stops] - p_left[starts]
    sizes = b[stops] - b[starts]
    sums = None
    if spec.kind in ("poisson", "bernoulli"):
        mean = np.exp(values) if spec.kind == "poisson" else expit(values)
        pm = np.concatenate([[0.0], np.cumsum(mean)])
        sums = pm[b[stops]] - pm[b[starts]]
    lo, hi = _eta_arrays(spec, sizes, sums, max(model.n, 2))
    slack = 1e-9 * np.maximum(1.0, np.abs(hi - lo))
    bad = (right < lo - slack) | (left > hi + slack)
    return [(int(a), int(c)) for a, c in zip(starts[bad], stops[bad])]


def check_eq11(model: LossModel, fit, c_o: float, bounds=None) -> float:
    """Worst ratio of ``max(sum R'(f-), -sum R'(f+))`` to ``sqrt(c_o m log n) + c_o log n``.

    Runs over all intervals (units with tie blocks; ``m`` counts
    observations).  ``n`` below 2 is replaced by 2 so the bound is positive.
    """
    values = np.asarray(fit.values if isinstance(fit, Fit) else fit, dtype=float)
    b = np.arange(model.n + 1) if bounds is None else np.asarray(bounds, dtype=np.int64)
    m = b.size - 1
    p_right, p_left = _unit_prefix(model, values, b)
    log_n = math.log(max(model.n, 2))
    worst = 0.0
    for length in range(1, m + 1):
        right = p_right[length:] - p_right[:-length]
        left = p_left[length:] - p_left[:-length]
        sizes = (b[length:] - b[:-length]).astype(float)
        bound = np.sqrt(c_o * sizes * log_n) + c_o * log_n
        ratio = np.maximum(left, -right) / bound
        worst = max(worst, float(np.max(ratio)))
    return worst


# -- local squeezing ----------------------------------------------------------------------

@dataclass
class SqueezeTrace:
    """Per-iteration penalties, violating intervals and fit summaries."""

    lambdas: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    summaries: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.lambdas)


_KINDS = ("mean", "quantile", "poisson", "bernoulli")


def _fitter(kind, y, beta, data):
    if kind == "mean":
        model = make_quadratic(y)
        return model, lambda lam: fit_taut(model, lam, data)
    if kind == "quantile":
        model = make_quantile(y, beta)
        return model, lambda lam: fit_quantile(y, beta, lam, data)
    model = make_expfam(y, kind)
    return model, lambda lam: fit_expfam(y, lam, kind, data)


def default_spec(kind: str, y, beta: Optional[float] = None, sigma_method: str = "mad",
                 variant: str = "A", c: float = 0.0) -> EtaSpec:
    """Bound family matching a model kind (Gaussian bounds use an estimated sigma)."""
    if kind == "mean":
        return EtaSpec("gaussian", sigma=sigma_hat(y, sigma_method), variant=variant, c=c)
    if kind == "quantile":
        return EtaSpec("quantile", beta=beta)
    if kind == "poisson":
        return EtaSpec("poisson")
    if kind == "bernoulli":
        return EtaSpec("bernoulli")
    raise InvalidParameter(f"unknown model kind {kind!r}")


def local_squeeze(y, kind: str = "mean", family="dyadic", gamma: float = 0.9,
                  max_iter: int = 10_000, spec: Optional[EtaSpec] = None,
                  beta: Optional[float] = None, data: Optional[DataSet] = None):
    """Adaptive per-gap penalties by local squeezing; returns ``(fit, trace)``.

    ``kind`` is one of ``"mean"``, ``"quantile"``, ``"poisson"``,
    ``"bernoulli"``; ``spec`` defaults to the matching bound family.  With
    ``data`` the responses must be ``data.y`` and gaps refer to tie blocks.
    """
    if kind not in _KINDS:
        raise InvalidParameter(f"unknown model kind {kind!r}")
    if not 0.0 < gamma < 1.0:
        raise InvalidParameter(f"gamma must lie in (0, 1), got {gamma}")
    y = np.asarray(y, dtype=float)
    if kind == "quantile" and (beta is None or not 0.0 < beta < 1.0):
        raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
    spec = default_spec(kind, y, beta) if spec is None else spec
    model, fit_with = _fitter(kind, y, beta, data)
    b = np.arange(y.size + 1) if data is None else np.asarray(data.bounds)
    m = b.size - 1
    if not isinstance(family, IntervalFamily):
        family = IntervalFamily(family, m)
    trace = SqueezeTrace()

    if m == 1:
        fit = fit_with(np.zeros(0))
        trace.lambdas.append(np.zeros(0))
        trace.violations.append([])
        trace.summaries.append(_summary(fit))
        return fit, trace

    lam = np.full(m - 1, _initial_penalty(kind, model, y, b))
    fit = fit_with(lam)
    while len(fit.segments) > 1:
        lam = lam * 2.0
        fit = fit_with(lam)

    for _ in range(max_iter):
        bad = check_multiresolution(model, fit, family, spec, bounds=b)
        trace.lambdas.append(lam.copy())
        trace.violations.append(bad)
        trace.summaries.append(_summary(fit))
        if not bad:
            return fit, trace
        shrink = np.zeros(m - 1, dtype=bool)
        for start, stop in bad:
            # gaps entering, inside and leaving the interval
            shrink[max(start - 1, 0):min(stop, m - 1)] = True
        lam = np.where(shrink, gamma * lam, lam)
        fit = fit_with(lam)
    raise NonTermination(f"local squeezing did not finish within {max_iter} iterations")


def _initial_penalty(kind, model, y, bounds) -> float:
    if kind in ("mean", "poisson", "bernoulli"):
        c = np.cumsum(np.add.reduceat(y - y.mean(), bounds[:-1]))
        return float(np.max(np.abs(c)) + 1.0)
    r = model.lower_inverse(0, model.n, 0.0)
    full = np.full(model.n, r)
    c_right = np.cumsum(np.add.reduceat(model.deriv_right(full), bounds[:-1]))
    c_left = np.cumsum(np.add.reduceat(model.deriv_left(full), bounds[:-1]))
    return float(max(np.max(np.abs(c_right)), np.max(np.abs(c_left))) + 1.0)


def _summary(fit: Fit) -> dict:
    return {
        "segments": len(fit.segments),
        "extrema": count_extrema(fit.values).count,
        "objective": fit.objective,
    }
