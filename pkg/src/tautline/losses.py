"""Convex per-observation losses and their pooled generalized inverses.

Every loss model represents a family ``R_1, ..., R_n`` of convex functions.
Index ranges are 0-based and half-open: ``pooled_derivative(start, stop, z)``
sums ``R_i'(z)`` over ``start <= i < stop``.  The two generalized inverses of
a pooled derivative are

* ``lower_inverse(start, stop, t) = min{z : R'(z) >= t}``
* ``upper_inverse(start, stop, t) = max{z : R'(z) <= t}``

which coincide wherever the pooled derivative is strictly increasing and
return the two endpoints of a flat piece otherwise.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from ._orderstat import RangeOrderStatistics
from .errors import CoercivityError, InvalidData, InvalidParameter

__all__ = [
    "LossModel",
    "QuadraticLoss",
    "PseudoHuberLoss",
    "QuantileLoss",
    "RankQuantileLoss",
    "ExpFamLoss",
    "SmoothedLoss",
    "make_quadratic",
    "make_pseudo_huber",
    "make_quantile",
    "make_quantile_rank",
    "make_expfam",
    "smooth_loss",
]

_BISECT_TOL = 1e-12
_SNAP = 1e-9
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _as_float_array(y, name="y"):
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidData(f"{name} must be a non-empty one-dimensional array")
    if not np.all(np.isfinite(arr)):
        raise InvalidData(f"{name} contains non-finite values")
    return arr


def _snap_integer(s):
    r = round(s)
    if abs(s - r) <= _SNAP * max(1.0, abs(s)):
        return float(r)
    return s


def bisect_inverse(deriv, t, upper, center=0.0, scale=1.0):
    """Generalized inverse of a non-decreasing function by bracketing + bisection.

    ``deriv`` maps a 1-d array of abscissae to a 1-d array of values.  With
    ``upper=True`` returns ``max{z : deriv(z) <= t}``, else
    ``min{z : deriv(z) >= t}``, to absolute tolerance 1e-12 (or float
    resolution, whichever is coarser).  Vectorized over ``t``.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if upper:
        def left_of(d):
            return d <= t_arr
    else:
        def left_of(d):
            return d < t_arr

    scale = float(scale) if scale > 0 else 1.0
    lo = np.full(t_arr.shape, center - scale)
    hi = np.full(t_arr.shape, center + scale)
    width = scale
    for _ in range(400):
        bad = ~left_of(deriv(lo))
        if not bad.any():
            break
        lo = np.where(bad, lo - width, lo)
        width *= 2.0
    else:
        raise CoercivityError("pooled derivative never drops below the target level")
    width = scale
    for _ in range(400):
        bad = left_of(deriv(hi))
        if not bad.any():
            break
        hi = np.where(bad, hi + width, hi)
        width *= 2.0
    else:
        raise CoercivityError("pooled derivative never reaches the target level")

    for _ in range(2200):
        mid = 0.5 * (lo + hi)
        active = (hi - lo > _BISECT_TOL) & (mid != lo) & (mid != hi)
        if not active.any():
            break
        left = left_of(deriv(mid))
        go_right = left & active
        go_left = ~left & active
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_left, mid, hi)
    out = lo if upper else hi
    return float(out[0]) if np.ndim(t) == 0 else out


class LossModel:
    """Base class for a family of convex losses ``R_1, ..., R_n``.

    Subclasses provide ``_value``, ``_deriv`` (and optionally
    ``_antiderivative``) acting on a slice of observations with ``z``
    broadcast against the per-index parameters.
    """

    #: every R_i differentiable (the cumulative-derivative tube certificate applies)
    differentiable = True
    #: every R_i continuously differentiable with R_i' -> -inf/+inf
    regular = True
    #: pooled derivatives strictly increasing, so both inverses coincide
    strictly_monotone = False

    def __init__(self, n: int):
        self.n = int(n)

    # -- per-slice kernels -------------------------------------------------
    def _value(self, sl: slice, z):  # pragma: no cover - abstract
        raise NotImplementedError

    def _deriv(self, sl: slice, z, side: str):  # pragma: no cover - abstract
        raise NotImplementedError

    _antiderivative = None

    def _bracket(self, start: int, stop: int):
        return 0.0, 1.0

    # -- helpers -------------------------------------------------------------
    def _check_range(self, start, stop):
        if not 0 <= start < stop <= self.n:
            raise IndexError(f"invalid index range [{start}, {stop}) for n={self.n}")

    def _full(self, f):
        f = np.asarray(f, dtype=float)
        if f.ndim == 0:
            return np.full(self.n, float(f))
        if f.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got {f.shape}")
        return f

    # -- public API ----------------------------------------------------------
    def value(self, f):
        """Per-observation losses ``R_i(f_i)``."""
        return self._value(slice(0, self.n), self._full(f))

    def deriv_right(self, f):
        """Per-observation right derivatives ``R_i'(f_i+)``."""
        return self._deriv(slice(0, self.n), self._full(f), "right")

    def deriv_left(self, f):
        """Per-observation left derivatives ``R_i'(f_i-)``."""
        return self._deriv(slice(0, self.n), self._full(f), "left")

    def total_loss(self, f) -> float:
        return float(np.sum(self.value(f)))

    def pooled_derivative(self, start: int, stop: int, z, side: str = "right"):
        """Sum of one-sided derivatives ``R_i'(z+-)`` for ``start <= i < stop``."""
        self._check_range(start, stop)
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        z_arr = np.asarray(z, dtype=float)
        if z_arr.ndim == 0:
            zz = np.full(stop - start, float(z_arr))
            return float(np.sum(self._deriv(slice(start, stop), zz, side)))
        zz = np.broadcast_to(z_arr[None, :], (stop - start, z_arr.size))
        return np.sum(self._deriv(slice(start, stop), zz, side), axis=0)

    def lower_inverse(self, start: int, stop: int, t):
        """``min{z : R'_{start..stop-1}(z) >= t}``."""
        self._check_range(start, stop)
        center, scale = self._bracket(start, stop)
        return bisect_inverse(lambda z: self.pooled_derivative(start, stop, z, "right"),
                              t, upper=False, center=center, scale=scale)

    def upper_inverse(self, start: int, stop: int, t):
        """``max{z : R'_{start..stop-1}(z) <= t}``."""
        if self.strictly_monotone:
            return self.lower_inverse(start, stop, t)
        self._check_range(start, stop)
        center, scale = self._bracket(start, stop)
        return bisect_inverse(lambda z: self.pooled_derivative(start, stop, z, "left"),
                              t, upper=True, center=center, scale=scale)

    def single_inverse(self, t, upper: bool):
        """Vectorized per-index inverse: ``M_ii(t_i)`` for every observation ``i``."""
        t = np.asarray(t, dtype=float)
        fn = self.upper_inverse if upper else self.lower_inverse
        return np.array([fn(i, i + 1, t[i]) for i in range(self.n)])


class _ResponseLoss(LossModel):
    """Loss of the form ``rho(z - Y_i)`` with responses stored in ``self.y``."""

    def __init__(self, y):
        self.y = _as_float_array(y)
        super().__init__(self.y.size)

    def _resp(self, sl, z):
        y = self.y[sl]
        return y[:, None] if np.ndim(z) == 2 else y

    def _bracket(self, start, stop):
        seg = self.y[start:stop]
        return float(np.mean(seg)), max(1.0, float(np.ptp(seg)))


class QuadraticLoss(_ResponseLoss):
    """``R_i(z) = (z - Y_i)^2 / 2`` with closed-form pooled inverses."""

    def __init__(self, y):
        super().__init__(y)
        self._prefix = [0.0] + np.cumsum(self.y).tolist()

    def _value(self, sl, z):
        return 0.5 * (z - self._resp(sl, z)) ** 2

    def _deriv(self, sl, z, side):
        return z - self._resp(sl, z)

    def _antiderivative(self, sl, z):
        return (z - self._resp(sl, z)) ** 3 / 6.0

    def _inverse(self, start, stop, t):
        if not 0 <= start < stop <= self.n:
            raise IndexError(f"invalid index range [{start}, {stop}) for n={self.n}")
        return (self._prefix[stop] - self._prefix[start] + t) / (stop - start)

    def lower_inverse(self, start, stop, t):
        return self._inverse(start, stop, t)

    def upper_inverse(self, start, stop, t):
        return self._inverse(start, stop, t)

    def single_inverse(self, t, upper):
        return self.y + np.asarray(t, dtype=float)


class PseudoHuberLoss(_ResponseLoss):
    """``R_i(z) = sqrt(delta^2 + (z - Y_i)^2)`` plus optional quadratic tails.

    The tails ``min(z - c1, 0)^2 + max(z - c2, 0)^2`` with ``c1 = min Y`` and
    ``c2 = max Y`` make the derivative surjective without moving any
    minimizer, which always lies in ``[min Y, max Y]``.
    """

    strictly_monotone = True

    def __init__(self, y, delta, tails=True):
        super().__init__(y)
        if not delta > 0:
            raise InvalidParameter(f"delta must be positive, got {delta}")
        self.delta = float(delta)
        self.tails = bool(tails)
        self.regular = self.tails
        self.c1 = float(self.y.min())
        self.c2 = float(self.y.max())

    def _value(self, sl, z):
        u = z - self._resp(sl, z)
        out = np.sqrt(self.delta ** 2 + u ** 2)
        if self.tails:
            out = out + np.minimum(z - self.c1, 0.0) ** 2 + np.maximum(z - self.c2, 0.0) ** 2
        return out

    def _deriv(self, sl, z, side):
        u = z - self._resp(sl, z)
        out = u / np.sqrt(self.delta ** 2 + u ** 2)
        if self.tails:
            out = out + 2.0 * np.minimum(z - self.c1, 0.0) + 2.0 * np.maximum(z - self.c2, 0.0)
        return out


class QuantileLoss(_ResponseLoss):
    """Check loss ``rho_beta(z - Y_i)``; piecewise linear, not differentiable.

    One-sided derivatives are ``1{Y_i <= z} - beta`` (right) and
    ``1{Y_i < z} - beta`` (left).
    """

    differentiable = False
    regular = False

    def __init__(self, y, beta):
        super().__init__(y)
        if not 0.0 < beta < 1.0:
            raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
        self.beta = float(beta)

    def _value(self, sl, z):
        u = z - self._resp(sl, z)
        return np.where(u >= 0, (1.0 - self.beta) * u, -self.beta * u)

    def _deriv(self, sl, z, side):
        y = self._resp(sl, z)
        hit = (y <= z) if side == "right" else (y < z)
        return hit.astype(float) - self.beta

    def _antiderivative(self, sl, z):
        u = z - self._resp(sl, z)
        return np.where(u >= 0, 0.5 * (1.0 - self.beta) * u ** 2, -0.5 * self.beta * u ** 2)

    def lower_inverse(self, start, stop, t):
        self._check_range(start, stop)
        seg = np.sort(self.y[start:stop])
        s = _snap_integer(float(t) + (stop - start) * self.beta)
        if s <= 0 or s > seg.size:
            raise CoercivityError("check-loss pooled derivative does not attain this level")
        return float(seg[math.ceil(s) - 1])

    def upper_inverse(self, start, stop, t):
        self._check_range(start, stop)
        seg = np.sort(self.y[start:stop])
        s = _snap_integer(float(t) + (stop - start) * self.beta)
        if s < 0 or s >= seg.size:
            raise CoercivityError("check-loss pooled derivative does not attain this level")
        return float(seg[math.floor(s)])


class RankQuantileLoss(LossModel):
    """Smoothed rank loss used by the quantile algorithm.

    For a rank vector ``Z`` (a permutation of ``1..n``) the derivative is::

        R_i'(z) = min(z, 0) + clip(z - Z_i + 1, 0, 1) + max(z - n, 0) - beta

    Pooled inverses are evaluated in closed form from the order statistics of
    the ranks in the requested range.
    """

    def __init__(self, z, beta):
        ranks = np.asarray(z)
        n = ranks.size
        if ranks.ndim != 1 or n == 0:
            raise InvalidData("rank vector must be a non-empty one-dimensional array")
        if not np.array_equal(np.sort(ranks), np.arange(1, n + 1)):
            raise InvalidData("rank vector must be a permutation of 1..n")
        if not 0.0 < beta < 1.0:
            raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
        super().__init__(n)
        self.ranks = ranks.astype(np.int64)
        self.beta = float(beta)
        self._zf = self.ranks.astype(float)
        self._order = RangeOrderStatistics(self.ranks - 1)

    def _z(self, sl, z):
        r = self._zf[sl]
        return r[:, None] if np.ndim(z) == 2 else r

    def _deriv(self, sl, z, side):
        r = self._z(sl, z)
        return (np.minimum(z, 0.0) + np.clip(z - r + 1.0, 0.0, 1.0)
                + np.maximum(z - self.n, 0.0) - self.beta)

    def _value(self, sl, z):
        r = self._z(sl, z)
        u = z - r + 1.0
        ramp = np.where(u <= 0, 0.0, np.where(u <= 1.0, 0.5 * u ** 2, u - 0.5))
        return (0.5 * np.minimum(z, 0.0) ** 2 + ramp
                + 0.5 * np.maximum(z - self.n, 0.0) ** 2 - self.beta * z)

    def order_statistic(self, start: int, stop: int, i: int) -> int:
        """``i``-th smallest rank (1-based ``i``) among ``Z[start:stop]``."""
        return self._order.kth(start, stop, i - 1) + 1

    def lower_inverse(self, start, stop, t):
        if not 0 <= start < stop <= self.n:
            raise IndexError(f"invalid index range [{start}, {stop}) for n={self.n}")
        ell = stop - start
        s = _snap_integer(t + ell * self.beta)
        if s <= 0.0:
            return s / ell
        if s > ell:
            return self.n - 1.0 + s / ell
        i = math.ceil(s)
        return self._order.kth(start, stop, i - 1) + 1 + (s - i)

    def upper_inverse(self, start, stop, t):
        if not 0 <= start < stop <= self.n:
            raise IndexError(f"invalid index range [{start}, {stop}) for n={self.n}")
        ell = stop - start
        s = _snap_integer(t + ell * self.beta)
        if s < 0.0:
            return s / ell
        if s >= ell:
            return self.n - 1.0 + s / ell
        i = math.floor(s) + 1
        return self._order.kth(start, stop, i - 1) + 1 + (s - i)


class ExpFamLoss(_ResponseLoss):
    """Negative log-likelihood ``b(z) - z Y_i`` of a one-parameter exponential family."""

    regular = False

    def __init__(self, y, family):
        super().__init__(y)
        if family not in ("poisson", "bernoulli"):
            raise InvalidParameter(f"unknown family {family!r}")
        self.family = family
        y = self.y
        if family == "poisson" and (np.any(y < 0) or np.any(y != np.round(y))):
            raise InvalidData("poisson responses must be non-negative integers")
        if family == "bernoulli" and not np.all((y == 0) | (y == 1)):
            raise InvalidData("bernoulli responses must be 0 or 1")

    def mean(self, z):
        """``b'(z)``: exp for Poisson, logistic for Bernoulli."""
        return np.exp(z) if self.family == "poisson" else expit(z)

    def natural(self, mu):
        """``(b')^{-1}(mu)``."""
        mu = np.asarray(mu, dtype=float)
        return np.log(mu) if self.family == "poisson" else np.log(mu) - np.log1p(-mu)

    def _value(self, sl, z):
        b = np.exp(z) if self.family == "poisson" else np.logaddexp(0.0, z)
        return b - z * self._resp(sl, z)

    def _deriv(self, sl, z, side):
        return self.mean(z) - self._resp(sl, z)

    def _inverse(self, start, stop, t):
        self._check_range(start, stop)
        ell = stop - start
        mu = (float(np.sum(self.y[start:stop])) + t) / ell
        upper = math.inf if self.family == "poisson" else 1.0
        if not 0.0 < mu < upper:
            raise CoercivityError(
                f"{self.family} pooled derivative cannot reach level {t} on [{start}, {stop})")
        return float(self.natural(mu))

    def lower_inverse(self, start, stop, t):
        return self._inverse(start, stop, t)

    def upper_inverse(self, start, stop, t):
        return self._inverse(start, stop, t)


class SmoothedLoss(LossModel):
    """Sliding-average smoothing of another model plus quadratic outer tails.

    ``R_eps(z) = (1/2eps) int_{z-eps}^{z+eps} R(t) dt
    + max(z - 1/eps, 0)^2/2 + min(z + 1/eps, 0)^2/2``.
    """

    differentiable = True
    regular = True

    def __init__(self, base: LossModel, eps: float):
        if not eps > 0:
            raise InvalidParameter(f"eps must be positive, got {eps}")
        super().__init__(base.n)
        self.base = base
        self.eps = float(eps)

    def _tails(self, z):
        return 0.5 * np.maximum(z - 1.0 / self.eps, 0.0) ** 2 + 0.5 * np.minimum(z + 1.0 / self.eps, 0.0) ** 2

    def _value(self, sl, z):
        eps = self.eps
        if self.base._antiderivative is not None:
            anti = self.base._antiderivative
            avg = (anti(sl, z + eps) - anti(sl, z - eps)) / (2.0 * eps)
        else:
            avg = 0.0
            for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
                avg = avg + 0.5 * weight * self.base._value(sl, z + eps * node)
        return avg + self._tails(z)

    def _deriv(self, sl, z, side):
        eps = self.eps
        slope = (self.base._value(sl, z + eps) - self.base._value(sl, z - eps)) / (2.0 * eps)
        return slope + np.maximum(z - 1.0 / eps, 0.0) + np.minimum(z + 1.0 / eps, 0.0)

    def _bracket(self, start, stop):
        return self.base._bracket(start, stop)


# -- factories ------------------------------------------------------------------

def make_quadratic(y) -> QuadraticLoss:
    """Least-squares losses ``(z - Y_i)^2 / 2``."""
    return QuadraticLoss(y)


def make_pseudo_huber(y, delta, tails=True) -> PseudoHuberLoss:
    return PseudoHuberLoss(y, delta, tails=tails)


def make_quantile(y, beta) -> QuantileLoss:
    """Check losses ``rho_beta(z - Y_i)`` of quantile regression."""
    return QuantileLoss(y, beta)


def make_quantile_rank(z, beta) -> RankQuantileLoss:
    return RankQuantileLoss(z, beta)


def make_expfam(y, family) -> ExpFamLoss:
    """Poisson (``exp(z) - z Y``) or Bernoulli (``log(1 + e^z) - z Y``) losses."""
    return ExpFamLoss(y, family)


def smooth_loss(model: LossModel, eps: float) -> SmoothedLoss:
    return SmoothedLoss(model, eps)
