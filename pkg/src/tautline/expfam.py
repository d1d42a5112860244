"""Penalized maximum likelihood for Poisson and Bernoulli responses.

For ``R_i(z) = b(z) - z Y_i`` the optimality conditions depend on the fit only
through ``b'(f_i)``, so the minimizer is the least-squares taut string fit
pushed through ``(b')^{-1}``.  That fit lies strictly inside
``(min Y, max Y)`` whenever the responses are not all equal, which is exactly
where ``(b')^{-1}`` is finite.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import InvalidParameter, NonCoerciveData
from .losses import make_expfam, make_quadratic
from .taut import DataSet, Fit, fit_taut, make_fit

__all__ = ["fit_expfam", "mean_scale"]


def fit_expfam(y, lam, family: str, data: Optional[DataSet] = None) -> Fit:
    """Natural-parameter fit for ``family`` in ``{"poisson", "bernoulli"}``.

    The mean-scale (least-squares) values are kept in ``fit.info["mean"]``.
    """
    model = make_expfam(y, family)
    y = model.y
    if y.min() == y.max():
        if family == "poisson":
            raise NonCoerciveData(
                f"all Poisson counts equal {y[0]:g}; the likelihood has no maximizer")
        raise NonCoerciveData(
            f"binary labels are all {int(y[0])}; the likelihood has no maximizer")
    ls = fit_taut(make_quadratic(y), lam, data)
    values = np.asarray(model.natural(ls.values), dtype=float)
    bounds = None if data is None else data.bounds
    return make_fit(model, ls.lam, values, bounds=bounds,
                    info={"family": family, "mean": ls.values})


def mean_scale(fit: Fit, family: str) -> np.ndarray:
    """``b'(f_i)``: exp for Poisson, logistic for Bernoulli."""
    values = np.asarray(fit.values if isinstance(fit, Fit) else fit, dtype=float)
    if family == "poisson":
        return np.exp(values)
    if family == "bernoulli":
        return expit(values)
    raise InvalidParameter(f"unknown family {family!r}")
