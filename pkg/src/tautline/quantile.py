"""TV-penalized quantile regression through the rank transform.

The check loss is piecewise linear, so its pooled inverses have flat pieces
and jumps.  Replacing each response by its rank ``Z_i`` and the check loss by
the smoothed rank loss of :class:`~tautline.losses.RankQuantileLoss` gives a
problem the two-candidate sweep solves exactly with closed-form inverses.
A minimizer ``g`` of the rank problem lies in ``(beta, n - 1 + beta)^n`` and
maps back to a minimizer of the original problem through
``f_i = Y_(ceil(g_i))``.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .errors import InvalidParameter
from .losses import QuantileLoss, RankQuantileLoss, _as_float_array, _snap_integer
from .taut import DataSet, Fit, as_lambda, fit_taut, make_fit

__all__ = ["rank_vector", "fit_quantile", "quantile_objective", "latent_to_values"]


def rank_vector(y) -> np.ndarray:
    """Ranks ``1..n`` of ``y`` with ties broken by position.

    The result satisfies ``#{i: Y_i < Y_j} + 1 <= Z_j <= #{i: Y_i <= Y_j}``.
    """
    y = _as_float_array(y)
    order = np.argsort(y, kind="stable")
    z = np.empty(y.size, dtype=np.int64)
    z[order] = np.arange(1, y.size + 1)
    return z


def latent_to_values(g, y_sorted) -> np.ndarray:
    """Map rank-scale values to responses: ``Y_(ceil(g_i))``.

    Values within 1e-9 of an integer are snapped first, since the closed-form
    inverses produce exact integer offsets in exact arithmetic.
    """
    n = len(y_sorted)
    idx = np.empty(len(g), dtype=np.int64)
    for i, gi in enumerate(g):
        k = math.ceil(_snap_integer(float(gi)))
        idx[i] = min(max(k, 1), n)
    return np.asarray(y_sorted)[idx - 1]


def fit_quantile(y, beta, lam, data: Optional[DataSet] = None) -> Fit:
    """Exact minimizer of ``sum rho_beta(f_i - Y_i) + sum lam_k |f_{k+1} - f_k|``.

    Parameters
    ----------
    y : array_like
        Responses in design order.
    beta : float
        Quantile level in ``(0, 1)``.
    lam : float or array_like
        Penalty per gap between consecutive distinct design points.
    data : DataSet, optional
        Supplies tie blocks of the design; ``data.y`` must equal ``y``.

    The returned fit carries the rank-scale minimizer in ``latent``.
    """
    y = _as_float_array(y)
    if not 0.0 < beta < 1.0:
        raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
    rank_model = RankQuantileLoss(rank_vector(y), beta)
    latent = fit_taut(rank_model, lam, data)
    values = latent_to_values(latent.values, np.sort(y))
    bounds = None if data is None else data.bounds
    return make_fit(QuantileLoss(y, beta), latent.lam, values, bounds=bounds,
                    latent=latent.values, info={"beta": float(beta)})


def quantile_objective(y, beta, f, lam=0.0, bounds=None) -> float:
    """``sum rho_beta(f_i - Y_i) + sum lam_k |f_{k+1} - f_k|``.

    ``rho_beta(u) = (1 - beta) u`` for ``u >= 0`` and ``-beta u`` otherwise.
    """
    y = _as_float_array(y)
    f = np.asarray(f, dtype=float)
    if f.shape != y.shape:
        raise ValueError(f"f has shape {f.shape} but y has shape {y.shape}")
    u = f - y
    loss = float(np.sum(np.where(u >= 0, (1.0 - beta) * u, -beta * u)))
    starts = np.arange(y.size) if bounds is None else np.asarray(bounds)[:-1]
    if starts.size < 2:
        return loss
    lam = as_lambda(lam, starts.size - 1) if np.ndim(lam) else np.full(starts.size - 1, float(lam))
    return loss + float(np.sum(lam * np.abs(np.diff(f[starts]))))
