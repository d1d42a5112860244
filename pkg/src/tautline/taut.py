"""Generalized taut string: exact minimization of TV-penalized convex losses.

``fit_taut`` minimizes

    T(f) = sum_i R_i(f_i) + sum_k lambda_k |f_{k+1} - f_k|

for losses satisfying convexity plus continuity and surjectivity of the
derivatives.  Two candidate vectors are grown one position at a time: an
upper candidate ``g`` that is isotonic beyond the agreement index ``k_o`` and
whose cumulative derivative sums sit on the upper tube boundary, and a lower
candidate ``f`` that is antitonic there and sits on the lower boundary.
Rightmost segments violating the monotonicity are pooled through the
generalized inverses of the loss model; when the candidates cross, the
agreement index moves right.  Each step costs amortized O(1) inverse
evaluations.

Tied design points are handled by treating each tie block as a single unit
whose derivative is the within-block sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateRange, InvalidData, InvalidParameter
from .losses import ExpFamLoss, LossModel, RankQuantileLoss, _ResponseLoss

__all__ = [
    "DataSet",
    "CandidatePair",
    "Fit",
    "as_lambda",
    "fit_taut",
    "extract_solution",
    "objective",
    "make_fit",
    "segments_of",
    "range_bounds",
]


@dataclass(frozen=True)
class DataSet:
    """Design points sorted ascending, responses, and tie blocks.

    ``bounds`` holds the offsets of the tie blocks: block ``u`` covers
    observations ``bounds[u]:bounds[u + 1]``.
    """

    x: np.ndarray
    y: np.ndarray
    bounds: np.ndarray

    @classmethod
    def from_xy(cls, x=None, y=None) -> "DataSet":
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.size == 0:
            raise InvalidData("y must be a non-empty one-dimensional array")
        if x is None:
            x = np.arange(1, y.size + 1, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.shape != y.shape:
            raise InvalidData(f"x has shape {x.shape} but y has shape {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidData("x and y must be finite")
        order = np.argsort(x, kind="stable")
        x, y = x[order], y[order]
        new_block = np.flatnonzero(np.diff(x) > 0) + 1
        bounds = np.concatenate([[0], new_block, [x.size]]).astype(np.int64)
        return cls(x=x, y=y, bounds=bounds)

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def m(self) -> int:
        """Number of distinct design points."""
        return int(self.bounds.size - 1)

    @property
    def has_ties(self) -> bool:
        return self.m < self.n

    def expand(self, block_values) -> np.ndarray:
        """Repeat one value per block to one value per observation."""
        return np.repeat(np.asarray(block_values, dtype=float), np.diff(self.bounds))


@dataclass(frozen=True)
class CandidatePair:
    """State of the two-candidate sweep after processing ``K`` units.

    ``f_segments`` / ``g_segments`` list the segments beyond ``k_o`` as
    ``(start, stop, value)`` with 0-based half-open unit ranges.
    """

    K: int
    f: np.ndarray
    g: np.ndarray
    k_o: int
    Lambda_o: float
    f_segments: tuple
    g_segments: tuple


@dataclass(frozen=True)
class Fit:
    """A fitted vector together with its tube diagnostics.

    ``cumsum_left[k]`` / ``cumsum_right[k]`` hold ``sum_{i<=k} R_i'(f_i-)`` and
    ``sum_{i<=k} R_i'(f_i+)``; ``lam`` is the penalty per gap between
    consecutive distinct design points.
    """

    values: np.ndarray
    lam: np.ndarray
    segments: tuple
    cumsum_left: np.ndarray
    cumsum_right: np.ndarray
    objective: float
    bounds: Optional[np.ndarray] = None
    latent: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def segment_ids(self) -> np.ndarray:
        ids = np.empty(self.n, dtype=np.int64)
        for sid, (start, stop) in enumerate(self.segments):
            ids[start:stop] = sid
        return ids


def as_lambda(lam, gaps: int) -> np.ndarray:
    """Validate a penalty vector; a scalar is broadcast to every gap."""
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0:
        arr = np.full(gaps, float(arr))
    if arr.shape != (gaps,):
        raise InvalidParameter(f"expected {gaps} penalties, got shape {arr.shape}")
    if gaps and not (np.all(np.isfinite(arr)) and np.all(arr > 0)):
        raise InvalidParameter("penalties must be finite and strictly positive")
    return arr


def _unit_bounds(model: LossModel, data: Optional[DataSet]) -> np.ndarray:
    if data is None:
        return np.arange(model.n + 1, dtype=np.int64)
    if data.n != model.n:
        raise InvalidData(f"data has {data.n} observations but model has {model.n}")
    return data.bounds


def segments_of(values) -> tuple:
    """Maximal constant runs of ``values`` as 0-based half-open ranges."""
    v = np.asarray(values)
    if v.size == 0:
        return ()
    cuts = np.flatnonzero(v[1:] != v[:-1]) + 1
    edges = np.concatenate([[0], cuts, [v.size]])
    return tuple((int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))


def objective(model: LossModel, lam, f, bounds=None) -> float:
    """``sum R_i(f_i) + sum_k lam_k |f_{k+1} - f_k|`` (gaps between tie blocks)."""
    f = np.asarray(f, dtype=float)
    starts = np.arange(f.size) if bounds is None else np.asarray(bounds)[:-1]
    lam = as_lambda(lam, starts.size - 1) if starts.size > 1 else np.zeros(0)
    unit_f = f[starts]
    return float(np.sum(model.value(f)) + np.sum(lam * np.abs(np.diff(unit_f))))


def make_fit(model: LossModel, lam, values, bounds=None, latent=None, info=None) -> Fit:
    """Package a solution vector with its cumulative derivative sums."""
    values = np.asarray(values, dtype=float)
    if bounds is not None and np.array_equal(bounds, np.arange(values.size + 1)):
        bounds = None
    gaps = values.size - 1 if bounds is None else len(bounds) - 2
    lam = as_lambda(lam, gaps)
    return Fit(
        values=values,
        lam=lam,
        segments=segments_of(values),
        cumsum_left=np.cumsum(model.deriv_left(values)),
        cumsum_right=np.cumsum(model.deriv_right(values)),
        objective=objective(model, lam, values, bounds),
        bounds=None if bounds is None else np.asarray(bounds),
        latent=latent,
        info=dict(info or {}),
    )


def _snapshot(K, out, f, fh, g, gh, ko, Lo) -> CandidatePair:
    fv = list(out[1:ko + 1])
    gv = list(fv)
    for start, end, value in f[fh:]:
        fv.extend([value] * (end - start + 1))
    for start, end, value in g[gh:]:
        gv.extend([value] * (end - start + 1))
    return CandidatePair(
        K=K,
        f=np.array(fv[:K]),
        g=np.array(gv[:K]),
        k_o=ko,
        Lambda_o=Lo,
        f_segments=tuple((s - 1, e, v) for s, e, v in f[fh:]),
        g_segments=tuple((s - 1, e, v) for s, e, v in g[gh:]),
    )


def _sweep(model: LossModel, lam: np.ndarray, bounds: np.ndarray,
           observer: Optional[Callable[[CandidatePair], None]] = None) -> CandidatePair:
    """Run the two-candidate construction over all units; 1-based internally."""
    m = len(bounds) - 1
    b = [int(v) for v in bounds]
    L = [0.0] + [float(v) for v in lam] + [0.0]
    up = model.upper_inverse
    lo = model.lower_inverse

    out = [0.0] * (m + 1)
    # segments are mutable [first_unit, last_unit, value], 1-based inclusive
    f = [[1, 1, lo(b[0], b[1], -L[1])]]
    g = [[1, 1, up(b[0], b[1], L[1])]]
    fh = gh = 0
    ko = 0
    Lo = 0.0
    if observer is not None:
        observer(_snapshot(1, out, f, fh, g, gh, ko, Lo))

    for K1 in range(2, m + 1):
        K = K1 - 1
        if ko >= K:
            raise RuntimeError(f"agreement index {ko} reached step {K} before the end")
        lamK1 = L[K1]

        g.append([K1, K1, up(b[K], b[K1], lamK1 - L[K])])
        while len(g) - gh >= 2 and g[-2][2] > g[-1][2]:
            j = g[-2][0]
            del g[-2:]
            t = lamK1 - (L[j - 1] if j > ko + 1 else Lo)
            g.append([j, K1, up(b[j - 1], b[K1], t)])

        f.append([K1, K1, lo(b[K], b[K1], -lamK1 + L[K])])
        while len(f) - fh >= 2 and f[-2][2] < f[-1][2]:
            j = f[-2][0]
            del f[-2:]
            t = -lamK1 + (L[j - 1] if j > ko + 1 else -Lo)
            f.append([j, K1, lo(b[j - 1], b[K1], t)])

        # final modification: restore g > f beyond the agreement index
        while ko < K1:
            fs, gs = f[fh], g[gh]
            a, c = fs[2], gs[2]
            if a < c:
                break
            if a > c:
                f_multi = len(f) - fh > 1
                g_multi = len(g) - gh > 1
                if f_multi and not g_multi:
                    k1 = fs[1]
                    out[ko + 1:k1 + 1] = [a] * (k1 - ko)
                    ko, Lo = k1, -L[k1]
                    fh += 1
                    g, gh = [[k1 + 1, K1, up(b[k1], b[K1], lamK1 - Lo)]], 0
                elif g_multi and not f_multi:
                    k1 = gs[1]
                    out[ko + 1:k1 + 1] = [c] * (k1 - ko)
                    ko, Lo = k1, L[k1]
                    gh += 1
                    f, fh = [[k1 + 1, K1, lo(b[k1], b[K1], -lamK1 - Lo)]], 0
                elif not f_multi and K1 == m:
                    # both constant at the last unit: equal up to root-finding noise
                    out[ko + 1:K1 + 1] = [c] * (K1 - ko)
                    ko, Lo = K1, 0.0
                    fh += 1
                    gh += 1
                else:
                    raise RuntimeError(
                        f"candidates cross at unit {ko + 1} in an unexpected configuration")
            else:
                ef, eg = fs[1], gs[1]
                end = min(ef, eg)
                out[ko + 1:end + 1] = [a] * (end - ko)
                ko = end
                if ef < eg:
                    Lo = -L[ef]
                    fh += 1
                    gs[0] = ef + 1
                elif eg < ef:
                    Lo = L[eg]
                    gh += 1
                    fs[0] = eg + 1
                else:
                    # only possible once the zero boundary penalty at the end is reached
                    if end < K1 or K1 < m:
                        raise RuntimeError("candidates coincide before the last unit")
                    Lo = 0.0
                    fh += 1
                    gh += 1
        if observer is not None:
            observer(_snapshot(K1, out, f, fh, g, gh, ko, Lo))

    return _snapshot(m, out, f, fh, g, gh, ko, Lo)


def extract_solution(pair: CandidatePair, model: Optional[LossModel] = None,
                     bounds=None) -> np.ndarray:
    """Turn the final candidate pair into one minimizer (values per unit).

    Beyond the agreement index the solution is a constant ``r`` between the
    two candidates; the choice of ``r`` keeps the number of local extrema
    minimal.  With no agreement at all ``r`` solves the pooled equation
    ``sum_i R_i'(r) = 0`` and needs ``model``.
    """
    K, ko = pair.K, pair.k_o
    if ko == K:
        return pair.f.copy()
    fv, gv = float(pair.f[ko]), float(pair.g[ko])
    if ko == 0:
        if model is None:
            raise ValueError("model is required when the candidates never agree")
        n_obs = model.n if bounds is None else int(bounds[-1])
        r = min(max(model.lower_inverse(0, n_obs, 0.0), fv), gv)
    else:
        prev = float(pair.f[ko - 1])
        if prev >= gv:
            r = gv
        elif prev <= fv:
            r = fv
        else:
            raise RuntimeError("agreement value lies strictly between the candidates")
    values = pair.f.copy()
    values[ko:] = r
    return values


def fit_taut(model: LossModel, lam, data: Optional[DataSet] = None,
             observer: Optional[Callable[[CandidatePair], None]] = None) -> Fit:
    """Minimize the TV-penalized objective for a regular loss model.

    Parameters
    ----------
    model : LossModel
        Losses whose pooled inverses exist for every range (e.g. quadratic,
        pseudo-Huber with tails, the rank quantile loss).
    lam : float or array_like
        Penalty per gap between consecutive distinct design points.
    data : DataSet, optional
        Supplies tie blocks; without it every observation is its own block.
    observer : callable, optional
        Receives a ``CandidatePair`` after every step (for diagnostics).
    """
    bounds = _unit_bounds(model, data)
    m = len(bounds) - 1
    lam = as_lambda(lam, m - 1)
    pair = _sweep(model, lam, bounds, observer)
    unit_values = extract_solution(pair, model, bounds)
    values = np.repeat(unit_values, np.diff(bounds))
    return make_fit(model, lam, values, bounds=bounds)


def range_bounds(model: LossModel, strict: bool = False):
    """A box ``[low, high]`` guaranteed to contain every minimizer.

    For losses ``rho(z - Y_i)`` this is ``[min Y, max Y]``; with
    ``strict=True`` the caller asks for the open interval, which requires
    non-constant responses.
    """
    if isinstance(model, RankQuantileLoss):
        return model.beta, model.n - 1 + model.beta
    if isinstance(model, ExpFamLoss):
        lo_, hi_ = float(model.y.min()), float(model.y.max())
        if strict and lo_ == hi_:
            raise DegenerateRange("constant responses give no open range")
        with np.errstate(divide="ignore"):
            return float(model.natural(lo_)), float(model.natural(hi_))
    if isinstance(model, _ResponseLoss):
        lo_, hi_ = float(model.y.min()), float(model.y.max())
        if strict and lo_ == hi_:
            raise DegenerateRange("constant responses give no open range")
        return lo_, hi_
    raise TypeError(f"no range bound available for {type(model).__name__}")
