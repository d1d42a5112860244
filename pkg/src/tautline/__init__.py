"""Exact TV-penalized regression for convex losses (generalized taut string).

Minimizes ``sum_i R_i(f_i) + sum_k lambda_k |f_{k+1} - f_k|`` for least
squares, pseudo-Huber, quantile, Poisson and Bernoulli losses, with
optimality certificates and adaptive penalty selection.
"""

from .errors import (CoercivityError, DegenerateRange, InvalidData, InvalidParameter,
                     NonCoerciveData, NonTermination, TautlineError, UnsupportedCertificate)
from .expfam import fit_expfam, mean_scale
from .losses import (LossModel, make_expfam, make_pseudo_huber, make_quadratic, make_quantile,
                     make_quantile_rank, smooth_loss)
from .multiscale import (EtaSpec, IntervalFamily, check_eq11, check_multiresolution,
                         default_lambda, eta_bounds, local_squeeze, sigma_hat)
from .quantile import fit_quantile, quantile_objective, rank_vector
from .signals import dj_signal, gen_noise, rng
from .taut import DataSet, Fit, extract_solution, fit_taut, objective, range_bounds
from .verify import (brute_force_min, check_lemma21, check_lemma22, check_theorem24,
                     check_tube, count_extrema, isotonic_oracle, random_tube_search)

__version__ = "0.1.0"

__all__ = [
    "CoercivityError",
    "DegenerateRange",
    "InvalidData",
    "InvalidParameter",
    "NonCoerciveData",
    "NonTermination",
    "TautlineError",
    "UnsupportedCertificate",
    "fit_expfam",
    "mean_scale",
    "LossModel",
    "make_expfam",
    "make_pseudo_huber",
    "make_quadratic",
    "make_quantile",
    "make_quantile_rank",
    "smooth_loss",
    "EtaSpec",
    "IntervalFamily",
    "check_eq11",
    "check_multiresolution",
    "default_lambda",
    "eta_bounds",
    "local_squeeze",
    "sigma_hat",
    "fit_quantile",
    "quantile_objective",
    "rank_vector",
    "dj_signal",
    "gen_noise",
    "rng",
    "DataSet",
    "Fit",
    "extract_solution",
    "fit_taut",
    "objective",
    "range_bounds",
    "brute_force_min",
    "check_lemma21",
    "check_lemma22",
    "check_theorem24",
    "check_tube",
    "count_extrema",
    "isotonic_oracle",
    "random_tube_search",
]
