"""Command-line interface: fitting, verification, tube export and simulations.

Exit codes: 0 success, 2 data error, 3 model or coercivity error,
4 certificate failure or internal error.  Options may also come from a
``key=value`` config file (``--config``); explicit flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (CoercivityError, InvalidData, InvalidParameter, NonTermination,
                     TautlineError)
from .expfam import fit_expfam
from .losses import make_expfam, make_pseudo_huber, make_quadratic, make_quantile
from .multiscale import (EtaSpec, IntervalFamily, check_eq11, check_multiresolution,
                         default_lambda, local_squeeze, sigma_hat)
from .quantile import fit_quantile
from .signals import SIGNALS, TESTBEDS, dj_signal, gen_noise, replicate_rng, write_signal_csv
from .taut import DataSet, fit_taut
from .verify import check_lemma21, check_lemma22, check_tube, count_extrema

METHODS = ("mean", "quantile", "poisson", "bernoulli", "huber")
EXIT_OK, EXIT_DATA, EXIT_MODEL, EXIT_CERT = 0, 2, 3, 4


class CertificateFailure(TautlineError):
    """A fit failed its own optimality certificate."""


def _fmt(v) -> str:
    return f"{float(v):.17g}"


# -- input / output -----------------------------------------------------------------

def read_xy(path):
    """Read a CSV with header containing ``y`` and optionally ``x``."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InvalidData(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidData(f"{path}: empty file, a header row is required") from None
        if "y" not in header:
            raise InvalidData(f"{path}: header must contain a 'y' column, got {header}")
        iy = header.index("y")
        ix = header.index("x") if "x" in header else None
        xs, ys = [], []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InvalidData(
                    f"{path}, row {row_no}: expected {len(header)} fields, got {len(row)}")
            for col, idx in (("y", iy), ("x", ix)):
                if idx is None:
                    continue
                try:
                    val = float(row[idx])
                except ValueError:
                    raise InvalidData(
                        f"{path}, row {row_no}, column '{col}': not a number: {row[idx]!r}"
                    ) from None
                if not math.isfinite(val):
                    raise InvalidData(f"{path}, row {row_no}, column '{col}': non-finite value")
                (ys if col == "y" else xs).append(val)
    if not ys:
        raise InvalidData(f"{path}: no data rows")
    x = np.array(xs) if ix is not None else None
    return x, np.array(ys)


def read_fit_csv(path):
    """Read the ``fitted`` and ``lambda`` columns written by ``fit``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "fitted" not in rows[0]:
        raise InvalidData(f"{path}: expected a fit file with a 'fitted' column")
    fitted = np.array([float(r["fitted"]) for r in rows])
    lam = None
    if "lambda" in rows[0]:
        lam = [float(r["lambda"]) for r in rows if r["lambda"] not in ("", None)]
    return fitted, lam


# -- fitting ------------------------------------------------------------------------

@dataclass
class FitResult:
    data: DataSet
    model: object
    fit: object
    lam: np.ndarray
    lambda_mode: str
    iterations: Optional[int] = None


def _model_for(method, y, beta, delta):
    if method == "mean":
        return make_quadratic(y)
    if method == "quantile":
        return make_quantile(y, beta)
    if method in ("poisson", "bernoulli"):
        return make_expfam(y, method)
    if method == "huber":
        return make_pseudo_huber(y, delta)
    raise InvalidParameter(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _fixed_lambda(method, y, beta, c):
    n = max(y.size, 2)
    if method == "quantile":
        return default_lambda("quantile", n, beta=beta, c=c)
    scale = sigma_hat(y, "mad") if y.size >= 2 else 1.0
    return default_lambda("mean", n, scale=scale if scale > 0 else 1.0, c=c)


def _spec_for(method, y, args) -> EtaSpec:
    if method in ("mean", "huber"):
        return EtaSpec("gaussian", sigma=sigma_hat(y, args.sigma_method), variant=args.variant,
                       c=args.bound_c)
    if method == "quantile":
        return EtaSpec("quantile", beta=args.beta)
    return EtaSpec("poisson" if method == "poisson" else "bernoulli")


def run_fit(x, y, args) -> FitResult:
    """Fit according to parsed options (shared by ``fit``, ``tube`` and ``verify``)."""
    method = args.method
    if method not in METHODS:
        raise InvalidParameter(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "quantile" and args.beta is None:
        raise InvalidParameter("--beta is required for quantile fits")
    data = DataSet.from_xy(x, y)
    y = data.y
    bounds = data if data.has_ties else None
    model = _model_for(method, y, args.beta, args.delta)
    if getattr(args, "adaptive", False):
        if method == "huber":
            raise InvalidParameter("adaptive penalties are not available for the huber method")
        kind = "mean" if method == "mean" else method
        fit, trace = local_squeeze(y, kind, family=args.intervals, gamma=args.gamma,
                                   max_iter=args.max_iter, spec=_spec_for(method, y, args),
                                   beta=args.beta, data=bounds)
        return FitResult(data, model, fit, fit.lam, "adaptive", trace.iterations)
    lam = args.lam if args.lam is not None else _fixed_lambda(method, y, args.beta, args.c)
    if method == "quantile":
        fit = fit_quantile(y, args.beta, lam, bounds)
    elif method in ("poisson", "bernoulli"):
        fit = fit_expfam(y, lam, method, bounds)
    else:
        fit = fit_taut(model, lam, bounds)
    return FitResult(data, model, fit, fit.lam, "fixed")


def certify(result: FitResult):
    model, fit = result.model, result.fit
    b = result.data.bounds
    if model.differentiable:
        return check_lemma22(model, fit.lam, fit.values, bounds=b)
    return check_lemma21(model, fit.lam, fit.values, bounds=b)


def _unit_lambda_column(result: FitResult):
    """Penalty of the gap after each observation (empty inside tie blocks and at the end)."""
    n = result.data.n
    col = [""] * n
    for u, stop in enumerate(result.data.bounds[1:-1]):
        col[int(stop) - 1] = _fmt(result.lam[u])
    return col


def write_fit_csv(path, result: FitResult) -> None:
    ids = result.fit.segment_ids
    lam_col = _unit_lambda_column(result)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "fitted", "segment_id", "lambda"])
        for i in range(result.data.n):
            w.writerow([_fmt(result.data.x[i]), _fmt(result.data.y[i]),
                        _fmt(result.fit.values[i]), int(ids[i]), lam_col[i]])


def fit_summary(result: FitResult, args, cert) -> dict:
    lam = result.lam
    summary = {
        "method": args.method,
        "n": result.data.n,
        "units": result.data.m,
        "lambda": {
            "mode": result.lambda_mode,
            "min": float(lam.min()) if lam.size else None,
            "max": float(lam.max()) if lam.size else None,
        },
        "beta": args.beta if args.method == "quantile" else None,
        "objective": result.fit.objective,
        "segments": len(result.fit.segments),
        "extrema": count_extrema(result.fit.values).count,
        "certificate": {
            "condition": cert.condition,
            "passed": bool(cert.passed),
            "worst_violation": cert.worst_violation,
        },
        "iterations": result.iterations,
    }
    if result.lambda_mode == "adaptive":
        summary["intervals"] = args.intervals
    return summary


# -- commands ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    x, y = read_xy(args.input)
    result = run_fit(x, y, args)
    cert = certify(result)
    out = args.output or os.path.splitext(args.input)[0] + "_fit.csv"
    write_fit_csv(out, result)
    summary = fit_summary(result, args, cert)
    summary_path = args.summary or os.path.splitext(out)[0] + "_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"wrote {out} and {summary_path}")
    if not cert.passed:
        raise CertificateFailure(
            f"certificate failed: worst violation {cert.worst_violation:.3g} at {cert.location}")
    return EXIT_OK


def cmd_verify(args) -> int:
    x, y = read_xy(args.input)
    fitted, lam_col = read_fit_csv(args.fit)
    data = DataSet.from_xy(x, y)
    if fitted.size != data.n:
        raise InvalidData(f"fit has {fitted.size} rows, data has {data.n}")
    lam = args.lam if args.lam is not None else lam_col
    if lam is None or (np.ndim(lam) and len(lam) == 0 and data.m > 1):
        raise InvalidData("penalties missing: pass --lambda or a fit file with a lambda column")
    model = _model_for(args.method, data.y, args.beta, args.delta)
    b = data.bounds
    lines, failed = [], False
    c21 = check_lemma21(model, lam, fitted, bounds=b)
    lines.append(("directional certificate", c21.passed, c21.worst_violation, c21.location))
    failed |= not c21.passed
    if model.differentiable:
        c22 = check_lemma22(model, lam, fitted, bounds=b)
        lines.append(("tube certificate", c22.passed, c22.worst_violation, c22.location))
        failed |= not c22.passed
        tube_ok = check_tube(model, lam, fitted, bounds=b)
        lines.append(("tube feasibility", tube_ok, None, None))
    if args.method != "huber":
        spec = _spec_for(args.method, data.y, args)
        bad = check_multiresolution(model, fitted, IntervalFamily(args.intervals, data.m),
                                    spec, bounds=b)
        lines.append((f"multiresolution ({args.intervals}, {len(bad)} violating intervals)",
                      not bad, None, bad[0] if bad else None))
    ratio = check_eq11(model, fitted, args.c_o, bounds=b)
    lines.append((f"multiscale residual bound (c_o={args.c_o:g})", ratio <= 1.0, ratio, None))
    for name, ok, worst, where in lines:
        extra = "" if worst is None else f" worst={worst:.6g}"
        loc = "" if where is None else f" at {where}"
        print(f"{'PASS' if ok else 'FAIL'} {name}{extra}{loc}")
    return EXIT_CERT if failed else EXIT_OK


def tube_rows(result: FitResult):
    """``(k, cumsum, +lam_k, -lam_k, change)`` for every unit ``k`` (1-based)."""
    model, fit, data = result.model, result.fit, result.data
    d = np.add.reduceat(model.deriv_right(fit.values), data.bounds[:-1])
    csum = np.cumsum(d)
    gap = np.concatenate([result.lam, [0.0]])
    unit_vals = fit.values[data.bounds[:-1]]
    change = np.concatenate([unit_vals[1:] != unit_vals[:-1], [False]])
    return [(k + 1, csum[k], gap[k], -gap[k], int(change[k])) for k in range(data.m)]


def cmd_tube(args) -> int:
    x, y = read_xy(args.input)
    result = run_fit(x, y, args)
    out = args.output or os.path.splitext(args.input)[0] + "_tube.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "cumsum", "upper", "lower", "change"])
        for k, c, up, lo, ch in tube_rows(result):
            w.writerow([k, _fmt(c), _fmt(up), _fmt(lo), ch])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_signal(args) -> int:
    f = dj_signal(args.name, args.n, sd=args.signal_sd)
    y = gen_noise(args.testbed, f, generator=replicate_rng(args.seed, 0))
    out = args.output or f"{args.name}_{args.testbed}_{args.n}.csv"
    write_signal_csv(out, f, y)
    print(f"wrote {out}")
    return EXIT_OK


# -- simulation -----------------------------------------------------------------------------

SIM_METHODS = {
    # name: (model kind, beta)
    "usual": ("mean", None),
    "robust": ("quantile", 0.5),
    "q0.1": ("quantile", 0.1),
    "q0.9": ("quantile", 0.9),
    "binary": ("bernoulli", None),
    "poisson": ("poisson", None),
}
_DEFAULT_SIM_METHODS = {
    "gaussian": ("usual", "robust", "q0.1", "q0.9"),
    "cauchy": ("robust", "q0.1", "q0.9"),
    "binary": ("binary",),
    "poisson": ("poisson",),
}


def simulate_one(signal: str, testbed: str, method: str, n: int, seed: int, replicate: int,
                 intervals: str = "dyadic", gamma: float = 0.9,
                 signal_sd: float = None) -> int:
    """Interior local-extremum count of one adaptive fit."""
    kind, beta = SIM_METHODS[method]
    f = dj_signal(signal, n) if signal_sd is None else dj_signal(signal, n, sd=signal_sd)
    y = gen_noise(testbed, f, generator=replicate_rng(seed, replicate))
    if kind in ("poisson", "bernoulli") and y.min() == y.max():
        return 0
    fit, _ = local_squeeze(y, kind, family=intervals, gamma=gamma, beta=beta)
    return count_extrema(fit.values, convention="interior").count


def _simulate_task(task):
    return simulate_one(*task)


def simulate_table(signals, testbed, methods, sizes, reps, seed, intervals="dyadic",
                   gamma=0.9, workers=1, signal_sd=None):
    """Rows ``(signal, n, method, true, median, mad, counts)``; ``mad`` is the mean
    absolute deviation from the true count (None for doppler)."""
    tasks, keys = [], []
    for sig in signals:
        for n in sizes:
            for method in methods:
                for r in range(reps):
                    tasks.append((sig, testbed, method, n, seed, r, intervals, gamma, signal_sd))
                    keys.append((sig, n, method))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(_simulate_task, tasks, chunksize=1))
    else:
        counts = [_simulate_task(t) for t in tasks]
    grouped = {}
    for key, c in zip(keys, counts):
        grouped.setdefault(key, []).append(c)
    rows = []
    for (sig, n, method), cs in grouped.items():
        cs = np.array(cs)
        if sig == "doppler":
            true, mad = None, None
        else:
            f = dj_signal(sig, n) if signal_sd is None else dj_signal(sig, n, sd=signal_sd)
            true = count_extrema(f, convention="interior").count
            mad = float(np.mean(np.abs(cs - true)))
        rows.append((sig, n, method, true, float(np.median(cs)), mad, cs.tolist()))
    return rows


def _thread_cap() -> int:
    raw = os.environ.get("TAUTLINE_THREADS")
    cpus = os.cpu_count() or 1
    if raw is None:
        return cpus
    try:
        return max(1, min(int(raw), cpus))
    except ValueError:
        raise InvalidParameter(f"TAUTLINE_THREADS must be an integer, got {raw!r}") from None


def cmd_simulate(args) -> int:
    signals = [s.strip() for s in args.signals.split(",") if s.strip()]
    for s in signals:
        if s not in SIGNALS:
            raise InvalidParameter(f"unknown signal {s!r}; choose from {', '.join(SIGNALS)}")
    if args.testbed not in TESTBEDS:
        raise InvalidParameter(f"unknown test bed {args.testbed!r}")
    methods = ([m.strip() for m in args.methods.split(",") if m.strip()]
               if args.methods else list(_DEFAULT_SIM_METHODS[args.testbed]))
    for m in methods:
        if m not in SIM_METHODS:
            raise InvalidParameter(f"unknown method {m!r}; choose from {', '.join(SIM_METHODS)}")
    sizes = [int(v) for v in str(args.n).split(",")]
    workers = min(_thread_cap(), args.workers) if args.workers else _thread_cap()
    rows = simulate_table(signals, args.testbed, methods, sizes, args.reps, args.seed,
                          args.intervals, args.gamma, workers, args.signal_sd)
    if args.output:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["signal", "n", "testbed", "method", "true", "median", "mad", "counts"])
            for sig, n, method, true, med, mad, cs in rows:
                w.writerow([sig, n, args.testbed, method, "" if true is None else true,
                            _fmt(med), "" if mad is None else _fmt(mad),
                            " ".join(str(c) for c in cs)])
    print(f"{'signal':<10} {'n':>6} {'method':<8} {'true':>5} {'median':>7} {'mad':>6}")
    for sig, n, method, true, med, mad, _ in rows:
        t = "inf" if true is None else str(true)
        d = "" if mad is None else f"{mad:.1f}"
        print(f"{sig:<10} {n:>6} {method:<8} {t:>5} {med:>7g} {d:>6}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------------

def _add_model_options(p):
    p.add_argument("--method", default="mean", help=f"one of {', '.join(METHODS)}")
    p.add_argument("--beta", type=float, default=None, help="quantile level")
    p.add_argument("--delta", type=float, default=0.1, help="pseudo-Huber scale")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="constant penalty (default: 0.2 sqrt(n) scale rule)")
    p.add_argument("--c", type=float, default=0.2, help="constant of the default penalty rule")


def _add_bound_options(p):
    p.add_argument("--intervals", default="dyadic", choices=("dyadic", "all"))
    p.add_argument("--sigma-method", default="mad", choices=("mad", "rice"))
    p.add_argument("--variant", default="A", choices=("A", "B"),
                   help="Gaussian bound variant")
    p.add_argument("--bound-c", type=float, default=0.0, help="constant of variant B")


def build_parser():
    parser = argparse.ArgumentParser(prog="tautline", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file with default option values")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("fit", help="fit a TV-penalized model to a CSV file")
    p.add_argument("input")
    _add_model_options(p)
    _add_bound_options(p)
    p.add_argument("--adaptive", action="store_true", help="choose penalties by local squeezing")
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--output", "-o")
    p.add_argument("--summary")
    p.set_defaults(func=cmd_fit)
    subs["fit"] = p

    p = sub.add_parser("verify", help="re-check a fit against the optimality conditions")
    p.add_argument("input")
    p.add_argument("fit")
    _add_model_options(p)
    _add_bound_options(p)
    p.add_argument("--c-o", type=float, default=8.0, help="constant of the residual bound")
    p.set_defaults(func=cmd_verify)
    subs["verify"] = p

    p = sub.add_parser("tube", help="export cumulative derivative sums and tube boundaries")
    p.add_argument("input")
    _add_model_options(p)
    _add_bound_options(p)
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_tube)
    subs["tube"] = p

    p = sub.add_parser("simulate", help="median local-extremum counts over replicates")
    p.add_argument("--signals", default="blocks,bumps,heavisine")
    p.add_argument("--testbed", default="gaussian")
    p.add_argument("--methods", default=None,
                   help=f"comma list of {', '.join(SIM_METHODS)} (default: per test bed)")
    p.add_argument("--n", default="2048", help="sample size(s), comma separated")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--intervals", default="dyadic", choices=("dyadic", "all"))
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--signal-sd", type=float, default=None)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_simulate)
    subs["simulate"] = p

    p = sub.add_parser("signal", help="write a test signal and a noisy sample")
    p.add_argument("--name", default="blocks", choices=SIGNALS)
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--testbed", default="gaussian", choices=TESTBEDS)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--signal-sd", type=float, default=2.8)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_signal)
    subs["signal"] = p
    return parser, subs


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InvalidData(f"cannot open config {path}: {exc.strerror}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidData(f"{path}, line {line_no}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(subparser, config: dict) -> None:
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in config.items():
        dest = "lam" if key == "lambda" else key
        action = known.get(dest)
        if action is None:
            raise InvalidData(f"config key {key!r} is not an option of this command")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[dest] = action.type(raw)
            except ValueError:
                raise InvalidData(f"config key {key!r}: invalid value {raw!r}") from None
        else:
            defaults[dest] = raw
    subparser.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(subs[args.command], read_config(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except (InvalidData, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CoercivityError, InvalidParameter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (CertificateFailure, NonTermination) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CERT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
