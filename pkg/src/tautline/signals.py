"""Donoho-Johnstone test signals, noise test beds and seeded generators."""

from __future__ import annotations

import csv
import math
from typing import Optional

import numpy as np

from .errors import InvalidParameter

__all__ = ["SIGNALS", "TESTBEDS", "dj_signal", "gen_noise", "rng", "replicate_rng",
           "write_signal_csv", "NOISE_SD", "SIGNAL_SD"]

SIGNALS = ("blocks", "bumps", "heavisine", "doppler")
TESTBEDS = ("gaussian", "cauchy", "binary", "poisson")
NOISE_SD = 0.4
# signal-to-noise ratio 7, the customary setting for these signals
SIGNAL_SD = 7.0 * NOISE_SD

_POS = np.array([0.1, 0.13, 0.15, 0.23, 0.25, 0.40, 0.44, 0.65, 0.76, 0.78, 0.81])
_BLOCK_HGT = np.array([4, -5, 3, -4, 5, -4.2, 2.1, 4.3, -3.1, 2.1, -4.2])
_BUMP_HGT = np.array([4, 5, 3, 4, 5, 4.2, 2.1, 4.3, 3.1, 5.1, 4.2])
_BUMP_WTH = np.array([0.005, 0.005, 0.006, 0.01, 0.01, 0.03, 0.01, 0.01, 0.005, 0.008, 0.005])


def _raw_signal(name: str, t: np.ndarray) -> np.ndarray:
    if name == "blocks":
        return np.sum((1.0 + np.sign(t[:, None] - _POS)) * _BLOCK_HGT / 2.0, axis=1)
    if name == "bumps":
        return np.sum(_BUMP_HGT / (1.0 + np.abs((t[:, None] - _POS) / _BUMP_WTH)) ** 4, axis=1)
    if name == "heavisine":
        return 4.0 * np.sin(4.0 * np.pi * t) - np.sign(t - 0.3) - np.sign(0.72 - t)
    if name == "doppler":
        return np.sqrt(t * (1.0 - t)) * np.sin(2.0 * np.pi * 1.05 / (t + 0.05))
    raise InvalidParameter(f"unknown signal {name!r}; choose from {', '.join(SIGNALS)}")


def dj_signal(name: str, n: int, sd: Optional[float] = SIGNAL_SD) -> np.ndarray:
    """Signal sampled at ``t = i / n``, ``i = 1..n``.

    The samples are standardized to mean 0 and standard deviation ``sd`` over
    the grid (constant signals are only centred); ``sd=None`` returns the
    raw formula values.
    """
    if n < 1:
        raise InvalidParameter("n must be at least 1")
    t = np.arange(1, n + 1, dtype=float) / n
    f = _raw_signal(name.lower(), t)
    if sd is not None:
        f = f - f.mean()
        spread = f.std()
        if spread > 0:
            f = f * (sd / spread)
    return f


def rng(seed) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Substream of replicate ``r``: the generator seeded with ``seed + r``."""
    return rng(int(seed) + int(replicate))


def gen_noise(testbed: str, f, seed=None, generator: Optional[np.random.Generator] = None,
              scale: float = NOISE_SD) -> np.ndarray:
    """Observations around a signal ``f`` under one of the four test beds.

    * ``gaussian``: ``f + scale * N(0, 1)``
    * ``cauchy``: ``f + scale * tan(pi (U - 1/2))``
    * ``binary``: Bernoulli with ``p = (f - min f) / (max f - min f)``
    * ``poisson``: Poisson with rate ``f - min f``

    A constant ``f`` gives ``p = 0`` (binary) and rate 0 (Poisson).
    """
    f = np.asarray(f, dtype=float)
    gen = generator if generator is not None else rng(seed)
    if testbed == "gaussian":
        return f + scale * gen.standard_normal(f.size)
    if testbed == "cauchy":
        return f + scale * np.tan(math.pi * (gen.random(f.size) - 0.5))
    low, high = float(f.min()), float(f.max())
    if testbed == "binary":
        p = (f - low) / (high - low) if high > low else np.zeros_like(f)
        return (gen.random(f.size) < p).astype(float)
    if testbed == "poisson":
        return gen.poisson(f - low).astype(float)
    raise InvalidParameter(f"unknown test bed {testbed!r}; choose from {', '.join(TESTBEDS)}")


def write_signal_csv(path, f_true, y, x=None) -> None:
    """Write ``index, x, f_true, y`` rows (17 significant digits)."""
    f_true = np.asarray(f_true, dtype=float)
    y = np.asarray(y, dtype=float)
    n = f_true.size
    x = np.arange(1, n + 1, dtype=float) / n if x is None else np.asarray(x, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "x", "f_true", "y"])
        for i in range(n):
            writer.writerow([i + 1, f"{x[i]:.17g}", f"{f_true[i]:.17g}", f"{y[i]:.17g}"])
