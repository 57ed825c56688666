"""Least-squares fitting of the cycle/security forms and the bundled data.

The bundled security data are the lattice-attack estimates (in bits) for a
fixed 210-bit coefficient modulus. The default constants are the published
fitted values; :func:`fit_linear` and :func:`fit_shifted_quadratic` refit them
from user measurements.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigError, FitError
from .model import FitModel

nan = math.nan

# lambda: (uSVP, BDD, hybrid dual) bits, q = 210 bits
SECURITY_TABLE = {
    2048: (nan, 44.5, 46.3),
    4096: (66.0, 65.8, 66.9),
    6144: (97.2, 96.9, 98.1),
    8192: (131.0, 130.8, 131.9),
    12288: (205.1, 204.8, 205.9),
    16384: (285.4, 281.7, 286.2),
    24576: (459.0, 458.7, 459.5),
    32768: (645.0, nan, nan),
}
COEFF_MODULUS_BITS = 210


@dataclass(frozen=True)
class SamplePoint:
    lam: float
    value: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not math.isfinite(self.value):
            raise ValueError("value must be finite")


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float

    def __iter__(self):
        # unpacks as (slope, intercept)
        return iter((self.slope, self.intercept))

    def __call__(self, lam):
        return self.slope * np.asarray(lam, dtype=float) + self.intercept


@dataclass(frozen=True)
class ShiftedQuadraticFit:
    c1: float
    c2: float
    offset: float  # constant term of the unconstrained quadratic
    consistency: float  # offset - c1*c2**2; zero when the data are exactly c1 (lam + c2)^2
    residual_norm: float  # ||y - c1 (lam + c2)^2||_2 on the training points

    def __iter__(self):
        return iter((self.c1, self.c2))

    def __call__(self, lam):
        return self.c1 * (np.asarray(lam, dtype=float) + self.c2) ** 2


def _arrays(samples):
    lam = np.array([s.lam for s in samples], dtype=float)
    val = np.array([s.value for s in samples], dtype=float)
    return lam, val


def _r2(y, yhat):
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot


def fit_linear(samples) -> LinearFit:
    """Ordinary least-squares line through ``samples``."""
    lam, val = _arrays(samples)
    if len(np.unique(lam)) < 2:
        raise FitError("linear fit needs at least two distinct lambda values")
    A = np.column_stack([lam, np.ones_like(lam)])
    (slope, intercept), *_ = np.linalg.lstsq(A, val, rcond=None)
    return LinearFit(float(slope), float(intercept), _r2(val, A @ [slope, intercept]))


def fit_shifted_quadratic(samples) -> ShiftedQuadraticFit:
    """Least-squares fit of ``c1 (lam + c2)^2``.

    An ordinary quadratic ``a lam^2 + b lam + c`` seeds ``c1 = a`` and
    ``c2 = b / (2a)``; the two-parameter form is then refined by nonlinear
    least squares. ``offset`` and ``consistency`` describe the seed: the
    mismatch ``c - a (b / 2a)^2`` is zero when the data have the form exactly.
    """
    lam, val = _arrays(samples)
    if len(np.unique(lam)) < 3:
        raise FitError("quadratic fit needs at least three distinct lambda values")
    # centre and scale lambda for conditioning
    mu, sd = lam.mean(), lam.std()
    x = (lam - mu) / sd
    A = np.column_stack([x * x, x, np.ones_like(x)])
    (qa, qb, qc), *_ = np.linalg.lstsq(A, val, rcond=None)
    a = qa / sd**2
    b = qb / sd - 2 * qa * mu / sd**2
    c = qc - qb * mu / sd + qa * mu**2 / sd**2
    if not a > 0:
        raise FitError(f"quadratic coefficient {a:g} <= 0: data are not convex increasing")
    seed = np.array([a, b / (2 * a)])
    scale = np.array([abs(seed[0]), max(abs(seed[1]), sd)])
    res = least_squares(lambda u: u[0] * scale[0] * (lam + u[1] * scale[1]) ** 2 - val,
                        seed / scale, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    c1, c2 = (float(v) for v in res.x * scale)
    if not c1 > 0:
        raise FitError(f"fitted c1 = {c1:g} <= 0")
    resid = val - c1 * (lam + c2) ** 2
    return ShiftedQuadraticFit(c1, c2, float(c), float(c - seed[0] * seed[1] ** 2),
                               float(np.linalg.norm(resid)))


def default_fit() -> FitModel:
    return FitModel(c1=0.0066, c2=22421.0, c3=29.0862, c4=-30253.0,
                    c5=68.6450, c6=57511.0, c7=0.0205, c8=-30.73)


def security_dataset() -> list:
    """Minimum attack cost per lambda from the bundled estimates."""
    return [SamplePoint(float(lam), float(np.nanmin(row))) for lam, row in SECURITY_TABLE.items()]


def load_samples_csv(path) -> list:
    """Read a ``lambda,value`` CSV (header required)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames != ["lambda", "value"]:
            raise ConfigError(f"{path}: expected header 'lambda,value', got {reader.fieldnames}")
        try:
            return [SamplePoint(float(row["lambda"]), float(row["value"])) for row in reader]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: bad sample row: {exc}") from exc
