"""Affine conditional probability paths on R^d.

Arrays follow numpy broadcasting: the last axis is the data dimension and any
leading axes are batch axes.  A time may be a scalar or carry one entry per
batch row.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ArgumentError, SingularityError, UnsupportedError
from .scheduler import CondOTScheduler, Scheduler

SINGULAR_TOL = 1e-12


class Parameterization(str, Enum):
    VELOCITY = "velocity"
    X1_PREDICTION = "x1_prediction"
    X0_PREDICTION = "x0_prediction"
    SCORE = "score"

    @classmethod
    def parse(cls, value) -> "Parameterization":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ArgumentError(f"unknown parameterization {value!r}") from None


# Table order: lower index is the "B" row, higher index the "A" column.
_ORDER = [Parameterization.VELOCITY, Parameterization.X1_PREDICTION, Parameterization.X0_PREDICTION, Parameterization.SCORE]


@dataclass
class PathSample:
    t: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    x_t: np.ndarray
    dx_t: np.ndarray

    def __len__(self):
        return 1 if self.x_t.ndim == 1 else self.x_t.shape[0]

    def rows(self) -> np.ndarray:
        """Flatten to ``t, x0..., x1..., xt..., dxt...`` rows (batch-major)."""
        x0 = np.atleast_2d(self.x0)
        t = np.broadcast_to(np.asarray(self.t, dtype=float).reshape(-1, 1), (x0.shape[0], 1))
        return np.hstack([t, x0, np.atleast_2d(self.x1), np.atleast_2d(self.x_t), np.atleast_2d(self.dx_t)])

    def csv_header(self) -> str:
        d = self.x0.shape[-1]
        cols = ["t"] + [f"{name}_{i}" for name in ("x0", "x1", "xt", "dxt") for i in range(d)]
        return ",".join(cols)


def _time_column(t, x):
    """Shape a time so it broadcasts against ``x`` along the batch axes."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (np.ndim(x) - t.ndim))


def _check_same_shape(a, b, what="x0 and x1"):
    if np.shape(a) != np.shape(b):
        raise ArgumentError(f"{what} must have equal shapes, got {np.shape(a)} and {np.shape(b)}")


def sample_path(s: Scheduler, t, x0, x1) -> PathSample:
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    _check_same_shape(x0, x1)
    a, sg, da, ds = s(_time_column(t, x0))
    return PathSample(t=np.asarray(t, dtype=float), x0=x0, x1=x1, x_t=a * x1 + sg * x0, dx_t=da * x1 + ds * x0)


def _nonzero(value, name):
    if np.any(np.abs(value) < SINGULAR_TOL):
        raise SingularityError(f"{name} vanishes; conversion is singular at this time")
    return value


def conditional_velocity(s: Scheduler, t, x, x1):
    """Velocity of the conditional flow through ``x`` towards ``x1``."""
    x = np.asarray(x, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    _check_same_shape(x, x1, "x and x1")
    a, sg, da, ds = s(_time_column(t, x))
    _nonzero(sg, "sigma_t")
    return da * x1 + ds * (x - a * x1) / sg


def conditional_score(s: Scheduler, t, x, x1):
    """Score of the Gaussian conditional path ``N(alpha_t x1, sigma_t^2 I)``."""
    x = np.asarray(x, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    _check_same_shape(x, x1, "x and x1")
    a, sg, _, _ = s(_time_column(t, x))
    _nonzero(sg, "sigma_t")
    return -(x - a * x1) / sg**2


def conversion_coefficients(frm, to, s: Scheduler, t, gaussian_source: bool = True):
    """Coefficients ``(a_t, b_t)`` with ``f_to(x) = a_t x + b_t f_from(x)``."""
    frm, to = Parameterization.parse(frm), Parameterization.parse(to)
    if frm == to:
        t = np.asarray(t, dtype=float)
        return np.zeros_like(t), np.ones_like(t)
    if Parameterization.SCORE in (frm, to) and not gaussian_source:
        raise UnsupportedError("score conversions are only defined for Gaussian-source paths")
    i, j = _ORDER.index(to), _ORDER.index(frm)
    if i < j:
        return _table_entry(to, frm, s, t)
    a, b = _table_entry(frm, to, s, t)
    _nonzero(b, "b_t")
    return -a / b, 1.0 / b


def _table_entry(row, col, s, t):
    """Upper-triangle entry: ``f_row = a f_x + b f_col``."""
    P = Parameterization
    a, sg, da, ds = (np.asarray(v, dtype=float) for v in s(t))
    if row == P.VELOCITY:
        if col == P.X1_PREDICTION:
            _nonzero(sg, "sigma_t")
            return ds / sg, (da * sg - ds * a) / sg
        _nonzero(a, "alpha_t")
        if col == P.X0_PREDICTION:
            return da / a, (ds * a - da * sg) / a
        return da / a, -(ds * sg * a - da * sg**2) / a
    if row == P.X1_PREDICTION:
        _nonzero(a, "alpha_t")
        if col == P.X0_PREDICTION:
            return 1.0 / a, -sg / a
        return 1.0 / a, sg**2 / a
    # row == x0_prediction, col == score
    return np.zeros_like(sg), -sg


def convert(frm, to, s: Scheduler, t, x, value, gaussian_source: bool = True):
    """Map a model output between velocity / x1 / x0 / score parameterizations."""
    x = np.asarray(x, dtype=float)
    value = np.asarray(value, dtype=float)
    _check_same_shape(x, value, "x and value")
    a, b = conversion_coefficients(frm, to, s, _time_column(t, x), gaussian_source)
    return a * x + b * value


# Independent-Gaussian oracle ------------------------------------------------


def gaussian_posterior_means(t, x, mu, s2, scheduler: Scheduler | None = None):
    """``E[X1 | X_t = x]`` and ``E[X0 | X_t = x]`` for X0 ~ N(0, I), X1 ~ N(mu, s2 I).

    With ``X_t = a X1 + g X0`` the pair (X1, X_t) is jointly Gaussian with
    ``Cov(X1, X_t) = a s2``, ``Cov(X0, X_t) = g`` and ``Var(X_t) = a^2 s2 + g^2``,
    so conditioning gives linear posterior means.
    """
    scheduler = scheduler or CondOTScheduler()
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    a, g, _, _ = scheduler(_time_column(t, x))
    var = a * a * s2 + g * g
    resid = x - a * mu
    return mu + (a * s2 / var) * resid, (g / var) * resid


def marginal_velocity_gaussian_oracle(t, x, mu, s2, scheduler: Scheduler | None = None):
    scheduler = scheduler or CondOTScheduler()
    e1, e0 = gaussian_posterior_means(t, x, mu, s2, scheduler)
    _, _, da, ds = scheduler(_time_column(t, np.asarray(x)))
    return da * e1 + ds * e0


def gaussian_marginal_moments(t, mu, s2, scheduler: Scheduler | None = None):
    """Mean vector and isotropic variance of the marginal ``p_t``."""
    scheduler = scheduler or CondOTScheduler()
    a, g, _, _ = scheduler(t)
    return a * np.asarray(mu, dtype=float), a * a * s2 + g * g


def gaussian_marginal_score(t, x, mu, s2, scheduler: Scheduler | None = None):
    scheduler = scheduler or CondOTScheduler()
    x = np.asarray(x, dtype=float)
    a, g, _, _ = scheduler(_time_column(t, x))
    return -(x - a * np.asarray(mu, dtype=float)) / (a * a * s2 + g * g)


def gaussian_marginal_logpdf(t, x, mu, s2, scheduler: Scheduler | None = None):
    mean, var = gaussian_marginal_moments(t, mu, s2, scheduler)
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return -0.5 * d * np.log(2 * np.pi * var) - 0.5 * np.sum((x - mean) ** 2, axis=-1) / var


def standard_normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x.shape[-1] * np.log(2 * np.pi) - 0.5 * np.sum(x * x, axis=-1)
