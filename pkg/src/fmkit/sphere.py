"""Geodesic flow matching on the unit sphere S^2 embedded in R^3."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DomainError, SimulationError
from .model import as_model
from .scheduler import MixtureScheduler
from .solver import time_grid

ANTIPODAL_TOL = 1e-9
UNIT_TOL = 1e-9


def _dot(a, b):
    return np.sum(a * b, axis=-1, keepdims=True)


def normalize(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ArgumentError(f"sphere points need 3 coordinates, got {x.shape[-1]}")
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DomainError("cannot project the zero vector onto the sphere")
    return x / n


def check_unit(x, tol: float = UNIT_TOL):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3 or np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > tol):
        raise DomainError("points must be unit vectors in R^3")
    return x


def project(x, u):
    """Tangent part ``u - <u, x> x``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return u - _dot(u, x) * x


def exp_map(x, v):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(n > 0, n, 1.0)
    # sin(n)/n -> 1 as n -> 0
    sinc = np.where(n > 1e-8, np.sin(n) / safe, 1.0 - n * n / 6.0)
    return np.cos(n) * x + sinc * v


def geodesic_distance(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cross = np.linalg.norm(np.cross(x, y), axis=-1)
    return np.arctan2(cross, np.sum(x * y, axis=-1))


def log_map(x, y):
    """Tangent vector at ``x`` pointing along the minimizing geodesic to ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = _dot(x, y)
    if np.any(c < -1.0 + ANTIPODAL_TOL):
        raise DomainError("log map undefined for antipodal points")
    w = y - c * x
    wn = np.linalg.norm(w, axis=-1, keepdims=True)
    theta = np.arctan2(wn, c)
    scale = np.where(wn > 1e-15, theta / np.where(wn > 0, wn, 1.0), 1.0)
    return scale * w


def geodesic_path_sample(kappa: MixtureScheduler, t, x0, x1):
    """Point ``exp_{x0}(k_t log_{x0} x1)`` and its time derivative."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != x1.shape:
        raise ArgumentError(f"x0 and x1 shapes differ: {x0.shape} vs {x1.shape}")
    t = np.asarray(t, dtype=float)
    tc = t if t.ndim == 0 else t.reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    k, dk = kappa(tc)
    v = log_map(x0, x1)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    unit = np.where(theta > 0, v / np.where(theta > 0, theta, 1.0), 0.0)
    a = k * theta
    x_t = np.cos(a) * x0 + np.sin(a) * unit
    dx_t = dk * theta * (-np.sin(a) * x0 + np.cos(a) * unit)
    return x_t, dx_t


@dataclass
class SphereBatch:
    t: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    x_t: np.ndarray
    dx_t: np.ndarray


def make_batch(kappa: MixtureScheduler, t, x0, x1) -> SphereBatch:
    x_t, dx_t = geodesic_path_sample(kappa, t, x0, x1)
    return SphereBatch(np.asarray(t, dtype=float), np.asarray(x0), np.asarray(x1), x_t, dx_t)


def rcfm_loss(model, batch: SphereBatch):
    """Mean squared norm of ``project(x_t, model) - dx_t`` and its parameter gradient."""
    out, cache = model.forward_cached(batch.x_t, batch.t)
    if out.shape != batch.dx_t.shape:
        raise ArgumentError(f"model output {out.shape} does not match target {batch.dx_t.shape}")
    resid = project(batch.x_t, out) - batch.dx_t
    n = 1 if resid.ndim == 1 else resid.shape[0]
    loss = float(np.sum(resid * resid) / n)
    # projection is symmetric, so the cotangent is projected once more
    grad, _ = model.backward(cache, project(batch.x_t, 2.0 * resid / n))
    return loss, grad


def sphere_sample(model, x_init, h: float, t_start: float = 0.0, t_end: float = 1.0, keep_path: bool = True):
    """Exponential-map stepping ``x <- exp_x(h project(x, u_t(x)))``."""
    model = as_model(model)
    x = normalize(x_init)
    times = time_grid(t_start, t_end, h)
    path = [(float(times[0]), x.copy())]
    for t0, t1 in zip(times[:-1], times[1:]):
        u = model.forward(x, t0)
        if not np.all(np.isfinite(u)):
            raise SimulationError("model produced non-finite output", t0)
        x = exp_map(x, (t1 - t0) * project(x, u))
        x = x / np.linalg.norm(x, axis=-1, keepdims=True)
        if keep_path:
            path.append((float(t1), x.copy()))
    if not keep_path:
        path.append((float(times[-1]), x))
    return path


# sampling helpers ---------------------------------------------------------------


def uniform_sphere(rng: np.random.Generator, n: int):
    return normalize(rng.standard_normal((n, 3)))


def _tangent_frame(mu):
    """Two unit vectors orthogonal to ``mu`` and to each other."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - np.dot(helper, mu) * mu
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(mu, e1)


def sample_vmf(rng: np.random.Generator, mu, concentration: float, n: int):
    """Exact von Mises-Fisher draws on S^2 by inverting the cosine CDF."""
    mu = normalize(mu)
    if not concentration > 0:
        raise ArgumentError("concentration must be positive")
    u = rng.random(n)
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * concentration)) / concentration
    phi = 2 * np.pi * rng.random(n)
    e1, e2 = _tangent_frame(mu)
    r = np.sqrt(np.clip(1.0 - w * w, 0.0, None))
    return w[:, None] * mu + r[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)


def sample_vmf_mixture(rng: np.random.Generator, centers, concentration: float, n: int):
    centers = normalize(np.atleast_2d(centers))
    labels = rng.integers(0, centers.shape[0], size=n)
    out = np.empty((n, 3))
    for k in range(centers.shape[0]):
        idx = np.flatnonzero(labels == k)
        out[idx] = sample_vmf(rng, centers[k], concentration, idx.size)
    return out


def resample_antipodal(rng: np.random.Generator, x0, x1):
    """Redraw uniform sources that fall in the antipodal exclusion zone of their target."""
    x0 = np.array(x0, dtype=float)
    bad = np.sum(x0 * x1, -1) < -1.0 + 1e-6
    while np.any(bad):
        x0[bad] = uniform_sphere(rng, int(bad.sum()))
        bad = np.sum(x0 * x1, -1) < -1.0 + 1e-6
    return x0
