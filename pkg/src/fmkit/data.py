"""Toy datasets and their file formats."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigurationError
from .sphere import check_unit, sample_vmf_mixture

MOONS_BOUNDS = ((-1.5, 2.5), (-1.0, 1.5))


def _check_n(n):
    if int(n) != n or n <= 0:
        raise ArgumentError(f"n must be a positive integer, got {n}")
    return int(n)


def moons(n: int, noise: float = 0.1, seed: int = 0) -> np.ndarray:
    """Two interleaved half circles; the first ``ceil(n/2)`` points are the upper moon."""
    n = _check_n(n)
    if noise < 0:
        raise ArgumentError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    n_up = (n + 1) // 2
    theta = np.pi * rng.random(n)
    x = np.where(np.arange(n) < n_up, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(np.arange(n) < n_up, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.stack([x, y], axis=1)
    if noise:
        pts = pts + noise * rng.standard_normal(pts.shape)
    (x0, x1), (y0, y1) = MOONS_BOUNDS
    return np.stack([np.clip(pts[:, 0], x0, x1), np.clip(pts[:, 1], y0, y1)], axis=1)


def checkerboard(n: int, seed: int = 0) -> np.ndarray:
    """Uniform on the dark cells of a 4x4 board covering ``[-2, 2]^2``."""
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, n)
    row = rng.integers(0, 2, n) * 2 + ((np.floor(x) + 2).astype(int) % 2)
    y = row - 2 + rng.random(n)
    return np.stack([x, y], axis=1)


def gaussian(n: int, mu, s2: float = 1.0, seed: int = 0) -> np.ndarray:
    n = _check_n(n)
    mu = np.asarray(mu, dtype=float)
    rng = np.random.default_rng(seed)
    return mu + np.sqrt(s2) * rng.standard_normal((n, mu.size))


class TargetPMF:
    """Sparse distribution over ``[K]^d``: listed support sequences and their weights."""

    def __init__(self, K: int, d: int, support, probs):
        self.K, self.d = int(K), int(d)
        self.support = np.asarray(support, dtype=int).reshape(-1, self.d)
        self.probs = np.asarray(probs, dtype=float)
        if self.support.shape[0] != self.probs.size or not np.isclose(self.probs.sum(), 1.0):
            raise ConfigurationError("target pmf: support and probabilities disagree")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.support[rng.choice(self.probs.size, size=n, p=self.probs)]

    def coordinate_marginals(self) -> np.ndarray:
        out = np.zeros((self.d, self.K))
        for i in range(self.d):
            np.add.at(out[i], self.support[:, i], self.probs)
        return out

    def to_dict(self) -> dict:
        return {"K": self.K, "d": self.d, "support": self.support.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetPMF":
        return cls(d["K"], d["d"], d["support"], d["probs"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "TargetPMF":
        return cls.from_dict(json.loads(Path(path).read_text()))


def discrete_target(K: int, d: int, seed: int = 0, n_support: int = 32, exclude=()) -> TargetPMF:
    """Random support of distinct sequences with Dirichlet(1) weights."""
    rng = np.random.default_rng(seed)
    allowed = np.array([k for k in range(K) if k not in set(exclude)])
    n_support = min(n_support, allowed.size**d)
    seen = set()
    rows = []
    while len(rows) < n_support:
        row = tuple(int(v) for v in rng.choice(allowed, size=d))
        if row not in seen:
            seen.add(row)
            rows.append(row)
    return TargetPMF(K, d, rows, rng.dirichlet(np.ones(n_support)))


def discrete_toy(K: int, d: int, n: int, seed: int = 0, n_support: int = 32):
    """``(tokens, target)``: ``n`` draws from a fixed sparse target built from ``seed``."""
    n = _check_n(n)
    target = discrete_target(K, d, seed, n_support)
    return target.sample(np.random.default_rng([seed, 1]), n), target


def sphere_mixture(n: int, centers=((0, 0, 1), (1, 0, 0)), concentration: float = 20.0, seed: int = 0):
    n = _check_n(n)
    return sample_vmf_mixture(np.random.default_rng(seed), centers, concentration, n)


# file formats -----------------------------------------------------------------


def format_points(points, header=None) -> str:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    header = header or [f"x{i}" for i in range(points.shape[1])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in points:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_points(path, points, header=None):
    Path(path).write_text(format_points(points, header))


def read_points(path, dim: int | None = None) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigurationError(f"{path}: empty file")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as err:
        raise ConfigurationError(f"{path}: non-numeric entry ({err})") from None
    data = data.reshape(-1, len(rows[0]))
    if dim is not None and data.shape[1] != dim:
        raise ArgumentError(f"{path}: expected {dim} columns, found {data.shape[1]}")
    return data


def write_sphere_points(path, points):
    write_points(path, check_unit(points), ["x", "y", "z"])


def read_sphere_points(path) -> np.ndarray:
    pts = read_points(path, 3)
    check_unit(pts, 1e-6)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def write_tokens(path, tokens):
    tokens = np.atleast_2d(np.asarray(tokens, dtype=int))
    Path(path).write_text("".join(" ".join(str(v) for v in row) + "\n" for row in tokens))


def read_tokens(path, K: int | None = None) -> np.ndarray:
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError(f"{path}: no sequences")
    try:
        x = np.array(lines, dtype=int)
    except ValueError:
        raise ConfigurationError(f"{path}: sequences must be equal-length integer rows") from None
    if K is not None and (x.min() < 0 or x.max() >= K):
        raise ConfigurationError(f"{path}: tokens outside [0, {K})")
    return x
