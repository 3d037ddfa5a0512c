"""Sample-quality metrics and histogram rendering."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ArgumentError

CHUNK = 2048


def mean_pairwise_distance(a, b) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    total = 0.0
    for i in range(0, a.shape[0], CHUNK):
        total += cdist(a[i : i + CHUNK], b).sum()
    return total / (a.shape[0] * b.shape[0])


def energy_distance(x, y) -> float:
    """V-statistic ``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` (diagonal pairs included)."""
    return 2 * mean_pairwise_distance(x, y) - mean_pairwise_distance(x, x) - mean_pairwise_distance(y, y)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def coordinate_marginals(tokens, K: int) -> np.ndarray:
    tokens = np.atleast_2d(np.asarray(tokens, dtype=int))
    return np.stack([np.bincount(col, minlength=K)[:K] / tokens.shape[0] for col in tokens.T])


def marginal_tv(tokens, target_marginals) -> float:
    """Largest per-coordinate TV between empirical and target marginals."""
    target_marginals = np.asarray(target_marginals)
    emp = coordinate_marginals(tokens, target_marginals.shape[1])
    return max(total_variation(e, t) for e, t in zip(emp, target_marginals))


def joint_tv(tokens, target) -> float:
    """TV between the empirical joint pmf and a sparse :class:`~fmkit.data.TargetPMF`."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=int))
    keys, counts = np.unique(tokens, axis=0, return_counts=True)
    emp = {tuple(k): c / tokens.shape[0] for k, c in zip(keys, counts)}
    tgt = {tuple(k): p for k, p in zip(target.support, target.probs)}
    return 0.5 * sum(abs(emp.get(s, 0.0) - tgt.get(s, 0.0)) for s in set(emp) | set(tgt))


def render_histogram(points, bins: int = 64, bounds=((-4.0, 4.0), (-4.0, 4.0))) -> np.ndarray:
    """8-bit image of 2-D bin counts scaled so the fullest bin is 255.

    Row 0 is the top of the image (largest y).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ArgumentError("histograms need 2-D points")
    H, _, _ = np.histogram2d(points[:, 0], points[:, 1], bins=bins, range=bounds)
    img = H.T[::-1]
    peak = img.max()
    if peak == 0:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.rint(255.0 * img / peak).astype(np.uint8)


def write_pgm(path, image: np.ndarray):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, size, _maxval, pixels = data.split(b"\n", 3)
    if magic != b"P5":
        raise ArgumentError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in size.split())
    return np.frombuffer(pixels[: w * h], dtype=np.uint8).reshape(h, w)
