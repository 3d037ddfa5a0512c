"""Source/target pairings for training batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ArgumentError, ConfigurationError

MAX_EXACT_BATCH = 512


@dataclass
class CouplingBatch:
    """``x0s[i]`` is paired with ``x1s[pairing[i]]``."""

    x0s: np.ndarray
    x1s: np.ndarray
    pairing: np.ndarray

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x0s, self.x1s[self.pairing]

    def cost(self) -> float:
        x0, x1 = self.pairs()
        return float(np.sum((x0 - x1) ** 2))


def _check(x0s, x1s):
    x0s = np.asarray(x0s, dtype=float)
    x1s = np.asarray(x1s, dtype=float)
    if x0s.shape[0] != x1s.shape[0]:
        raise ArgumentError(f"batch sizes differ: {x0s.shape[0]} vs {x1s.shape[0]}")
    return x0s, x1s


def independent(x0s, x1s) -> CouplingBatch:
    x0s, x1s = _check(x0s, x1s)
    return CouplingBatch(x0s, x1s, np.arange(x0s.shape[0]))


# Pre-paired data (e.g. corrupted/clean pairs) uses the identity pairing too.
paired = independent


def squared_euclidean_cost(x0s, x1s) -> np.ndarray:
    a = x0s.reshape(x0s.shape[0], -1)
    b = x1s.reshape(x1s.shape[0], -1)
    with np.errstate(invalid="ignore", over="ignore"):
        return np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T


def multisample_ot(x0s, x1s, cost: str = "squared_euclidean") -> CouplingBatch:
    """Minibatch optimal-transport pairing via exact linear assignment."""
    x0s, x1s = _check(x0s, x1s)
    k = x0s.shape[0]
    if cost != "squared_euclidean":
        raise ConfigurationError(f"unsupported coupling cost {cost!r}")
    if k > MAX_EXACT_BATCH:
        raise ConfigurationError(
            f"exact assignment limited to k <= {MAX_EXACT_BATCH} (got {k}); split the batch into chunks"
        )
    C = squared_euclidean_cost(x0s, x1s)
    if not np.all(np.isfinite(C)):
        raise ArgumentError("coupling cost must be finite")
    rows, cols = linear_sum_assignment(C)
    pairing = np.empty(k, dtype=int)
    pairing[rows] = cols
    return CouplingBatch(x0s, x1s, pairing)


COUPLINGS = {"independent": independent, "ot": multisample_ot}


def make_coupling(kind: str):
    try:
        return COUPLINGS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown coupling {kind!r}; known: {sorted(COUPLINGS)}") from None
