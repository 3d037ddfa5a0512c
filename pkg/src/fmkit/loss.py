"""Regression objectives for continuous flow matching."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, ConfigurationError
from .model import NULL_CONDITION
from .path import PathSample

GRID_BINS = 100


@dataclass
class TimeDistribution:
    """Training-time distribution on [0, 1].

    ``explicit`` takes a weight function evaluated at the centres of a
    ``GRID_BINS`` grid and samples the resulting piecewise-constant density.
    """

    kind: str = "uniform"
    m: float = 0.0
    s: float = 1.0
    weights: Callable | None = None
    t_max: float = 1.0
    _bin_probs: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("uniform", "logit_normal", "explicit"):
            raise ConfigurationError(f"unknown time distribution {self.kind!r}")
        if self.kind == "logit_normal" and not self.s > 0:
            raise ConfigurationError("logit-normal scale must be positive")
        if self.kind == "explicit":
            if self.weights is None:
                raise ConfigurationError("explicit time distribution needs a weight function")
            centres = (np.arange(GRID_BINS) + 0.5) / GRID_BINS
            w = np.asarray(self.weights(centres), dtype=float)
            if np.any(w < 0) or not np.any(w > 0):
                raise ConfigurationError("time weights must be nonnegative and not all zero")
            self._bin_probs = w / w.sum()

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "uniform":
            return np.ones_like(t)
        if self.kind == "logit_normal":
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.log(t / (1 - t))
                p = np.exp(-0.5 * ((z - self.m) / self.s) ** 2) / (self.s * np.sqrt(2 * np.pi) * t * (1 - t))
            return np.where((t > 0) & (t < 1), p, 0.0)
        idx = np.clip((t * GRID_BINS).astype(int), 0, GRID_BINS - 1)
        return self._bin_probs[idx] * GRID_BINS

    def sample(self, rng: np.random.Generator, n: int | None = None):
        size = n if n is not None else ()
        if self.kind == "uniform":
            t = rng.random(size)
        elif self.kind == "logit_normal":
            t = expit(self.m + self.s * rng.standard_normal(size))
        else:
            bins = rng.choice(GRID_BINS, size=size, p=self._bin_probs)
            t = (bins + rng.random(size)) / GRID_BINS
        return t * self.t_max

    def describe(self) -> str:
        if self.kind == "logit_normal":
            return f"logit_normal({self.m},{self.s})"
        return self.kind

    @classmethod
    def parse(cls, spec) -> "TimeDistribution":
        if isinstance(spec, cls):
            return spec
        if spec is None or spec == "uniform":
            return cls()
        if isinstance(spec, str):
            if spec.startswith("logit_normal"):
                inner = spec[len("logit_normal") :].strip("()")
                m, s = (float(v) for v in inner.split(",")) if inner else (0.0, 1.0)
                return cls("logit_normal", m=m, s=s)
            raise ConfigurationError(f"unknown time distribution {spec!r}")
        if isinstance(spec, dict):
            return cls(spec.get("kind", "uniform"), m=spec.get("m", 0.0), s=spec.get("s", 1.0))
        raise ConfigurationError(f"malformed time distribution {spec!r}")


def sample_time(dist: TimeDistribution, rng: np.random.Generator, n: int | None = None):
    return dist.sample(rng, n)


@dataclass
class GuidanceConfig:
    w: float = 1.0
    p_uncond: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ConfigurationError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")


def drop_conditions(cond, p_uncond: float, rng: np.random.Generator):
    """Replace each label by the null condition with probability ``p_uncond``."""
    if cond is None:
        return None
    cond = np.asarray(cond, dtype=int)
    drop = rng.random(cond.shape) < p_uncond
    return np.where(drop, NULL_CONDITION, cond)


def matching_loss(model, x, t, target, cond=None):
    """Mean over the batch of ``||model(x, t) - target||^2`` and its parameter gradient."""
    target = np.asarray(target, dtype=float)
    out, cache = model.forward_cached(x, t, cond)
    if out.shape != target.shape:
        raise ArgumentError(f"model output {out.shape} does not match target {target.shape}")
    resid = out - target
    n = 1 if resid.ndim == 1 else resid.shape[0]
    loss = float(np.sum(resid * resid) / n)
    grad, _ = model.backward(cache, 2.0 * resid / n)
    return loss, grad


def cfm_loss(model, batch: PathSample, cond=None, guidance: GuidanceConfig | None = None, rng=None):
    """Conditional flow matching: regress the model onto ``dx_t``.

    With ``guidance`` the labels are dropped to the null condition with
    probability ``p_uncond``, drawn from ``rng`` (keep it separate from the data stream).
    """
    if guidance is not None and cond is not None:
        if rng is None:
            raise ArgumentError("condition dropout needs an explicit random generator")
        cond = drop_conditions(cond, guidance.p_uncond, rng)
    return matching_loss(model, batch.x_t, batch.t, batch.dx_t, cond)


def x1_prediction_loss(model, batch: PathSample, cond=None, guidance: GuidanceConfig | None = None, rng=None):
    if guidance is not None and cond is not None:
        if rng is None:
            raise ArgumentError("condition dropout needs an explicit random generator")
        cond = drop_conditions(cond, guidance.p_uncond, rng)
    return matching_loss(model, batch.x_t, batch.t, batch.x1, cond)


def cfg_velocity(model, x, t, y, w: float):
    """Classifier-free guided velocity ``(1 - w) u(x | null) + w u(x | y)``."""
    x = np.asarray(x, dtype=float)
    null = np.full(np.shape(y), NULL_CONDITION) if np.ndim(y) else NULL_CONDITION
    u_null = model.forward(x, t, null)
    u_cond = model.forward(x, t, y)
    return (1.0 - w) * u_null + w * u_cond


class GuidedModel:
    """Velocity-model view of :func:`cfg_velocity` for a fixed label."""

    def __init__(self, model, y, w: float):
        self.model, self.y, self.w = model, y, w

    def forward(self, x, t, cond=None):
        return cfg_velocity(self.model, x, t, self.y, self.w)
