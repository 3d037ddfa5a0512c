"""Minibatch training loops shared by the CLI and the acceptance checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import discrete, sphere
from .coupling import make_coupling
from .errors import ConfigurationError
from .loss import GuidanceConfig, TimeDistribution, cfm_loss, matching_loss, x1_prediction_loss, drop_conditions
from .model import Adam
from .path import Parameterization, sample_path
from .scheduler import MixtureScheduler, Scheduler


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 256
    lr: float = 1e-3
    time_dist: str = "uniform"
    p_uncond: float = 0.0
    coupling: str = "independent"
    lr_decay: str = "none"  # or "cosine"
    ema: float = 0.0
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or not self.lr > 0:
            raise ConfigurationError("train needs steps >= 0, batch >= 1 and lr > 0")
        if self.lr_decay not in ("none", "cosine"):
            raise ConfigurationError(f"unknown lr_decay {self.lr_decay!r}")
        if not 0.0 <= self.ema < 1.0:
            raise ConfigurationError("ema decay must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        d = dict(d or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train options {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def lr_at(self, step: int) -> float:
        if self.lr_decay == "cosine" and self.steps:
            return self.lr * 0.5 * (1 + np.cos(np.pi * step / self.steps))
        return self.lr


class _Averager:
    def __init__(self, params, decay):
        self.decay = decay
        self.avg = params.copy() if decay else None

    def update(self, params):
        if self.decay:
            self.avg *= self.decay
            self.avg += (1 - self.decay) * params

    def finish(self, model):
        if self.decay:
            model.params = self.avg


def _record(log, step, loss, tc, callback):
    if tc.log_every and (step % tc.log_every == 0 or step == tc.steps - 1):
        entry = {"step": step, "loss": loss, "time_dist": tc.time_dist}
        log.append(entry)
        if callback:
            callback(entry)


def train_flow(
    model,
    data: np.ndarray,
    scheduler: Scheduler,
    tc: TrainConfig,
    rng: np.random.Generator,
    parameterization="velocity",
    labels: np.ndarray | None = None,
    dropout_rng: np.random.Generator | None = None,
    callback=None,
) -> list[dict]:
    """Continuous flow matching from a Gaussian source onto ``data`` rows.

    Condition dropout draws from ``dropout_rng`` (seed 0 when omitted).
    """
    param = Parameterization.parse(parameterization)
    if param not in (Parameterization.VELOCITY, Parameterization.X1_PREDICTION, Parameterization.X0_PREDICTION):
        raise ConfigurationError(f"training in the {param.value} parameterization is not supported")
    tdist = TimeDistribution.parse(tc.time_dist)
    pair = make_coupling(tc.coupling)
    guidance = GuidanceConfig(p_uncond=tc.p_uncond) if labels is not None else None
    # Separate stream so dropout never perturbs the data draws.
    dropout_rng = dropout_rng if dropout_rng is not None else np.random.default_rng(0)
    opt = Adam(model.n_params, lr=tc.lr)
    avg = _Averager(model.params, tc.ema)
    log: list[dict] = []
    for step in range(tc.steps):
        idx = rng.integers(0, data.shape[0], tc.batch)
        x1 = data[idx]
        x0 = rng.standard_normal(x1.shape)
        cb = pair(x0, x1)
        x0, x1 = cb.pairs()
        cond = None if labels is None else labels[idx][cb.pairing]
        t = tdist.sample(rng, tc.batch)
        batch = sample_path(scheduler, t, x0, x1)
        if param is Parameterization.VELOCITY:
            loss, grad = cfm_loss(model, batch, cond, guidance, dropout_rng)
        elif param is Parameterization.X1_PREDICTION:
            loss, grad = x1_prediction_loss(model, batch, cond, guidance, dropout_rng)
        else:
            if guidance is not None:
                cond = drop_conditions(cond, guidance.p_uncond, dropout_rng)
            loss, grad = matching_loss(model, batch.x_t, batch.t, batch.x0, cond)
        opt.step(model.params, grad, tc.lr_at(step))
        avg.update(model.params)
        _record(log, step, loss, tc, callback)
    avg.finish(model)
    return log


def train_dfm(
    denoiser,
    tokens: np.ndarray,
    kappa: MixtureScheduler,
    tc: TrainConfig,
    rng: np.random.Generator,
    source: str = "uniform",
    callback=None,
) -> list[dict]:
    """Posterior training with the mixture-path generalized KL loss."""
    draw_source = discrete.make_source_sampler(source, denoiser.K)
    opt = Adam(denoiser.n_params, lr=tc.lr)
    avg = _Averager(denoiser.params, tc.ema)
    stats: dict = {}
    log: list[dict] = []
    for step in range(tc.steps):
        x1 = tokens[rng.integers(0, tokens.shape[0], tc.batch)]
        x0 = draw_source(rng, x1.shape)
        t = rng.random(tc.batch) * discrete.T_MAX
        xt = discrete.sample_mixture_path(kappa, t, x0, x1, rng).x_t
        loss, grad = discrete.generalized_kl_loss(denoiser, t, xt, x1, kappa, stats)
        opt.step(denoiser.params, grad, tc.lr_at(step))
        avg.update(denoiser.params)
        _record(log, step, loss, tc, callback)
    avg.finish(denoiser)
    if stats.get("clamped") and log:
        log[-1]["clamped_logs"] = stats["clamped"]
    return log


def sphere_batch(rng: np.random.Generator, data: np.ndarray, kappa: MixtureScheduler, n: int, tdist=None, coupling="independent"):
    x1 = data[rng.integers(0, data.shape[0], n)]
    # chordal cost is monotone in geodesic distance, so "ot" pairs nearby points
    x0, x1 = make_coupling(coupling)(sphere.uniform_sphere(rng, n), x1).pairs()
    x0 = sphere.resample_antipodal(rng, x0, x1)
    t = (tdist or TimeDistribution()).sample(rng, n)
    return sphere.make_batch(kappa, t, x0, x1)


def sphere_eval_loss(model, batch) -> float:
    out = model.forward(batch.x_t, batch.t)
    resid = sphere.project(batch.x_t, out) - batch.dx_t
    return float(np.mean(np.sum(resid * resid, -1)))


def train_sphere(
    model,
    data: np.ndarray,
    kappa: MixtureScheduler,
    tc: TrainConfig,
    rng: np.random.Generator,
    callback=None,
) -> list[dict]:
    """Riemannian conditional flow matching from the uniform sphere onto ``data``."""
    tdist = TimeDistribution.parse(tc.time_dist)
    opt = Adam(model.n_params, lr=tc.lr)
    avg = _Averager(model.params, tc.ema)
    log: list[dict] = []
    for step in range(tc.steps):
        loss, grad = sphere.rcfm_loss(model, sphere_batch(rng, data, kappa, tc.batch, tdist, tc.coupling))
        opt.step(model.params, grad, tc.lr_at(step))
        avg.update(model.params)
        _record(log, step, loss, tc, callback)
    avg.finish(model)
    return log
