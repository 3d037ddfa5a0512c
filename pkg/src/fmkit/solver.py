"""Fixed-step samplers and log-likelihood estimation for continuous models."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, SimulationError, UnsupportedError
from .model import as_model
from .path import Parameterization, convert
from .scheduler import Scheduler, scale_time

METHODS = ("euler", "midpoint")
FD_STEP = 1e-4


@dataclass
class SolveConfig:
    method: str = "euler"
    step_size: float = 0.01
    t_start: float = 0.0
    t_end: float = 1.0
    eps: float = 1e-3
    divergence: str = "exact"
    n_probes: int = 1
    probe: str = "rademacher"
    # Constant churn level, or (beta_at_0, beta_at_1) for a linear schedule.
    beta: float | tuple = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown solver method {self.method!r}; known: {METHODS}")
        if not (0.0 <= self.t_start < self.t_end <= 1.0):
            raise ConfigurationError(f"need 0 <= t_start < t_end <= 1, got [{self.t_start}, {self.t_end}]")
        if not (0.0 < self.step_size <= self.t_end - self.t_start + 1e-12):
            raise ConfigurationError(f"step size {self.step_size} must lie in (0, t_end - t_start]")
        if self.divergence not in ("exact", "hutchinson"):
            raise ConfigurationError(f"unknown divergence estimator {self.divergence!r}")
        if self.probe not in ("rademacher", "gaussian"):
            raise ConfigurationError(f"unknown probe distribution {self.probe!r}")
        if self.n_probes < 1:
            raise ConfigurationError("n_probes must be >= 1")
        if isinstance(self.beta, list):
            self.beta = tuple(self.beta)

    def beta_at(self, t: float) -> float:
        if isinstance(self.beta, tuple):
            b0, b1 = self.beta
            return b0 + (b1 - b0) * t
        return float(self.beta)

    def clipped(self) -> "SolveConfig":
        """Copy with the window shrunk to ``[eps, 1 - eps]``."""
        d = asdict(self)
        d["t_start"] = max(self.t_start, self.eps)
        d["t_end"] = min(self.t_end, 1.0 - self.eps)
        d["step_size"] = min(self.step_size, d["t_end"] - d["t_start"])
        return SolveConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["beta"], tuple):
            d["beta"] = list(d["beta"])
        return d


def time_grid(t_start: float, t_end: float, h: float) -> np.ndarray:
    """Fixed steps of size ``h``; the last step is shortened to land on ``t_end``."""
    span = t_end - t_start
    n = int(np.floor(abs(span) / h + 1e-9))
    direction = 1.0 if span >= 0 else -1.0
    grid = t_start + direction * h * np.arange(n + 1)
    if abs(t_end - grid[-1]) > 1e-12 * max(1.0, abs(t_end)):
        grid = np.append(grid, t_end)
    else:
        grid[-1] = t_end
    return grid


def _check_finite(v, t):
    if not np.all(np.isfinite(v)):
        raise SimulationError("model produced non-finite output", t)
    return v


def _odeint(f: Callable, y0, times, method: str, keep_path: bool):
    y = np.array(y0, dtype=float)
    path = [(float(times[0]), y.copy())]
    for t0, t1 in zip(times[:-1], times[1:]):
        h = t1 - t0
        k1 = _check_finite(f(y, t0), t0)
        if method == "euler":
            y = y + h * k1
        else:
            tm = t0 + 0.5 * h
            k2 = _check_finite(f(y + 0.5 * h * k1, tm), tm)
            y = y + h * k2
        if keep_path:
            path.append((float(t1), y.copy()))
    if not keep_path:
        path.append((float(times[-1]), y))
    return path


def ode_sample(model, x_init, cfg: SolveConfig | None = None, cond=None, keep_path: bool = True):
    """Integrate ``dx/dt = u_t(x)`` from ``t_start`` to ``t_end``.

    Returns a list of ``(t, x)`` pairs (just the two endpoints when
    ``keep_path`` is false).
    """
    cfg = cfg or SolveConfig()
    model = as_model(model)
    times = time_grid(cfg.t_start, cfg.t_end, cfg.step_size)
    return _odeint(lambda x, t: model.forward(x, t, cond), x_init, times, cfg.method, keep_path)


class ScoreFromVelocity:
    """Score of a Gaussian-path velocity model via the parameterization table."""

    def __init__(self, model, scheduler: Scheduler):
        self.model = as_model(model)
        self.scheduler = scheduler

    def __call__(self, x, t, cond=None):
        v = self.model.forward(x, t, cond)
        return convert(Parameterization.VELOCITY, Parameterization.SCORE, self.scheduler, t, x, v, gaussian_source=True)


def _score_accessor(model, score, scheduler):
    if score is not None:
        return score
    if hasattr(model, "score"):
        return model.score
    if scheduler is not None:
        return ScoreFromVelocity(model, scheduler)
    raise UnsupportedError("stochastic sampling needs a score: pass score= or a Gaussian-path scheduler")


def sde_sample(
    model,
    x_init,
    cfg: SolveConfig | None = None,
    rng: np.random.Generator | None = None,
    score=None,
    scheduler: Scheduler | None = None,
    cond=None,
    keep_path: bool = True,
):
    """Euler-Maruyama for ``dX = [u_t(X) + beta_t^2/2 grad log p_t(X)] dt + beta_t dW``.

    With ``beta == 0`` this reproduces :func:`ode_sample` with the Euler method.
    """
    cfg = cfg or SolveConfig()
    model = as_model(model)
    rng = rng if rng is not None else np.random.default_rng(0)
    churn = cfg.beta != 0 and cfg.beta != (0, 0)
    score_fn = _score_accessor(model, score, scheduler) if churn else None
    times = time_grid(cfg.t_start, cfg.t_end, cfg.step_size)
    x = np.array(x_init, dtype=float)
    path = [(float(times[0]), x.copy())]
    for t0, t1 in zip(times[:-1], times[1:]):
        h = t1 - t0
        drift = _check_finite(model.forward(x, t0, cond), t0)
        b = cfg.beta_at(t0)
        if b > 0:
            drift = drift + 0.5 * b * b * _check_finite(score_fn(x, t0, cond), t0)
        x = x + h * drift
        if b > 0:
            x = x + b * np.sqrt(h) * rng.standard_normal(x.shape)
        if keep_path:
            path.append((float(t1), x.copy()))
    if not keep_path:
        path.append((float(times[-1]), x))
    return path


# divergence -----------------------------------------------------------------


def exact_divergence(model, x, t, cond=None, method: str = "auto", h: float = FD_STEP):
    """Trace of the input Jacobian, from VJP columns or central differences."""
    model = as_model(model)
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    use_vjp = method == "vjp" or (method == "auto" and hasattr(model, "input_vjp"))
    div = np.zeros(x.shape[:-1])
    for i in range(d):
        e = np.zeros_like(x)
        e[..., i] = 1.0
        if use_vjp:
            div = div + model.input_vjp(x, t, cond, e)[..., i]
        else:
            up = model.forward(x + h * e, t, cond)[..., i]
            dn = model.forward(x - h * e, t, cond)[..., i]
            div = div + (up - dn) / (2 * h)
    return div


def draw_probes(rng: np.random.Generator, shape, dist: str = "rademacher"):
    if dist == "rademacher":
        return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0
    if dist == "gaussian":
        return rng.standard_normal(shape)
    raise ConfigurationError(f"unknown probe distribution {dist!r}")


def probe_quadratic(model, x, t, z, cond=None, h: float = FD_STEP):
    """``z^T (du/dx) z`` for a batch of probes ``z`` shaped like ``x``."""
    if hasattr(model, "input_vjp"):
        return np.sum(model.input_vjp(x, t, cond, z) * z, axis=-1)
    up = model.forward(x + h * z, t, cond)
    dn = model.forward(x - h * z, t, cond)
    return np.sum((up - dn) / (2 * h) * z, axis=-1)


def hutchinson_divergence(model, x, t, n: int = 1, dist: str = "rademacher", rng=None, cond=None, probes=None):
    """Mean of ``z^T J z`` over ``n`` probes (or the supplied ``probes``, shape ``(n,) + x.shape``)."""
    model = as_model(model)
    x = np.asarray(x, dtype=float)
    if probes is None:
        rng = rng if rng is not None else np.random.default_rng()
        probes = draw_probes(rng, (n,) + x.shape, dist)
    total = np.zeros(x.shape[:-1])
    for z in probes:
        total = total + probe_quadratic(model, x, t, z, cond)
    return total / len(probes)


def compute_likelihood(
    model,
    x,
    log_p0: Callable,
    cfg: SolveConfig | None = None,
    rng: np.random.Generator | None = None,
    cond=None,
    clip: bool = False,
):
    """Integrate the flow and its divergence backwards from ``t_end`` to ``t_start``.

    Returns ``(x0, log_p1)`` with ``log_p1 = log_p0(x0) - int div u_t dt``.  With
    ``clip`` the window is shrunk to ``[eps, 1 - eps]`` first.
    """
    cfg = cfg or SolveConfig()
    if clip:
        cfg = cfg.clipped()
    model = as_model(model)
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    probes = None
    if cfg.divergence == "hutchinson":
        rng = rng if rng is not None else np.random.default_rng(0)
        probes = draw_probes(rng, (cfg.n_probes,) + x.shape, cfg.probe)

    def rhs(y, t):
        xs = y[..., :d]
        u = model.forward(xs, t, cond)
        if probes is None:
            div = exact_divergence(model, xs, t, cond)
        else:
            div = hutchinson_divergence(model, xs, t, cond=cond, probes=probes)
        return np.concatenate([u, -div[..., None]], axis=-1)

    y1 = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
    times = time_grid(cfg.t_end, cfg.t_start, cfg.step_size)
    y0 = _odeint(rhs, y1, times, cfg.method, keep_path=False)[-1][1]
    x0, g0 = y0[..., :d], y0[..., d]
    return x0, log_p0(x0) - g0


# model wrappers --------------------------------------------------------------


class ScheduleTransformedModel:
    """Velocity for a new scheduler, ``(ds/s) x + s dt u_{t_r}(x / s)``."""

    def __init__(self, model, original: Scheduler, new: Scheduler):
        self.model = as_model(model)
        self.original = original
        self.new = new

    @property
    def is_identity(self) -> bool:
        return self.original == self.new

    def forward(self, x, r, cond=None):
        if self.is_identity:
            return self.model.forward(x, r, cond)
        st = scale_time(self.original, self.new, r)
        x = np.asarray(x, dtype=float)
        return (st.ds / st.s) * x + st.s * st.dt * self.model.forward(x / st.s, st.t, cond)

    __call__ = forward


class ConvertedModel:
    """Presents a model trained in one parameterization as another (default: velocity)."""

    def __init__(self, model, scheduler: Scheduler, source, target=Parameterization.VELOCITY, gaussian_source=True):
        self.model = as_model(model)
        self.scheduler = scheduler
        self.source = Parameterization.parse(source)
        self.target = Parameterization.parse(target)
        self.gaussian_source = gaussian_source

    def forward(self, x, t, cond=None):
        out = self.model.forward(x, t, cond)
        if self.source == self.target:
            return out
        return convert(self.source, self.target, self.scheduler, t, x, out, self.gaussian_source)

    __call__ = forward


def endpoint(trajectory):
    return trajectory[-1][1]
