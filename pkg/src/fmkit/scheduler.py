"""Time-dependent coefficients for affine and mixture probability paths.

An affine scheduler is the pair ``(alpha_t, sigma_t)`` defining the conditional
flow ``x_t = alpha_t * x1 + sigma_t * x0``.  All evaluations accept scalars or
numpy arrays of times and return analytic derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import ClassVar, NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError

BISECTION_TOL = 1e-12
BISECTION_MAX_ITER = 200


class SchedulerOutput(NamedTuple):
    alpha: np.ndarray
    sigma: np.ndarray
    d_alpha: np.ndarray
    d_sigma: np.ndarray


class ScaleTime(NamedTuple):
    t: np.ndarray
    s: np.ndarray
    dt: np.ndarray
    ds: np.ndarray


def _as_time(t):
    t = np.asarray(t, dtype=float)
    return t


def _maybe_scalar(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class Scheduler:
    """Base class; subclasses implement :meth:`_coefficients`."""

    kind: ClassVar[str] = ""
    approximate_boundary: ClassVar[bool] = False

    def _coefficients(self, t: np.ndarray):
        raise NotImplementedError

    def __call__(self, t, eps: float = 0.0) -> SchedulerOutput:
        t = _as_time(t)
        if eps:
            t = np.clip(t, eps, 1.0 - eps)
        with np.errstate(divide="ignore", invalid="ignore"):
            a, s, da, ds = self._coefficients(t)
        return SchedulerOutput(*(_maybe_scalar(np.asarray(v, dtype=float)) for v in (a, s, da, ds)))

    # signal-to-noise ratio -------------------------------------------------

    def snr(self, t):
        a, s, _, _ = self(t)
        with np.errstate(divide="ignore"):
            return _maybe_scalar(np.where(np.asarray(s) > 0, np.divide(a, s), np.inf))

    def d_snr(self, t):
        a, s, da, ds = self(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return _maybe_scalar((np.asarray(da) * s - a * np.asarray(ds)) / np.square(s))

    def snr_range(self) -> tuple[float, float]:
        return float(self.snr(0.0)), float(self.snr(1.0))

    def snr_inverse(self, rho):
        """Time at which the SNR equals ``rho``, by bisection on [0, 1]."""
        rho = np.asarray(rho, dtype=float)
        lo_rho, hi_rho = self.snr_range()
        if np.any(np.isnan(rho)) or np.any(rho < lo_rho) or np.any(rho > hi_rho):
            raise DomainError(
                f"snr value outside the range [{lo_rho:.6g}, {hi_rho:.6g}] of {self.kind}"
            )
        lo = np.zeros_like(rho)
        hi = np.ones_like(rho)
        for _ in range(BISECTION_MAX_ITER):
            if np.all(hi - lo < BISECTION_TOL):
                break
            mid = 0.5 * (lo + hi)
            below = np.asarray(self.snr(mid)) < rho
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        t = 0.5 * (lo + hi)
        t = np.where(rho == hi_rho, 1.0, np.where(rho == lo_rho, 0.0, t))
        return _maybe_scalar(t)

    # serialization ---------------------------------------------------------

    def params(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params()}


@dataclass(frozen=True)
class CondOTScheduler(Scheduler):
    kind: ClassVar[str] = "cond_ot"

    def _coefficients(self, t):
        return t, 1.0 - t, np.ones_like(t), -np.ones_like(t)


@dataclass(frozen=True)
class PolynomialScheduler(Scheduler):
    """``alpha = t**n``, ``sigma = 1 - t**n``."""

    n: float = 1.0
    kind: ClassVar[str] = "polynomial"

    def __post_init__(self):
        if not self.n > 0:
            raise ConfigurationError(f"polynomial exponent must be positive, got {self.n}")

    def _coefficients(self, t):
        a = t**self.n
        da = self.n * t ** (self.n - 1.0)
        return a, 1.0 - a, da, -da


@dataclass(frozen=True)
class LinearVPScheduler(Scheduler):
    """``alpha = t``, ``sigma = sqrt(1 - t**2)``."""

    kind: ClassVar[str] = "linear_vp"

    def _coefficients(self, t):
        s = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
        return t, s, np.ones_like(t), -t / s


@dataclass(frozen=True)
class CosineScheduler(Scheduler):
    """``alpha = sin(pi t / 2)``, ``sigma = cos(pi t / 2)``."""

    kind: ClassVar[str] = "cosine"

    def _coefficients(self, t):
        w = 0.5 * math.pi
        a, s = np.sin(w * t), np.cos(w * t)
        s = np.where(t == 1.0, 0.0, s)
        return a, s, w * s, -w * a


@dataclass(frozen=True)
class VPScheduler(Scheduler):
    """Variance preserving path with a linear noise rate.

    The instantaneous rate is ``beta(t) = beta_min + (beta_max - beta_min)(1 - t)``
    and ``T(t) = int_t^1 beta``; then ``alpha = exp(-T/2)`` and
    ``sigma = sqrt(1 - exp(-T))``.  ``alpha(0)`` is only approximately zero.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0
    kind: ClassVar[str] = "vp"
    approximate_boundary: ClassVar[bool] = True

    def _coefficients(self, t):
        b, B = self.beta_min, self.beta_max
        u = 1.0 - t
        T = b * u + 0.5 * (B - b) * u * u
        rate = b + (B - b) * u
        a = np.exp(-0.5 * T)
        s = np.sqrt(-np.expm1(-T))
        return a, s, 0.5 * rate * a, -0.5 * rate * np.exp(-T) / s


@dataclass(frozen=True)
class VEScheduler(Scheduler):
    """Variance exploding path: ``alpha = 1`` and geometric ``sigma`` from
    ``sigma_max`` at t=0 down to ``sigma_min`` at t=1."""

    sigma_max: float = 80.0
    sigma_min: float = 0.01
    kind: ClassVar[str] = "ve"
    approximate_boundary: ClassVar[bool] = True

    def __post_init__(self):
        if not (self.sigma_max > self.sigma_min > 0):
            raise ConfigurationError("VE scheduler needs sigma_max > sigma_min > 0")

    def _coefficients(self, t):
        rate = math.log(self.sigma_min) - math.log(self.sigma_max)
        s = self.sigma_max * np.exp(rate * t)
        return np.ones_like(t), s, np.zeros_like(t), rate * s


@dataclass(frozen=True)
class ClampedScheduler(Scheduler):
    """Wraps a scheduler so that ``sigma_1 = eps``: ``sigma' = eps + (1-eps) sigma``.

    With both schedulers clamped the scale-time map sends r=1 to (t=1, s=1).
    """

    base: Scheduler = CondOTScheduler()
    eps: float = 1e-3
    kind: ClassVar[str] = "clamped"

    def _coefficients(self, t):
        a, s, da, ds = self.base._coefficients(t)
        return a, self.eps + (1.0 - self.eps) * s, da, (1.0 - self.eps) * ds

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": {"eps": float(self.eps)}, "base": self.base.to_dict()}


SCHEDULERS: dict[str, type[Scheduler]] = {
    cls.kind: cls
    for cls in (CondOTScheduler, PolynomialScheduler, LinearVPScheduler, CosineScheduler, VPScheduler, VEScheduler)
}


def make_scheduler(spec) -> Scheduler:
    """Build a scheduler from ``{"kind": ..., "params": {...}}`` or a bare kind string."""
    if isinstance(spec, Scheduler):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigurationError(f"malformed scheduler spec: {spec!r}")
    kind = spec["kind"]
    params = dict(spec.get("params") or {})
    if kind == ClampedScheduler.kind:
        return ClampedScheduler(base=make_scheduler(spec["base"]), **params)
    try:
        cls = SCHEDULERS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown scheduler kind {kind!r}; known: {sorted(SCHEDULERS)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {kind}: {exc}") from None


def evaluate(s: Scheduler, t, eps: float = 0.0) -> SchedulerOutput:
    return s(t, eps=eps)


def scale_time(src: Scheduler, dst: Scheduler, r) -> ScaleTime:
    """Scale-time map taking the ``src`` conditional flow onto the ``dst`` one.

    ``dst(r)`` flow equals ``s_r`` times the ``src`` flow at ``t_r``, with
    ``t_r = src.snr_inverse(dst.snr(r))``.  Identical schedulers short-circuit
    to the exact identity.
    """
    r = _as_time(r)
    if src == dst:
        one = np.ones_like(r)
        return ScaleTime(_maybe_scalar(r.copy()), _maybe_scalar(one), _maybe_scalar(one.copy()), _maybe_scalar(np.zeros_like(r)))
    lo, hi = src.snr_range()
    dlo, dhi = dst.snr_range()
    if dlo < lo or dhi > hi:
        raise DomainError(
            f"snr range of {dst.kind} [{dlo:.3g}, {dhi:.3g}] not covered by {src.kind} [{lo:.3g}, {hi:.3g}]"
        )
    t = np.asarray(src.snr_inverse(dst.snr(r)), dtype=float)
    a, sg, da, dsg = (np.asarray(v, dtype=float) for v in src(t))
    ab, sb, dab, dsb = (np.asarray(v, dtype=float) for v in dst(r))
    with np.errstate(divide="ignore", invalid="ignore"):
        # Work with alpha/sigma or sigma/alpha, whichever is bounded.
        noisy = sg >= a
        drho_bar = np.where(noisy, (dab * sb - ab * dsb) / sb**2, (dsb * ab - sb * dab) / ab**2)
        drho = np.where(noisy, (da * sg - a * dsg) / sg**2, (dsg * a - sg * da) / a**2)
        dt = drho_bar / drho
        s = np.where(noisy, sb / sg, ab / a)
        ds = np.where(noisy, (dsb * sg - sb * dsg * dt) / sg**2, (dab * a - ab * da * dt) / a**2)
    return ScaleTime(*(_maybe_scalar(v) for v in (t, s, dt, ds)))


@dataclass(frozen=True)
class MixtureScheduler:
    """``kappa(t) = t**n``; ``n = 1`` is the linear scheduler."""

    n: float = 1.0

    def __post_init__(self):
        if not self.n > 0:
            raise ConfigurationError(f"mixture exponent must be positive, got {self.n}")

    @classmethod
    def linear(cls) -> "MixtureScheduler":
        return cls(1.0)

    @classmethod
    def polynomial(cls, n: float) -> "MixtureScheduler":
        return cls(float(n))

    def kappa(self, t):
        return _maybe_scalar(np.asarray(t, dtype=float) ** self.n)

    def d_kappa(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return _maybe_scalar(self.n * t ** (self.n - 1.0))

    def __call__(self, t):
        return self.kappa(t), self.d_kappa(t)

    def to_dict(self) -> dict:
        return {"kind": "polynomial_convex", "params": {"n": float(self.n)}}

    @classmethod
    def from_dict(cls, d) -> "MixtureScheduler":
        if d.get("kind") not in ("polynomial_convex", "linear"):
            raise ConfigurationError(f"unknown mixture scheduler kind {d.get('kind')!r}")
        return cls(float(d.get("params", {}).get("n", 1.0)))
