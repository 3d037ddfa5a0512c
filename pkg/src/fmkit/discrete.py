"""Discrete flow matching with factorized mixture paths on ``[K]^d``.

Token arrays have shape ``(n, d)`` (or ``(d,)``).  A rate view has one extra
trailing axis of length ``K``: ``rates[..., i, y]`` is the rate of moving
coordinate ``i`` from its current value to ``y``; the entry at the current
value is minus the total outflow.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .errors import ArgumentError, ConfigurationError, DomainError, SingularityError
from .model import MLP, register_model
from .scheduler import MixtureScheduler
from .solver import time_grid

LOG_FLOOR = 1e-30
T_MAX = 1.0 - 1e-3
MAX_STATES = 10_000


@dataclass
class DiscretePathSample:
    t: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    x_t: np.ndarray


def one_hot(x, K: int) -> np.ndarray:
    x = np.asarray(x, dtype=int)
    return (x[..., None] == np.arange(K)).astype(float)


def _tcol(t, x):
    t = np.asarray(t, dtype=float)
    return t if t.ndim == 0 else t.reshape(t.shape + (1,) * (np.ndim(x) - t.ndim))


def check_tokens(x, K: int):
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() >= K):
        raise ArgumentError(f"tokens must lie in [0, {K})")
    return x.astype(int)


def sample_mixture_path(kappa: MixtureScheduler, t, x0, x1, rng: np.random.Generator) -> DiscretePathSample:
    """Each coordinate independently takes ``x1`` with probability ``kappa_t``, else ``x0``."""
    x0 = np.asarray(x0, dtype=int)
    x1 = np.asarray(x1, dtype=int)
    if x0.shape != x1.shape:
        raise ArgumentError(f"x0 and x1 shapes differ: {x0.shape} vs {x1.shape}")
    k = kappa.kappa(_tcol(t, x0))
    take = rng.random(x0.shape) < k
    return DiscretePathSample(np.asarray(t, dtype=float), x0, x1, np.where(take, x1, x0))


def _speed(kappa: MixtureScheduler, t, x):
    k, dk = kappa(_tcol(t, x))
    if np.any(np.asarray(k) >= 1.0):
        raise SingularityError("kappa_t = 1: mixture rates are singular")
    return np.asarray(dk / (1.0 - k))[..., None]


def conditional_rate(kappa: MixtureScheduler, t, x, x1, K: int, i: int | None = None):
    """``dk/(1-k) [delta(y, x1^i) - delta(y, x^i)]`` for every (or one) coordinate."""
    x = np.asarray(x, dtype=int)
    x1 = np.asarray(x1, dtype=int)
    rates = _speed(kappa, t, x) * (one_hot(x1, K) - one_hot(x, K))
    return rates if i is None else rates[..., i, :]


def rates_from_posterior(probs, kappa: MixtureScheduler, t, x):
    """Marginal factorized rates from posterior probabilities ``probs[..., i, :]``."""
    probs = np.asarray(probs, dtype=float)
    x = np.asarray(x, dtype=int)
    return _speed(kappa, t, x) * (probs - one_hot(x, probs.shape[-1]))


def marginal_rate(denoiser, kappa: MixtureScheduler, t, x):
    return rates_from_posterior(denoiser.forward(x, t), kappa, t, x)


def backward_rate(kappa: MixtureScheduler, t, x, source_pmf):
    """Backward-time rate ``dk/k [delta(y, x^i) - p(y)]`` for an i.i.d. source ``p``."""
    x = np.asarray(x, dtype=int)
    p = np.asarray(source_pmf, dtype=float)
    k, dk = kappa(_tcol(t, x))
    if np.any(np.asarray(k) <= 0.0) or np.any(np.asarray(k) >= 1.0):
        raise SingularityError("backward rate needs 0 < kappa_t < 1")
    return np.asarray(dk / k)[..., None] * (one_hot(x, p.size) - p)


def corrector_rate(kappa: MixtureScheduler, t, x, x1, source_pmf, c: float, i: int | None = None):
    """Conditional rate plus ``c`` times the divergence-free part ``u - u_backward``."""
    K = np.asarray(source_pmf).size
    u = conditional_rate(kappa, t, x, x1, K)
    out = u if c == 0 else u + c * (u - backward_rate(kappa, t, x, source_pmf))
    return out if i is None else out[..., i, :]


def rate_conditions_hold(rates, x, atol: float = 1e-9) -> bool:
    """Off-current entries nonnegative and each coordinate's row summing to zero."""
    rates = np.asarray(rates, dtype=float)
    off = np.where(one_hot(x, rates.shape[-1]) > 0, 0.0, rates)
    return bool(np.all(off >= -atol) and np.allclose(rates.sum(-1), 0.0, atol=atol))


def _lastsum(a):
    # numpy reductions over a short trailing axis are slow; add slices instead
    if a.shape[-1] > 16:
        return a.sum(-1)
    total = a[..., 0].copy()
    for k in range(1, a.shape[-1]):
        total += a[..., k]
    return total


def euler_transition_probs(rates, x, h: float):
    """Per-coordinate step distribution: stay with ``exp(h u(x,x))``, otherwise
    move proportionally to the off-current rates."""
    rates = np.asarray(rates, dtype=float)
    cur = np.asarray(x, dtype=int)[..., None]
    diag = np.take_along_axis(rates, cur, -1)[..., 0]
    out = np.clip(rates, 0.0, None)
    np.put_along_axis(out, cur, 0.0, -1)
    out_total = _lastsum(out)
    stay = np.exp(h * diag)
    scale = np.divide(1.0 - stay, out_total, out=np.zeros_like(stay), where=out_total > 0)
    out *= scale[..., None]
    np.put_along_axis(out, cur, stay[..., None], -1)
    return out


def sample_categorical(probs, rng: np.random.Generator):
    """Inverse-CDF draw along the last axis (weights need not be normalized)."""
    probs = np.asarray(probs, dtype=float)
    K = probs.shape[-1]
    rows = np.ascontiguousarray(probs.reshape(-1, K).T)
    u = rng.random(rows.shape[1]) * rows.sum(0)
    idx = np.zeros(rows.shape[1], dtype=int)
    acc = np.zeros(rows.shape[1])
    for k in range(K - 1):
        acc += rows[k]
        idx += acc <= u
    return idx.reshape(probs.shape[:-1])


def ctmc_euler_step(rates, x, h: float, rng: np.random.Generator):
    if not h > 0:
        raise ArgumentError("step size must be positive")
    return sample_categorical(euler_transition_probs(rates, x, h), rng)


# losses -----------------------------------------------------------------------


def generalized_kl(u, v):
    """Bregman divergence ``sum u log(u/v) - sum u + sum v`` for nonnegative vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ulog = np.where(u > 0, u * np.log(u / v), 0.0)
    return ulog.sum(-1) - u.sum(-1) + v.sum(-1)


def _gkl_terms(probs, x_t, x1, weight, stats=None):
    p_x1 = np.take_along_axis(probs, x1[..., None], -1)[..., 0]
    p_xt = np.take_along_axis(probs, x_t[..., None], -1)[..., 0]
    clamped = int(np.sum(p_x1 < LOG_FLOOR))
    if clamped:
        warnings.warn(f"posterior below {LOG_FLOOR:g} at {clamped} observed tokens; log clamped", RuntimeWarning)
        if stats is not None:
            stats["clamped"] = stats.get("clamped", 0) + clamped
    same = (x1 == x_t).astype(float)
    terms = weight * ((same - 1.0) * np.log(np.maximum(p_x1, LOG_FLOOR)) + same - p_xt)
    return terms, same, p_xt


def generalized_kl_loss(denoiser, t, x_t, x1, kappa: MixtureScheduler, stats: dict | None = None):
    """Mean over batch and coordinates of the mixture-path generalized KL.

    Returns ``(loss, parameter_gradient)``; times are clipped to ``1 - 1e-3``.
    """
    x_t = np.asarray(x_t, dtype=int)
    x1 = np.asarray(x1, dtype=int)
    t = np.minimum(np.asarray(t, dtype=float), T_MAX)
    logits, cache = denoiser.forward_cached(x_t, t)
    probs = softmax(logits, axis=-1)
    weight = _speed(kappa, t, x_t)[..., 0]
    terms, same, p_xt = _gkl_terms(probs, x_t, x1, weight, stats)
    n_terms = terms.size
    K = probs.shape[-1]
    g = ((same - 1.0)[..., None] * (one_hot(x1, K) - probs) - p_xt[..., None] * (one_hot(x_t, K) - probs))
    g = g * (weight / n_terms)[..., None]
    grad = denoiser.backward(cache, g)
    return float(terms.sum() / n_terms), grad


def elbo(denoiser, x1, kappa: MixtureScheduler, source_sampler, rng: np.random.Generator, n_mc: int = 16):
    """Monte-Carlo upper bound on ``-log p_1(x1)`` per sequence (nats).

    ``source_sampler(rng, shape)`` draws ``X0`` tokens.
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=int))
    total = np.zeros(x1.shape[0])
    for _ in range(n_mc):
        t = rng.random(x1.shape[0]) * T_MAX
        x0 = source_sampler(rng, x1.shape)
        xt = sample_mixture_path(kappa, t, x0, x1, rng).x_t
        probs = denoiser.forward(xt, t)
        weight = _speed(kappa, t, xt)[..., 0]
        terms, _, _ = _gkl_terms(probs, xt, x1, weight)
        total += terms.sum(-1)
    return total / n_mc


# models ------------------------------------------------------------------------


class DiscreteDenoiser:
    """Posterior network ``p_{1|t}(. | x)``: MLP on one-hot tokens and time."""

    kind = "mlp_denoiser"

    def __init__(self, vocab_size: int, seq_len: int, hidden=(128, 128), seed: int | None = 0, mask_token: int | None = None):
        self.K = int(vocab_size)
        self.d = int(seq_len)
        # a mask token is an input symbol only: its posterior logit is pinned to -1e30
        self.mask_token = None if mask_token is None else int(mask_token)
        self.net = MLP(self.K * self.d, hidden=hidden, seed=seed)

    @property
    def params(self):
        return self.net.params

    @params.setter
    def params(self, value):
        self.net.params = value

    @property
    def n_params(self):
        return self.net.n_params

    def quantize(self):
        self.net.quantize()
        return self

    def _features(self, x):
        x = check_tokens(x, self.K)
        if x.shape[-1] != self.d:
            raise ArgumentError(f"expected sequences of length {self.d}, got {x.shape[-1]}")
        return one_hot(x, self.K).reshape(x.shape[:-1] + (self.d * self.K,))

    def forward_cached(self, x, t):
        out, cache = self.net.forward_cached(self._features(x), t)
        out = out.reshape(out.shape[:-1] + (self.d, self.K))
        if self.mask_token is not None:
            out[..., self.mask_token] = -1e30
        return out, cache

    def logits(self, x, t):
        return self.forward_cached(x, t)[0]

    def forward(self, x, t, cond=None):
        return softmax(self.logits(x, t), axis=-1)

    def backward(self, cache, grad_logits):
        g = np.array(grad_logits, dtype=float)
        if self.mask_token is not None:
            g[..., self.mask_token] = 0.0
        g = g.reshape(g.shape[:-2] + (self.d * self.K,))
        return self.net.backward(cache, g)[0]

    def config(self) -> dict:
        return {"model": self.kind, "vocab_size": self.K, "seq_len": self.d, "mask_token": self.mask_token,
                "hidden": list(self.net.hidden),
                "widths": list(self.net.widths), "activation": self.net.activation}

    @classmethod
    def from_config(cls, cfg: dict, params):
        m = cls(cfg["vocab_size"], cfg["seq_len"], cfg["hidden"], seed=None, mask_token=cfg.get("mask_token"))
        if params.size != m.n_params:
            raise ConfigurationError("checkpoint parameter count does not match denoiser architecture")
        m.params = params.astype(np.float64)
        return m


register_model(DiscreteDenoiser.kind, DiscreteDenoiser.from_config)


def make_source_sampler(kind: str, K: int):
    """``uniform`` i.i.d. tokens, or ``mask``: every token is the reserved index ``K - 1``."""
    if kind == "uniform":
        return lambda rng, shape: rng.integers(0, K, size=shape)
    if kind == "mask":
        return lambda rng, shape: np.full(shape, K - 1, dtype=int)
    raise ConfigurationError(f"unknown discrete source {kind!r}")


def source_pmf(kind: str, K: int) -> np.ndarray:
    if kind == "uniform":
        return np.full(K, 1.0 / K)
    p = np.zeros(K)
    p[K - 1] = 1.0
    return p


def dfm_sample(
    denoiser,
    x_init,
    kappa: MixtureScheduler,
    h: float,
    rng: np.random.Generator,
    t_start: float = 0.0,
    t_end: float = T_MAX,
    corrector=0.0,
    source=None,
    record=(),
    finish: bool = True,
):
    """Mixture-path Euler sampler: draw ``X1^i`` from the posterior, then take
    the CTMC Euler step with the conditional (optionally corrected) rate.

    ``corrector`` is a constant or a callable ``c(t)``; it is applied only where
    ``0 < kappa_t < 1`` and needs the i.i.d. ``source`` pmf.  With ``finish`` the
    leftover interval ``[t_end, 1]`` is integrated exactly: the conditional rate
    moves every coordinate to its posterior draw with probability one there.
    Returns the final tokens, or ``(final, {t: tokens})`` when ``record`` lists
    grid times.
    """
    x = np.array(x_init, dtype=int)
    K = getattr(denoiser, "K", None) or np.asarray(source).size
    c_of = corrector if callable(corrector) else (lambda _t, c=float(corrector): c)
    times = time_grid(t_start, t_end, h)
    snaps = {}
    for t0, t1 in zip(times[:-1], times[1:]):
        for r in record:
            if abs(t0 - r) < 1e-9:
                snaps[r] = x.copy()
        probs = denoiser.forward(x, t0)
        x1 = sample_categorical(probs, rng)
        c = c_of(t0)
        k = kappa.kappa(t0)
        if c and 0.0 < k < 1.0:
            if source is None:
                raise ArgumentError("corrector sampling needs the source pmf")
            rates = corrector_rate(kappa, t0, x, x1, source, c)
        else:
            rates = conditional_rate(kappa, t0, x, x1, K)
        x = ctmc_euler_step(rates, x, t1 - t0, rng)
    if finish and kappa.kappa(times[-1]) < 1.0:
        x = sample_categorical(denoiser.forward(x, times[-1]), rng)
    for r in record:
        if abs(times[-1] - r) < 1e-9:
            snaps[r] = x.copy()
    return (x, snaps) if record else x


def simulate_ctmc(rate_fn, x_init, times, rng: np.random.Generator, record=()):
    """Generic factorized-CTMC Euler simulation with ``rate_fn(x, t) -> rates``."""
    x = np.array(x_init, dtype=int)
    snaps = {}
    for t0, t1 in zip(times[:-1], times[1:]):
        for r in record:
            if abs(t0 - r) < 1e-9:
                snaps[r] = x.copy()
        x = ctmc_euler_step(rate_fn(x, t0), x, t1 - t0, rng)
    for r in record:
        if abs(times[-1] - r) < 1e-9:
            snaps[r] = x.copy()
    return x, snaps


# brute-force enumeration ----------------------------------------------------------


def enumerate_states(K: int, d: int) -> np.ndarray:
    if K**d > MAX_STATES:
        raise DomainError(f"state space K^d = {K}^{d} exceeds {MAX_STATES}")
    return np.array(list(itertools.product(range(K), repeat=d)), dtype=int).reshape(-1, d)


def state_index(x, K: int) -> np.ndarray:
    x = np.asarray(x, dtype=int)
    d = x.shape[-1]
    return x @ (K ** np.arange(d - 1, -1, -1))


def empirical_pmf(x, K: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=int))
    return np.bincount(state_index(x, K), minlength=K ** x.shape[-1]) / x.shape[0]


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class BruteForceResult:
    states: np.ndarray
    p_t: np.ndarray
    posteriors: np.ndarray
    rates: np.ndarray
    generator: np.ndarray
    source_posteriors: np.ndarray


def _conditional_factors(states, x, k):
    """``p_{t|0,1}(x | x0, x1)`` over all (x0, x1) pairs, shape ``(S, S)``."""
    S = states.shape[0]
    out = np.ones((S, S))
    for i in range(states.shape[1]):
        hit = (states[:, i] == x[i]).astype(float)
        out *= k * hit[None, :] + (1.0 - k) * hit[:, None]
    return out


def _conditional_factor_rate(states, x, k, dk):
    """Time derivative of :func:`_conditional_factors` by the product rule."""
    S, d = states.shape
    facs, dfacs = [], []
    for i in range(d):
        hit = (states[:, i] == x[i]).astype(float)
        facs.append(k * hit[None, :] + (1.0 - k) * hit[:, None])
        dfacs.append(dk * (hit[None, :] - hit[:, None]))
    total = np.zeros((S, S))
    for j in range(d):
        term = dfacs[j].copy()
        for i in range(d):
            if i != j:
                term *= facs[i]
        total += term
    return total


def _check_coupling(coupling, K, d):
    states = enumerate_states(K, d)
    S = states.shape[0]
    coupling = np.asarray(coupling, dtype=float)
    if coupling.shape != (S, S):
        raise ArgumentError(f"coupling table must be ({S}, {S}) over (x0, x1) state indices")
    if np.any(coupling < 0) or not np.isclose(coupling.sum(), 1.0):
        raise ArgumentError("coupling must be a nonnegative table summing to 1")
    return states, coupling


def brute_force_marginals(kappa: MixtureScheduler, t: float, coupling, K: int, d: int) -> BruteForceResult:
    """Exact ``p_t``, posteriors ``p^i_{1|t}`` and marginal rates by enumeration."""
    states, coupling = _check_coupling(coupling, K, d)
    S = states.shape[0]
    k = float(kappa.kappa(t))
    p_t = np.zeros(S)
    post = np.zeros((S, d, K))
    post0 = np.zeros((S, d, K))
    for s, x in enumerate(states):
        w = coupling * _conditional_factors(states, x, k)
        p_t[s] = w.sum()
        x1_mass, x0_mass = w.sum(0), w.sum(1)
        if p_t[s] > 0:
            for i in range(d):
                post[s, i] = np.bincount(states[:, i], weights=x1_mass, minlength=K) / p_t[s]
                post0[s, i] = np.bincount(states[:, i], weights=x0_mass, minlength=K) / p_t[s]
    rates = rates_from_posterior(post, kappa, t, states) if k < 1 else np.zeros((S, d, K))
    return BruteForceResult(states, p_t, post, rates, _generator(states, rates, K), post0)


def marginal_backward_rates(kappa: MixtureScheduler, t: float, res: BruteForceResult) -> np.ndarray:
    """``dk/k [delta(y, x^i) - p^i_{0|t}(y | x)]``: a second generator of the same path."""
    k, dk = (float(v) for v in kappa(t))
    if not 0.0 < k < 1.0:
        raise SingularityError("backward rate needs 0 < kappa_t < 1")
    K = res.posteriors.shape[-1]
    return dk / k * (one_hot(res.states, K) - res.source_posteriors)


def _generator(states, rates, K):
    """Full ``(S, S)`` matrix with ``Q[y, x] = u(y, x)`` (one-coordinate jumps)."""
    S, d = states.shape
    Q = np.zeros((S, S))
    for s, x in enumerate(states):
        for i in range(d):
            z = np.repeat(x[None, :], K, axis=0)
            z[:, i] = np.arange(K)
            np.add.at(Q, (state_index(z, K), s), rates[s, i])
    return Q


def exact_dpdt(kappa: MixtureScheduler, t: float, coupling, K: int, d: int) -> np.ndarray:
    states, coupling = _check_coupling(coupling, K, d)
    k, dk = (float(v) for v in kappa(t))
    return np.array([(coupling * _conditional_factor_rate(states, x, k, dk)).sum() for x in states])


def kolmogorov_residual(kappa: MixtureScheduler, t: float, coupling, K: int, d: int, fd_step: float | None = 1e-5):
    """``max_y |d/dt p_t(y) - sum_x u(y, x) p_t(x)|`` with enumerated rates.

    ``d/dt`` is a central difference with ``fd_step``, or analytic when ``None``.
    """
    res = brute_force_marginals(kappa, t, coupling, K, d)
    if fd_step is None:
        dp = exact_dpdt(kappa, t, coupling, K, d)
    else:
        hi = brute_force_marginals(kappa, t + fd_step, coupling, K, d).p_t
        lo = brute_force_marginals(kappa, t - fd_step, coupling, K, d).p_t
        dp = (hi - lo) / (2 * fd_step)
    return float(np.max(np.abs(dp - res.generator @ res.p_t)))


class ExactPosterior:
    """Denoiser returning the enumerated posterior of a coupling table."""

    def __init__(self, kappa: MixtureScheduler, coupling, K: int, d: int):
        self.kappa, self.coupling, self.K, self.d = kappa, np.asarray(coupling, dtype=float), K, d
        self._cache: dict[float, BruteForceResult] = {}

    def result(self, t: float) -> BruteForceResult:
        key = float(t)
        if key not in self._cache:
            self._cache = {key: brute_force_marginals(self.kappa, key, self.coupling, self.K, self.d)}
        return self._cache[key]

    def _lookup(self, field, x, t):
        idx = state_index(x, self.K)
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return getattr(self.result(t), field)[idx]
        # per-row times: enumerate once per distinct value
        out = np.empty(idx.shape + (self.d, self.K))
        for tv in np.unique(t):
            rows = t == tv
            out[rows] = getattr(self.result(tv), field)[idx[rows]]
        return out

    def forward(self, x, t, cond=None):
        return self._lookup("posteriors", x, t)

    def rates(self, x, t):
        return self._lookup("rates", x, t)

    def corrected_rates(self, x, t, c: float):
        """Marginal rates plus ``c`` times the exact divergence-free part; plain
        rates where ``kappa_t`` is 0 or 1."""
        t = float(t)
        res = self.result(t)
        idx = state_index(x, self.K)
        if c == 0 or not 0.0 < float(self.kappa.kappa(t)) < 1.0:
            return res.rates[idx]
        back = marginal_backward_rates(self.kappa, t, res)
        return ((1.0 + c) * res.rates - c * back)[idx]
