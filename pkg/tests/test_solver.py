import math

import numpy as np
import pytest

from fmkit.errors import ConfigurationError, SimulationError, UnsupportedError
from fmkit.model import MLP, GaussianOracleVelocity
from fmkit.path import gaussian_marginal_logpdf, standard_normal_logpdf
from fmkit.scheduler import CondOTScheduler, LinearVPScheduler
from fmkit.solver import (
    ScheduleTransformedModel,
    SolveConfig,
    compute_likelihood,
    endpoint,
    exact_divergence,
    hutchinson_divergence,
    ode_sample,
    sde_sample,
    time_grid,
)

A = np.array([[1.0, 2.0], [3.0, 4.0]])


def linear_field(x, t):
    return x @ A.T


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolveConfig(method="rk4")
    with pytest.raises(ConfigurationError):
        SolveConfig(t_start=0.5, t_end=0.2)
    with pytest.raises(ConfigurationError):
        SolveConfig(step_size=2.0)
    with pytest.raises(ConfigurationError):
        SolveConfig(step_size=0.0)


def test_time_grid_shortened_last_step():
    g = time_grid(0.0, 1.0, 0.3)
    np.testing.assert_allclose(g, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert g[-1] == 1.0
    assert time_grid(1.0, 0.0, 0.25)[-1] == 0.0


@pytest.mark.parametrize("method", ["euler", "midpoint"])
def test_constant_field(method):
    c = np.array([0.5, -1.25])
    traj = ode_sample(lambda x, t: np.broadcast_to(c, x.shape), np.zeros(2), SolveConfig(method=method, step_size=0.1))
    assert traj[0][0] == 0.0 and traj[-1][0] == 1.0
    np.testing.assert_allclose(endpoint(traj), c, atol=1e-14)


def _linear_error(method, h):
    x1 = endpoint(ode_sample(lambda x, t: x, np.array([1.0]), SolveConfig(method=method, step_size=h)))
    return abs(x1[0] - math.e)


def test_midpoint_accuracy():
    assert _linear_error("midpoint", 0.01) < 1e-4


def test_order_ratios():
    e = {h: _linear_error("euler", h) for h in (0.02, 0.01, 0.005)}
    m = {h: _linear_error("midpoint", h) for h in (0.02, 0.01, 0.005)}
    for a, b in ((0.02, 0.01), (0.01, 0.005)):
        assert 1.7 <= e[a] / e[b] <= 2.3
        assert 3.5 <= m[a] / m[b] <= 4.5


def test_conditional_field_reaches_target():
    eps = 1e-3
    x0, x1 = np.array([0.3, -0.7]), np.array([2.0, 1.0])
    f = lambda x, t: (x1 - x) / (1 - t)
    traj = ode_sample(f, x0, SolveConfig(method="euler", step_size=0.01, t_end=1 - eps))
    assert np.linalg.norm(endpoint(traj) - x1) <= eps * np.linalg.norm(x1 - x0) + 1e-12


def test_nan_raises_with_time():
    f = lambda x, t: np.full_like(x, np.nan) if t > 0.5 else x
    with pytest.raises(SimulationError) as err:
        ode_sample(f, np.ones(1), SolveConfig(step_size=0.1))
    assert err.value.t == pytest.approx(0.6)


def test_keep_path_false():
    traj = ode_sample(lambda x, t: x, np.ones(1), SolveConfig(step_size=0.1), keep_path=False)
    assert len(traj) == 2


def test_sde_beta_zero_equals_euler():
    m = MLP(2, seed=3)
    x = np.random.default_rng(0).standard_normal((5, 2))
    cfg = SolveConfig(method="euler", step_size=0.05)
    a = ode_sample(m, x, cfg)
    b = sde_sample(m, x, cfg, np.random.default_rng(1))
    for (ta, xa), (tb, xb) in zip(a, b):
        assert ta == tb
        np.testing.assert_array_equal(xa, xb)


def test_sde_needs_score():
    with pytest.raises(UnsupportedError):
        sde_sample(lambda x, t: x, np.zeros(1), SolveConfig(beta=0.5), np.random.default_rng(0))


def test_pure_langevin_stationary():
    # u = 0 and score of N(0,1): dX = -(beta^2/2) X dt + beta dW keeps N(0,1)
    cfg = SolveConfig(method="euler", step_size=0.01, beta=1.5)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((10_000, 1)) * 3.0
    for _ in range(5):
        x = endpoint(sde_sample(lambda y, t: np.zeros_like(y), x, cfg, rng, score=lambda y, t, c=None: -y, keep_path=False))
    v = x.var()
    se = np.sqrt(2.0 / 10_000)
    # Euler-Maruyama bias for OU: stationary variance 1/(1 - h beta^2/4)
    bias = 1.0 / (1 - 0.01 * 1.5**2 / 4) - 1.0
    assert abs(v - 1.0 - bias) < 3 * se


def test_sde_gaussian_oracle_marginals():
    mu = np.array([2.0, 0.0])
    model = GaussianOracleVelocity(mu, 1.0)
    rng = np.random.default_rng(3)
    cfg = SolveConfig(method="euler", step_size=0.002, t_end=1 - 1e-3, beta=0.5)
    x = endpoint(sde_sample(model, rng.standard_normal((10_000, 2)), cfg, rng, keep_path=False))
    assert np.all(np.abs(x.mean(0) - mu) < 3 * x.std(0) / 100)
    np.testing.assert_allclose(x.var(0), 1.0, rtol=0.05)


def test_exact_divergence_linear():
    x = np.random.default_rng(4).standard_normal((3, 2))
    np.testing.assert_allclose(exact_divergence(linear_field, x, 0.0), 5.0, atol=1e-8)
    m = MLP(2, seed=1)
    np.testing.assert_allclose(exact_divergence(m, x, 0.3, method="vjp"), exact_divergence(m, x, 0.3, method="fd"), atol=1e-6)


def test_rotation_divergence_free():
    rot = lambda x, t: np.stack([-x[..., 1], x[..., 0]], -1)
    x = np.random.default_rng(5).standard_normal((4, 2))
    np.testing.assert_allclose(exact_divergence(rot, x, 0.0), 0.0, atol=1e-10)
    np.testing.assert_allclose(hutchinson_divergence(rot, x, 0.0, n=10, rng=np.random.default_rng(0)), 0.0, atol=1e-10)


def test_hutchinson_unbiased():
    rng = np.random.default_rng(6)
    n = 10_000
    x = np.zeros((1, 2))
    per_probe = np.array([hutchinson_divergence(linear_field, x, 0.0, probes=z[None])[0] for z in rng.choice([-1.0, 1.0], (n, 1, 2))])
    assert abs(per_probe.mean() - 5.0) < 3 * per_probe.std(ddof=1) / np.sqrt(n)


def test_hutchinson_gaussian_probes():
    rng = np.random.default_rng(7)
    d = hutchinson_divergence(linear_field, np.zeros((1, 2)), 0.0, n=20_000, dist="gaussian", rng=rng)
    assert abs(d[0] - 5.0) < 0.2


def test_likelihood_zero_field():
    x = np.array([[0.3, -1.0], [2.0, 0.5]])
    x0, lp = compute_likelihood(lambda y, t: np.zeros_like(y), x, standard_normal_logpdf, SolveConfig(step_size=0.1))
    np.testing.assert_array_equal(x0, x)
    np.testing.assert_allclose(lp, standard_normal_logpdf(x))


def test_likelihood_linear_field():
    a = 0.7
    x_start = np.array([[0.4, -0.2]])
    f = lambda y, t: a * y
    cfg = SolveConfig(method="midpoint", step_size=0.001)
    x1 = endpoint(ode_sample(f, x_start, cfg))
    x0, lp = compute_likelihood(f, x1, standard_normal_logpdf, cfg)
    np.testing.assert_allclose(x0, x_start, atol=1e-6)
    np.testing.assert_allclose(lp, standard_normal_logpdf(x_start) - 2 * a, atol=1e-6)


def test_likelihood_hutchinson_matches_exact_on_average():
    m = MLP(2, hidden=(16,), seed=2)
    x = np.array([[0.1, 0.2]])
    cfg = SolveConfig(method="midpoint", step_size=0.05)
    _, exact = compute_likelihood(m, x, standard_normal_logpdf, cfg)
    est = [compute_likelihood(m, x, standard_normal_logpdf, SolveConfig(method="midpoint", step_size=0.05, divergence="hutchinson", n_probes=4), np.random.default_rng(s))[1][0] for s in range(200)]
    est = np.array(est)
    assert abs(est.mean() - exact[0]) < 3 * est.std(ddof=1) / np.sqrt(200) + 1e-6


def test_likelihood_gaussian_oracle():
    mu = np.array([2.0, 0.0])
    eps = 1e-3
    cfg = SolveConfig(method="midpoint", step_size=0.01, eps=eps)
    _, lp = compute_likelihood(GaussianOracleVelocity(mu, 1.0), mu[None], standard_normal_logpdf, cfg, clip=True)
    ref = gaussian_marginal_logpdf(1 - eps, mu, mu, 1.0)
    assert abs(lp[0] - ref) < 0.05


def test_scheduler_equivalence_sampling():
    mu = np.array([2.0, 0.0])
    direct = GaussianOracleVelocity(mu, 1.0, LinearVPScheduler())
    base = GaussianOracleVelocity(mu, 1.0, CondOTScheduler())
    wrapped = ScheduleTransformedModel(base, CondOTScheduler(), LinearVPScheduler())
    cfg = SolveConfig(method="euler", step_size=1e-3, t_end=1 - 1e-3)
    x = np.random.default_rng(8).standard_normal((100, 2))
    a = endpoint(ode_sample(direct, x, cfg, keep_path=False))
    b = endpoint(ode_sample(wrapped, x, cfg, keep_path=False))
    assert np.max(np.abs(a - b)) < 1e-2


def test_identity_transform_is_bitwise():
    m = MLP(2, seed=0)
    w = ScheduleTransformedModel(m, CondOTScheduler(), CondOTScheduler())
    assert w.is_identity
    x = np.ones((2, 2))
    np.testing.assert_array_equal(w.forward(x, 0.4), m.forward(x, 0.4))
