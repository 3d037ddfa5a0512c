import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import convert_by_solve, mc_conditional_velocity
from fmkit.errors import ArgumentError, SingularityError, UnsupportedError
from fmkit.path import (
    Parameterization,
    PathSample,
    conditional_score,
    conditional_velocity,
    conversion_coefficients,
    convert,
    gaussian_posterior_means,
    marginal_velocity_gaussian_oracle,
    sample_path,
)
from fmkit.scheduler import CondOTScheduler, CosineScheduler, LinearVPScheduler, PolynomialScheduler, VPScheduler

NAMES = [p.value for p in Parameterization]
SCHEDS = [CondOTScheduler(), LinearVPScheduler(), CosineScheduler(), PolynomialScheduler(2.0), VPScheduler()]


def test_condot_midpoint_sample():
    ps = sample_path(CondOTScheduler(), 0.5, [0.0, 0.0], [2.0, 4.0])
    np.testing.assert_array_equal(ps.x_t, [1.0, 2.0])
    np.testing.assert_array_equal(ps.dx_t, [2.0, 4.0])


@pytest.mark.parametrize("s", SCHEDS[:4], ids=lambda s: s.kind)
def test_t0_is_source(s):
    x0 = np.array([0.3, -1.2, 5.0])
    ps = sample_path(s, 0.0, x0, np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(ps.x_t, x0)


def test_linear_vp_sample_by_hand():
    ps = sample_path(LinearVPScheduler(), 0.6, [1.0], [0.0])
    assert ps.x_t[0] == pytest.approx(0.8, abs=1e-15)
    assert ps.dx_t[0] == pytest.approx(-0.75, abs=1e-14)
    h = 1e-6
    fd = (sample_path(LinearVPScheduler(), 0.6 + h, [1.0], [0.0]).x_t - sample_path(LinearVPScheduler(), 0.6 - h, [1.0], [0.0]).x_t) / (2 * h)
    assert abs(fd[0] + 0.75) < 1e-8


def test_shape_mismatch():
    with pytest.raises(ArgumentError):
        sample_path(CondOTScheduler(), 0.5, [0.0], [1.0, 2.0])


def test_path_sample_rows_and_header():
    ps = sample_path(CondOTScheduler(), np.array([0.25, 0.5]), np.zeros((2, 2)), np.ones((2, 2)))
    assert ps.csv_header() == "t,x0_0,x0_1,x1_0,x1_1,xt_0,xt_1,dxt_0,dxt_1"
    np.testing.assert_array_equal(ps.rows()[1], [0.5, 0, 0, 1, 1, 0.5, 0.5, 1, 1])
    assert len(ps) == 2


def test_conditional_velocity_examples():
    assert conditional_velocity(CondOTScheduler(), 0.5, np.array([0.0]), np.array([1.0]))[0] == 2.0
    x, x1 = np.array([0.4, -2.0]), np.array([1.5, 3.0])
    for s in SCHEDS[:4]:
        _, _, da, ds = s(0.0)
        np.testing.assert_allclose(conditional_velocity(s, 0.0, x, x1), da * x1 + ds * x, atol=1e-15)
    assert conditional_velocity(LinearVPScheduler(), 0.6, np.array([0.8]), np.array([0.0]))[0] == pytest.approx(-0.75)
    ps = sample_path(LinearVPScheduler(), 0.6, [1.0], [0.0])
    assert conditional_velocity(LinearVPScheduler(), 0.6, ps.x_t, ps.x1)[0] == pytest.approx(ps.dx_t[0], abs=1e-14)


def test_conditional_velocity_singular():
    with pytest.raises(SingularityError):
        conditional_velocity(CondOTScheduler(), 1.0, np.array([0.0]), np.array([1.0]))
    with pytest.raises(SingularityError):
        conditional_score(CondOTScheduler(), 1.0, np.array([0.0]), np.array([1.0]))


@pytest.mark.parametrize("s", SCHEDS, ids=lambda s: s.kind)
def test_velocity_equals_dxt_random(s):
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 0.99, 1000)
    x0, x1 = rng.standard_normal((2, 1000, 3))
    ps = sample_path(s, t, x0, x1)
    assert np.max(np.abs(conditional_velocity(s, t, ps.x_t, x1) - ps.dx_t)) < 1e-9


def test_conditional_score_examples():
    s = CondOTScheduler()
    x1 = np.array([1.0, -2.0])
    np.testing.assert_array_equal(conditional_score(s, 0.3, 0.3 * x1, x1), [0.0, 0.0])
    assert conditional_score(s, 0.5, np.array([0.5]), np.array([1.0]))[0] == 0.0
    assert conditional_score(s, 0.5, np.array([1.0]), np.array([1.0]))[0] == -2.0


def test_conditional_score_is_gradient_of_log_density():
    s, t = LinearVPScheduler(), 0.4
    a, sg, _, _ = s(t)
    x1 = np.array([0.7, -0.3])
    x = np.array([0.1, 0.9])
    logp = lambda y: -0.5 * np.sum((y - a * x1) ** 2) / sg**2
    h = 1e-5
    fd = np.array([(logp(x + h * e) - logp(x - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(conditional_score(s, t, x, x1), fd, atol=1e-5)


def test_identity_coefficients():
    for name in NAMES:
        a, b = conversion_coefficients(name, name, CondOTScheduler(), 0.4)
        assert (float(a), float(b)) == (0.0, 1.0)


@pytest.mark.parametrize("s", SCHEDS, ids=lambda s: s.kind)
def test_conversions_match_linear_solve(s):
    rng = np.random.default_rng(4)
    for frm, to in itertools.permutations(NAMES, 2):
        for t in rng.uniform(0.05, 0.95, 5):
            x, v = rng.standard_normal(2)
            expected = convert_by_solve(frm, to, *s(t), x, v)
            got = convert(frm, to, s, t, np.array([x]), np.array([v]))[0]
            assert got == pytest.approx(expected, rel=1e-9, abs=1e-9), (frm, to, t)


@pytest.mark.parametrize("s", SCHEDS, ids=lambda s: s.kind)
def test_round_trips(s):
    rng = np.random.default_rng(5)
    t = rng.uniform(0.05, 0.95, 100)
    x = rng.standard_normal((100, 3))
    v = rng.standard_normal((100, 3))
    for frm, to in itertools.permutations(NAMES, 2):
        back = convert(to, frm, s, t, x, convert(frm, to, s, t, x, v))
        assert np.max(np.abs(back - v)) < 1e-9


def test_x1_to_velocity_examples():
    s = CondOTScheduler()
    assert convert("x1_prediction", "velocity", s, 0.5, np.array([0.0]), np.array([1.0]))[0] == 2.0
    rng = np.random.default_rng(6)
    t = rng.uniform(0.0, 0.95, 100)
    x, x1 = rng.standard_normal((2, 100, 2))
    got = convert("x1_prediction", "velocity", s, t, x, x1)
    assert np.max(np.abs(got - (x1 - x) / (1 - t)[:, None])) < 1e-12


def test_score_zero_gives_alpha_ratio():
    s, t = CosineScheduler(), 0.3
    a, _, da, _ = s(t)
    x = np.array([0.2, -0.5])
    np.testing.assert_allclose(convert("score", "velocity", s, t, x, np.zeros(2)), (da / a) * x, rtol=1e-12)


def test_score_requires_gaussian_source():
    with pytest.raises(UnsupportedError):
        convert("score", "velocity", CondOTScheduler(), 0.5, np.zeros(1), np.zeros(1), gaussian_source=False)
    # non-score conversions do not care
    convert("x1_prediction", "velocity", CondOTScheduler(), 0.5, np.zeros(1), np.zeros(1), gaussian_source=False)


def test_singular_conversion_raises():
    with pytest.raises(SingularityError):
        convert("x1_prediction", "velocity", CondOTScheduler(), 1.0, np.zeros(1), np.zeros(1))
    with pytest.raises(SingularityError):
        convert("x0_prediction", "velocity", CondOTScheduler(), 0.0, np.zeros(1), np.zeros(1))


def test_parameterization_parse():
    assert Parameterization.parse("score") is Parameterization.SCORE
    with pytest.raises(ArgumentError):
        Parameterization.parse("noise")


# Gaussian oracle ---------------------------------------------------------------
#
# X0 ~ N(0, I), X1 ~ N(mu, s2 I) independent and X_t = a X1 + g X0.  (X1, X_t) is
# jointly Gaussian with Cov(X1, X_t) = a s2, Var(X_t) = a^2 s2 + g^2, so
#   E[X1 | X_t = x] = mu + a s2 (x - a mu) / (a^2 s2 + g^2)
#   E[X0 | X_t = x] = g (x - a mu) / (a^2 s2 + g^2)
# and the marginal velocity is da E[X1|x] + dg E[X0|x].


def test_posterior_means_satisfy_constraint():
    rng = np.random.default_rng(7)
    mu = np.array([2.0, -1.0])
    for t in (0.1, 0.5, 0.9):
        x = rng.standard_normal(2)
        e1, e0 = gaussian_posterior_means(t, x, mu, 1.7)
        np.testing.assert_allclose(t * e1 + (1 - t) * e0, x, atol=1e-12)


def test_oracle_zero_at_origin():
    for t in (0.0, 0.3, 0.99):
        np.testing.assert_array_equal(marginal_velocity_gaussian_oracle(t, np.zeros(3), np.zeros(3), 1.0), np.zeros(3))


def test_oracle_t1_limit():
    mu = np.array([2.0, 0.0])
    np.testing.assert_allclose(marginal_velocity_gaussian_oracle(1.0, mu, mu, 1.0), mu, atol=1e-12)


def test_oracle_monte_carlo():
    rng = np.random.default_rng(8)
    mean, se, count = mc_conditional_velocity(0.5, 1.0, 2.0, 1.0, 10**7, rng)
    got = marginal_velocity_gaussian_oracle(0.5, np.array([1.0]), np.array([2.0]), 1.0)[0]
    assert count > 10**4
    assert abs(got - mean) < 3 * se + 1e-3  # window half-width bias is O(1e-4)


def test_kinetic_energy_bound():
    rng = np.random.default_rng(9)
    mu, n = np.array([2.0, 0.0]), 200_000
    t = rng.random(n)
    x0 = rng.standard_normal((n, 2))
    x1 = mu + rng.standard_normal((n, 2))
    xt = sample_path(CondOTScheduler(), t, x0, x1).x_t
    ke = np.sum(marginal_velocity_gaussian_oracle(t, xt, mu, 1.0) ** 2, -1)
    cost = np.sum((x1 - x0) ** 2, -1)
    assert ke.mean() <= cost.mean() + 3 * np.sqrt(ke.var() / n + cost.var() / n)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.05, 0.95),
    st.lists(st.floats(-5, 5), min_size=1, max_size=4),
    st.sampled_from(list(itertools.permutations(NAMES, 2))),
)
def test_property_round_trip(t, xs, pair):
    x = np.array(xs)
    v = np.cos(x) * 2.0
    s = LinearVPScheduler()
    back = convert(pair[1], pair[0], s, t, x, convert(pair[0], pair[1], s, t, x, v))
    assert np.max(np.abs(back - v)) < 1e-9 * max(1.0, math.fabs(1 / (1 - t)))
