import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmkit.errors import ConfigurationError, DomainError
from fmkit.scheduler import (
    ClampedScheduler,
    CondOTScheduler,
    CosineScheduler,
    LinearVPScheduler,
    MixtureScheduler,
    PolynomialScheduler,
    VEScheduler,
    VPScheduler,
    evaluate,
    make_scheduler,
    scale_time,
)

FM_SCHEDULERS = [CondOTScheduler(), PolynomialScheduler(2.0), PolynomialScheduler(0.7), LinearVPScheduler(), CosineScheduler()]
ALL_SCHEDULERS = FM_SCHEDULERS + [VPScheduler(), VEScheduler()]


def test_condot_midpoint():
    assert evaluate(CondOTScheduler(), 0.5) == (0.5, 0.5, 1.0, -1.0)


def test_polynomial_one_matches_condot():
    assert evaluate(PolynomialScheduler(1.0), 0.3) == evaluate(CondOTScheduler(), 0.3)


def test_cosine_midpoint_by_hand():
    c = math.cos(math.pi / 4)
    expected = (math.sin(math.pi / 4), c, (math.pi / 2) * c, -(math.pi / 2) * math.sin(math.pi / 4))
    got = evaluate(CosineScheduler(), 0.5)
    np.testing.assert_allclose(got, expected, rtol=1e-14)
    h = 1e-5
    a = lambda t: math.sin(math.pi * t / 2)
    assert abs((a(0.5 + h) - a(0.5 - h)) / (2 * h) - got[2]) < 1e-9


@pytest.mark.parametrize("s", FM_SCHEDULERS, ids=lambda s: s.kind + str(s.params()))
def test_fm_boundary_conditions(s):
    a0, s0, _, _ = s(0.0)
    a1, s1, _, _ = s(1.0)
    assert (a0, s0, a1, s1) == (0.0, 1.0, 1.0, 0.0)
    assert not s.approximate_boundary


@pytest.mark.parametrize("s", [VPScheduler(), VEScheduler()], ids=["vp", "ve"])
def test_relaxed_boundary_is_flagged(s):
    assert s.approximate_boundary
    a0, s0, a1, s1 = s(0.0).alpha, s(0.0).sigma, s(1.0).alpha, s(1.0).sigma
    assert a0 < 1e-2 or s0 > 10  # signal vanishes relative to noise at t=0
    assert abs(a1 - 1) < 1e-12


@pytest.mark.parametrize("s", ALL_SCHEDULERS, ids=lambda s: s.kind + str(s.params()))
def test_derivatives_match_finite_differences(s):
    rng = np.random.default_rng(0)
    t = rng.uniform(0.01, 0.99, 1000)
    h = 1e-5
    up, dn = s(t + h), s(t - h)
    out = s(t)
    fd_alpha = (up.alpha - dn.alpha) / (2 * h)
    fd_sigma = (up.sigma - dn.sigma) / (2 * h)
    scale_a = np.maximum(1.0, np.abs(out.d_alpha))
    scale_s = np.maximum(1.0, np.abs(out.d_sigma))
    # absolute 1e-5, relative for the steep VE sigma
    assert np.max(np.abs(fd_alpha - out.d_alpha) / scale_a) < 1e-5
    assert np.max(np.abs(fd_sigma - out.d_sigma) / scale_s) < 1e-5


@pytest.mark.parametrize("s", FM_SCHEDULERS, ids=lambda s: s.kind + str(s.params()))
def test_monotone(s):
    t = np.linspace(0.001, 0.999, 999)
    out = s(t)
    assert np.all(out.d_alpha > 0) and np.all(out.d_sigma < 0)
    assert np.all(np.diff(s.snr(t)) > 0)


@pytest.mark.parametrize("s", FM_SCHEDULERS + [VPScheduler()], ids=lambda s: s.kind + str(s.params()))
def test_snr_inverse_roundtrip(s):
    t = np.random.default_rng(1).uniform(0.02, 0.98, 200)
    assert np.max(np.abs(s.snr_inverse(s.snr(t)) - t)) < 1e-10


def test_snr_trivia():
    assert CondOTScheduler().snr(0.5) == 1.0
    assert abs(CondOTScheduler().snr_inverse(1.0) - 0.5) < 1e-12


def test_cosine_snr_is_tangent():
    t = np.linspace(0.05, 0.95, 19)
    np.testing.assert_allclose(CosineScheduler().snr(t), np.tan(np.pi * t / 2), rtol=1e-12)
    assert abs(CosineScheduler().snr_inverse(math.tan(0.3 * math.pi / 2)) - 0.3) < 1e-9


def test_snr_inverse_outside_range():
    with pytest.raises(DomainError):
        CondOTScheduler().snr_inverse(-1.0)
    with pytest.raises(DomainError):
        VEScheduler().snr_inverse(1e6)


def test_eps_clipping():
    out = CondOTScheduler()(0.0, eps=1e-3)
    assert out.alpha == 1e-3
    assert CondOTScheduler()(1.0, eps=1e-3).sigma == pytest.approx(1e-3)


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        make_scheduler({"kind": "nope"})
    with pytest.raises(ConfigurationError):
        make_scheduler({"kind": "polynomial", "params": {"bogus": 1}})


@pytest.mark.parametrize("s", ALL_SCHEDULERS + [ClampedScheduler(LinearVPScheduler(), 1e-3)], ids=lambda s: s.kind)
def test_serialization_roundtrip(s):
    assert make_scheduler(s.to_dict()) == s


def test_scale_time_identity_example():
    st_ = scale_time(CondOTScheduler(), CondOTScheduler(), 0.7)
    assert tuple(st_) == (0.7, 1.0, 1.0, 0.0)


def test_scale_time_identity_random():
    r = np.random.default_rng(2).random(100)
    for s in ALL_SCHEDULERS:
        out = scale_time(s, s, r)
        assert np.max(np.abs(out.t - r)) <= 1e-12 and np.max(np.abs(out.s - 1)) <= 1e-12


def test_scale_time_linear_vp_to_condot():
    # t / sqrt(1 - t^2) = 1  =>  t = 1/sqrt(2); s = 0.5 / sqrt(1 - 1/2)
    out = scale_time(LinearVPScheduler(), CondOTScheduler(), 0.5)
    assert abs(out.t - 1 / math.sqrt(2)) < 1e-10
    assert abs(out.s - 1 / math.sqrt(2)) < 1e-10


def test_scale_time_reproduces_destination_flow():
    """s_r * (alpha_{t_r}, sigma_{t_r}) equals the destination pair at r."""
    src, dst = CondOTScheduler(), CosineScheduler()
    r = np.linspace(0.05, 0.95, 19)
    out = scale_time(src, dst, r)
    a, s, _, _ = src(out.t)
    ab, sb, _, _ = dst(r)
    np.testing.assert_allclose(out.s * a, ab, atol=1e-10)
    np.testing.assert_allclose(out.s * s, sb, atol=1e-10)


def test_scale_time_derivatives_by_finite_difference():
    src, dst = LinearVPScheduler(), CosineScheduler()
    r = np.linspace(0.1, 0.9, 9)
    out = scale_time(src, dst, r)
    h = 1e-5
    fd_t = (scale_time(src, dst, r + h).t - scale_time(src, dst, r - h).t) / (2 * h)
    fd_s = (scale_time(src, dst, r + h).s - scale_time(src, dst, r - h).s) / (2 * h)
    np.testing.assert_allclose(out.dt, fd_t, atol=1e-5)
    np.testing.assert_allclose(out.ds, fd_s, atol=1e-5)


def test_scale_time_clamped_endpoint():
    eps = 1e-3
    src = ClampedScheduler(LinearVPScheduler(), eps)
    dst = ClampedScheduler(CondOTScheduler(), eps)
    out = scale_time(src, dst, 1.0)
    assert abs(out.t - 1.0) < 1e-9 and abs(out.s - 1.0) < 1e-9


def test_scale_time_uncovered_range():
    with pytest.raises(DomainError):
        scale_time(VEScheduler(), CondOTScheduler(), 0.5)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.3, 4.0))
def test_scale_time_positive_scale(r, n):
    out = scale_time(PolynomialScheduler(n), CosineScheduler(), r)
    assert out.s > 0 and 0 <= out.t <= 1


def test_mixture_scheduler():
    k = MixtureScheduler.polynomial(2.0)
    assert k.kappa(0.0) == 0.0 and k.kappa(1.0) == 1.0
    t = np.linspace(0, 1, 101)
    assert np.all(np.diff(k.kappa(t)) >= 0)
    h = 1e-5
    tt = np.linspace(0.1, 0.9, 9)
    np.testing.assert_allclose(k.d_kappa(tt), (k.kappa(tt + h) - k.kappa(tt - h)) / (2 * h), atol=1e-8)
    assert MixtureScheduler.from_dict(k.to_dict()) == k
    with pytest.raises(ConfigurationError):
        MixtureScheduler(0.0)
