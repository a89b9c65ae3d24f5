import numpy as np
import pytest
from hypothesis import given, strategies as st

from amdiqkd import (SEVEN, Analysis, ChannelPair, DeviceParams, ProtocolParams, apply_bounds,
                     gamma_from_epsilon, key_rate, optimize, simulate_statistics)
from amdiqkd.finite_size import bound_pair

PARAMS = ProtocolParams.from_vector(
    SEVEN, [0.649, 0.512, 0.106, 0.571, 0.035, 0.258, 0.192, 0.057, 0.012, 0.570, 0.033, 0.259])
CH = ChannelPair(60, 10)
DEV = DeviceParams()


def test_gamma_for_default_failure_probability():
    assert gamma_from_epsilon(1e-7) == pytest.approx(5.3, abs=0.05)


def test_gamma_one_sigma():
    assert gamma_from_epsilon(0.3173) == pytest.approx(1.0, abs=1e-3)


def test_gamma_vanishes_as_eps_goes_to_one():
    assert gamma_from_epsilon(1 - 1e-12) < 1e-11


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 2.0])
def test_gamma_domain(eps):
    with pytest.raises(ValueError):
        gamma_from_epsilon(eps)


@given(st.floats(1e-15, 0.999), st.floats(1e-15, 0.999))
def test_gamma_strictly_decreasing(e1, e2):
    if e1 < e2 * (1 - 1e-9):
        assert gamma_from_epsilon(e1) > gamma_from_epsilon(e2)


def test_bounds_bracket_the_value():
    b = apply_bounds(simulate_statistics(PARAMS, CH, DEV, N=1e11), gamma=5.3)
    for lo, mid, hi in ((b.x_gain_lower, b.x_gain, b.x_gain_upper),
                        (b.x_error_gain_lower, b.x_error_gain, b.x_error_gain_upper)):
        assert np.all(lo <= mid) and np.all(mid <= hi) and np.all(lo >= 0)


def test_entry_bounds_accessor():
    b = apply_bounds(simulate_statistics(PARAMS, CH, DEV, N=1e11))
    Ql, Q, Qu, Tl, T, Tu = b.entry_bounds("nu", "omega")
    assert Ql <= Q <= Qu and Tl <= T <= Tu


def test_width_shrinks_by_root_two():
    stats = simulate_statistics(PARAMS, CH, DEV)
    w1 = np.subtract(*apply_bounds(stats, 1e13).gain_bounds()[::-1])
    w2 = np.subtract(*apply_bounds(stats, 2e13).gain_bounds()[::-1])
    gaussian = 1e13 * stats.pair_probabilities * stats.x_gain >= 1
    assert gaussian.sum() >= 8
    np.testing.assert_allclose((w1 / w2)[gaussian], np.sqrt(2), rtol=1e-9)


def test_zero_gamma_collapses_to_asymptotic():
    stats = simulate_statistics(PARAMS, CH, DEV, N=1e11)
    b = apply_bounds(stats, gamma=0.0)
    np.testing.assert_array_equal(b.x_gain_lower, stats.x_gain)
    np.testing.assert_array_equal(b.x_gain_upper, stats.x_gain)
    r0 = key_rate(PARAMS, CH, DEV, Analysis.finite(1e11, gamma=0.0)).rate
    assert r0 == pytest.approx(key_rate(PARAMS, CH, DEV, Analysis.asymptotic()).rate, rel=1e-12)


def test_sparse_entries_use_the_floor():
    lo, hi = bound_pair(np.array([1e-12, 1e-3]), np.array([1e6, 1e6]), 5.0)
    assert lo[0] == 0.0 and hi[0] == pytest.approx(26.0 / 1e6)
    assert hi[1] == pytest.approx(1e-3 + 5 * np.sqrt(1e-9))


def test_apply_bounds_requires_data_size():
    stats = simulate_statistics(PARAMS, CH, DEV)
    with pytest.raises(ValueError):
        apply_bounds(stats)
    with pytest.raises(ValueError):
        apply_bounds(stats, 1e10, gamma=-1.0)


def test_finite_never_beats_asymptotic():
    rng = np.random.default_rng(5)
    for _ in range(40):
        ch = ChannelPair(*rng.uniform(0, 80, 2))
        for N in (1e10, 1e12, 1e14):
            f = key_rate(PARAMS, ch, DEV, Analysis.finite(N)).rate
            a = key_rate(PARAMS, ch, DEV, Analysis.asymptotic()).rate
            assert f <= a


def test_more_data_never_hurts_optimised_rate():
    rates = [optimize(CH, DEV, Analysis.finite(N)).rate for N in (1e10, 1e11, 1e12, 1e13)]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] > 0
