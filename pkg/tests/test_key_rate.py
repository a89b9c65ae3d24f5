import numpy as np
import pytest
from hypothesis import given, strategies as st

from amdiqkd import (NINE, PRIOR_ART, SEVEN, SIX, Analysis, ChannelPair, DeviceParams,
                     ProtocolParams, binary_entropy, key_rate, optimize)

DEV = DeviceParams()
FINITE = Analysis.finite(1e11)
OPT_60_10 = [0.649, 0.512, 0.106, 0.571, 0.035, 0.258, 0.192, 0.057, 0.012, 0.570, 0.033, 0.259]


@pytest.mark.parametrize("p,h", [(0.0, 0.0), (1.0, 0.0), (0.5, 1.0), (0.25, 0.811278)])
def test_binary_entropy_values(p, h):
    assert binary_entropy(p) == pytest.approx(h, abs=1e-6)


def test_binary_entropy_domain():
    with pytest.raises(ValueError):
        binary_entropy(1.2)


@given(st.floats(0, 1))
def test_binary_entropy_symmetric(p):
    assert binary_entropy(p) == pytest.approx(binary_entropy(1 - p), abs=1e-12)


def test_terms_assemble_the_rate():
    r = key_rate(ProtocolParams.from_vector(SEVEN, OPT_60_10), ChannelPair(60, 10), DEV, FINITE)
    assert r.rate == pytest.approx(max(r.pa_term - r.ec_term, 0.0))
    assert r.rate > 0 and r.bounds.method == "analytic"
    assert r.analysis is FINITE


def test_default_estimators():
    six = ProtocolParams.from_vector(SIX, [0.5, 0.3, 0.1, 0.5, 0.2, 0.3] * 2)
    assert key_rate(six, ChannelPair(10, 10), DEV).bounds.method == "lp"
    with pytest.raises(ValueError):
        key_rate(six, ChannelPair(10, 10), DEV, method="magic")


def test_no_yield_means_no_key():
    r = key_rate(ProtocolParams.from_vector(SEVEN, OPT_60_10), ChannelPair(300, 300), DEV, FINITE)
    assert r.rate == 0.0
    assert r.bounds.Y11_lower == 0.0 and r.bounds.e11_upper == 0.5


def _random_params(rng, variant):
    def side():
        k = {SIX: 2, SEVEN: 2, NINE: 3, PRIOR_ART: 2}[variant]
        dec = np.sort(rng.uniform(0.01, 0.9, k))[::-1]
        if variant == PRIOR_ART:
            s = dec[0]
        else:
            s = rng.uniform(0.05, 0.9)
        p = rng.dirichlet(np.ones(k + 2)) * 0.98 + 0.005
        if variant == SIX:
            p = rng.dirichlet(np.ones(k + 1)) * 0.97 + 0.01
        return [s, *dec, *p[:k + 1]]
    return ProtocolParams.from_vector(variant, side() + side())


@pytest.mark.parametrize("variant", [SEVEN, SIX, PRIOR_ART])
def test_exchange_symmetry(variant):
    rng = np.random.default_rng(17)
    for _ in range(15):
        p = _random_params(rng, variant)
        LA, LB = rng.uniform(0, 70, 2)
        for an in (Analysis.asymptotic(), FINITE):
            r1 = key_rate(p, ChannelPair(LA, LB), DEV, an).rate
            r2 = key_rate(p.swapped(), ChannelPair(LB, LA), DEV, an).rate
            assert r1 == pytest.approx(r2, rel=1e-9, abs=1e-300)


def test_rate_never_negative_and_needs_yield():
    rng = np.random.default_rng(19)
    for _ in range(60):
        p = _random_params(rng, SEVEN)
        r = key_rate(p, ChannelPair(*rng.uniform(0, 150, 2)), DEV, FINITE)
        assert r.rate >= 0
        if r.rate > 0:
            assert r.bounds.Y11_lower > 0 and r.bounds.e11_upper < 0.5


def test_rounding_keeps_most_of_the_lp_optimum():
    ch = ChannelPair(60, 10)
    best = optimize(ch, DEV, FINITE, method="lp")
    r3 = key_rate(best.params.rounded(3), ch, DEV, FINITE, method="lp").rate / best.rate
    r2 = key_rate(best.params.rounded(2), ch, DEV, FINITE, method="lp").rate / best.rate
    assert r3 >= 0.99
    assert r2 >= 0.90
