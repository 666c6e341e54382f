import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from covert_uav.channel import covert_rate, interference_floor, los_gain, mc_outage, outage_bound

RHO, LUU, NOISE, EPS = 1e-6, 1e-6, 1e-14, 0.05
PMAX = 10 ** 0.6  # 36 dBm


def test_gain_overhead():
    assert los_gain([3.0, 4.0], [3.0, 4.0], 100.0, 1e-6) == pytest.approx(1e-10, rel=1e-14)


def test_gain_reciprocity_and_decay():
    q, w = np.array([10.0, -30.0]), np.array([200.0, 0.0])
    assert los_gain(q, w, 100, 1e-6) == los_gain(w, q, 100, 1e-6)
    d = np.linspace(0, 5000, 200)
    g = los_gain(np.stack([d, 0 * d], 1), [0.0, 0.0], 100, 1e-6)
    assert np.all(np.diff(g) < 0)
    assert np.all(g <= 1e-6 / 100**2)


def test_rate_overhead_value():
    den = -RHO * PMAX * LUU * math.log(EPS) + NOISE
    assert interference_floor(RHO, LUU, PMAX, EPS, NOISE) == pytest.approx(den, rel=1e-14)
    assert den == pytest.approx(1.1936e-11, rel=1e-4)
    r = covert_rate(1.0, 1e-10, RHO, LUU, PMAX, EPS, NOISE)
    assert r == pytest.approx(math.log2(1 + 1e-10 / den), rel=1e-14)
    assert r == pytest.approx(3.23, abs=5e-3)


def test_rate_degenerate_cases():
    assert covert_rate(1.0, 1e-10, RHO, LUU, 0.0, EPS, NOISE) == pytest.approx(math.log2(1 + 1e-10 / NOISE))
    assert covert_rate(0.0, 1e-10, RHO, LUU, PMAX, EPS, NOISE) == 0.0


@given(st.floats(1e-12, 1e-8), st.floats(1e-3, 4.0), st.floats(0.001, 0.9))
def test_outage_bound_inverts_rate(gain, p, eps):
    r = covert_rate(1.0, gain, RHO, LUU, p, eps, NOISE)
    assert outage_bound(1.0, gain, RHO, LUU, p, r, NOISE) == pytest.approx(eps, rel=1e-9)


def test_outage_bound_limits_and_monotone():
    assert outage_bound(1.0, 1e-10, RHO, LUU, PMAX, 1e-12, NOISE) == 0.0
    rng = np.random.default_rng(3)
    for _ in range(10):
        gain, p, r = 10 ** rng.uniform(-12, -9), 10 ** rng.uniform(-2, 0.6), rng.uniform(0.1, 5)
        lo = outage_bound(1.0, gain, RHO, LUU, p, r, NOISE)
        hi = outage_bound(1.0, gain, RHO, LUU, p, r + 0.05, NOISE)
        assert hi >= lo
    # signal too weak for the rate even without self-interference: clamped to 1
    assert outage_bound(1.0, 1e-16, RHO, LUU, PMAX, 5.0, NOISE) == 1.0


@given(st.floats(1e-12, 1e-8), st.floats(1e-3, 3.0), st.floats(0.01, 0.5))
def test_rate_monotone_in_power_and_eps(gain, p, eps):
    r = covert_rate(1.0, gain, RHO, LUU, p, eps, NOISE)
    assert covert_rate(1.0, gain, RHO, LUU, p * 1.1, eps, NOISE) < r
    assert covert_rate(1.0, gain, RHO, LUU, p, eps * 1.1, NOISE) > r


def test_mc_outage_matches_bound():
    n = 1_000_000
    se = math.sqrt(EPS * (1 - EPS) / n)
    rng = np.random.default_rng(11)
    for i in range(5):
        gain, p = 10 ** rng.uniform(-11, -9.5), 10 ** rng.uniform(-1.5, 0.6)
        r = covert_rate(1.0, gain, RHO, LUU, p, EPS, NOISE)
        est = mc_outage(1.0, gain, RHO, LUU, p, r, NOISE, n, seed=100 + i)
        assert abs(est - EPS) <= 3 * se


def test_mc_outage_zero_rate_and_determinism():
    assert mc_outage(1.0, 1e-10, RHO, LUU, PMAX, 0.0, NOISE, 10_000, seed=1) == 0.0
    a = mc_outage(1.0, 1e-10, RHO, LUU, PMAX, 3.0, NOISE, 300_000, seed=5)
    b = mc_outage(1.0, 1e-10, RHO, LUU, PMAX, 3.0, NOISE, 300_000, seed=5)
    c = mc_outage(1.0, 1e-10, RHO, LUU, PMAX, 3.0, NOISE, 300_000, seed=5, workers=3)
    assert a == b == c
