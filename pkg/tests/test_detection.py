import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from covert_uav.detection import (
    CovertInfeasible,
    DetectorGeometry,
    detection_error,
    false_alarm,
    mc_detection,
    miss_detection,
    min_covert_power,
    min_detection_error,
    optimal_threshold,
    sum_pdf,
    xi_bar,
    xi_bar_of_ratio,
    xi_bar_slope,
)
from covert_uav.scenario import reference_document, scenario_from_dict

G = DetectorGeometry(rho_um=2e-11, pk_lambda=5e-12, sigma_m_sq=1e-14)

geometries = st.builds(
    DetectorGeometry,
    rho_um=st.floats(1e-13, 1e-9),
    pk_lambda=st.floats(1e-13, 1e-9),
    sigma_m_sq=st.floats(1e-15, 1e-13),
)


def test_false_alarm_branches():
    s, r = G.sigma_m_sq, G.rho_um
    assert false_alarm(G, s) == 1.0
    assert false_alarm(G, s + r / 2) == pytest.approx(0.5, rel=1e-12)
    assert false_alarm(G, s + 2 * r) == 0.0
    assert false_alarm(G, s - 1e-15) == 1.0


def test_false_alarm_without_an():
    g = DetectorGeometry(0.0, 1e-12, 1e-14)
    assert false_alarm(g, g.sigma_m_sq) == 1.0
    assert false_alarm(g, 2 * g.sigma_m_sq) == 0.0
    assert optimal_threshold(g) == (g.sigma_m_sq, 0.0)


def test_sum_pdf_support_and_continuity():
    assert sum_pdf(G, 0.0) == 0.0 and sum_pdf(G, -1e-12) == 0.0
    left = sum_pdf(G, G.rho_um * (1 - 1e-15))
    right = sum_pdf(G, G.rho_um * (1 + 1e-15))
    exact = -math.expm1(-G.rho_um / G.pk_lambda) / G.rho_um
    assert left == pytest.approx(exact, rel=1e-12)
    assert right == pytest.approx(exact, rel=1e-12)


def test_sum_pdf_normalized():
    f = lambda z: float(sum_pdf(G, z))
    hi = G.rho_um + 40 * G.pk_lambda
    mass = quad(f, 0, G.rho_um, epsabs=1e-10)[0] + quad(f, G.rho_um, hi, epsabs=1e-10)[0]
    assert mass == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(geometries, st.floats(0.0, 3.0))
def test_pdf_integrates_to_miss_probability(g, frac):
    t = frac * (g.rho_um + 3 * g.pk_lambda)
    f = lambda z: float(sum_pdf(g, z))
    pts = [g.rho_um] if t > g.rho_um else None
    cdf = quad(f, 0, t, points=pts, epsabs=1e-12, epsrel=1e-10, limit=200)[0] if t > 0 else 0.0
    assert miss_detection(g, g.sigma_m_sq + t) == pytest.approx(cdf, abs=1e-8)


def test_miss_detection_limits():
    assert miss_detection(G, G.sigma_m_sq) == 0.0
    assert miss_detection(G, 1.0) == pytest.approx(1.0)


@given(geometries)
def test_error_curves_monotone(g):
    taus = g.sigma_m_sq + np.linspace(-0.5, 4, 2001) * (g.rho_um + g.pk_lambda)
    assert np.all(np.diff(false_alarm(g, taus)) <= 1e-15)
    assert np.all(np.diff(miss_detection(g, taus)) >= -1e-15)


@given(geometries)
def test_threshold_optimal_on_grid(g):
    tau, xi = optimal_threshold(g)
    assert tau == g.rho_um + g.sigma_m_sq
    assert 0 < xi < 1
    taus = g.sigma_m_sq + np.linspace(0, 10, 4001) * g.rho_um
    total = false_alarm(g, taus) + miss_detection(g, taus)
    assert np.all(total >= xi - 1e-12)
    assert detection_error(g, tau).total == pytest.approx(xi, abs=1e-12)


def test_unit_ratio_case():
    g = DetectorGeometry(3e-12, 3e-12, 1e-14)
    assert optimal_threshold(g)[1] == pytest.approx(math.exp(-1), rel=1e-12)


def test_mc_detection_examples():
    n = 1_000_000
    a, b = mc_detection(G, G.sigma_m_sq + G.rho_um / 2, n, seed=4)
    assert abs(a - 0.5) <= 3 * math.sqrt(0.25 / n)
    _, b0 = mc_detection(G, G.sigma_m_sq, 200_000, seed=4)
    assert b0 == 0.0
    assert mc_detection(G, 2e-11, 200_000, seed=9) == mc_detection(G, 2e-11, 200_000, seed=9, workers=2)


def test_mc_miss_matches_closed_form():
    n = 1_000_000
    rng = np.random.default_rng(8)
    for i in range(5):
        r = 10 ** rng.uniform(-12, -10)
        g = DetectorGeometry(r, r * 10 ** rng.uniform(-1, 1), 1e-14)
        tau = g.sigma_m_sq + rng.uniform(0.2, 2.5) * g.rho_um
        _, b_hat = mc_detection(g, tau, n, seed=20 + i)
        b = float(miss_detection(g, tau))
        assert abs(b_hat - b) <= 3 * math.sqrt(b * (1 - b) / n)


def test_xi_bar_identity():
    rng = np.random.default_rng(0)
    H, bb = 100.0, 3.7e3
    for _ in range(100):
        q, w = rng.uniform(-300, 300, 2), rng.uniform(-300, 300, 2)
        p = 10 ** rng.uniform(-3, 0.6)
        u = np.sum((q - w) ** 2) + H**2
        # with beta_bar = beta0 / (Pk lambda): rho_um / pk_lambda = beta_bar P / u
        g = DetectorGeometry(rho_um=bb * p / u * 1e-12, pk_lambda=1e-12, sigma_m_sq=1e-14)
        assert 1 - xi_bar(q, w, H, p, bb) == pytest.approx(optimal_threshold(g)[1], abs=1e-12)


def test_xi_bar_limits():
    assert xi_bar([0, 0], [100, 0], 100, 1e12, 1.0) == pytest.approx(0.0, abs=1e-6)
    assert xi_bar([0, 0], [100, 0], 100, 1e-12, 1.0) == pytest.approx(1.0, abs=1e-6)
    assert xi_bar_of_ratio(np.inf) == 1.0 and xi_bar_of_ratio(0.0) == 0.0


@given(st.floats(1e-3, 1e6))
def test_slope_matches_derivative(s):
    h = 1e-5 * s
    fd = (xi_bar_of_ratio(s + h) - xi_bar_of_ratio(s - h)) / (2 * h)
    assert xi_bar_slope(s) >= 0
    assert xi_bar_slope(s) == pytest.approx(fd, rel=1e-5, abs=1e-12)


@given(geometries, st.floats(1.01, 10))
def test_error_increases_with_an_and_decreases_with_signal(g, f):
    xi = optimal_threshold(g)[1]
    more_an = DetectorGeometry(g.rho_um * f, g.pk_lambda, g.sigma_m_sq)
    more_sig = DetectorGeometry(g.rho_um, g.pk_lambda * f, g.sigma_m_sq)
    assert optimal_threshold(more_an)[1] >= xi
    assert optimal_threshold(more_sig)[1] <= xi


def test_min_covert_power_tight(reference):
    rng = np.random.default_rng(2)
    eps = reference.rc.covert_eps
    for _ in range(20):
        q = rng.uniform(-150, 150, 2)
        k = int(rng.integers(4))
        p = min_covert_power(reference, q, k)
        xi, _ = min_detection_error(reference, q, p, k)
        assert 1 - eps <= xi[0] <= 1 - eps + 1e-8


def test_min_covert_power_vacuous(reference):
    assert min_covert_power(reference, [0, 0], 0, covert_eps=1 - 1e-12) < 1e-8


def test_min_covert_power_infeasible(reference):
    with pytest.raises(CovertInfeasible) as info:
        min_covert_power(reference, [0.0, 0.0], 0, p_cap=1e-4)
    assert info.value.user_index == 0
    q = np.array([[0.0, 0.0], [200.0, 0.0]])
    out = min_covert_power(reference, q, 0, p_cap=1e-4, raise_on_infeasible=False)
    assert np.isnan(out).all()


def _scaled_layout(factor):
    doc = reference_document()
    for u in doc["users"]:
        u["xy_m"] = [c * factor for c in u["xy_m"]]
        u["fading_db"] = {str(v["id"]): -90.0 for v in doc["users"] if v["id"] != u["id"]}
    doc["uav"]["altitude_m"] *= factor
    return scenario_from_dict(doc)


def test_power_scales_with_squared_distance():
    a, b = _scaled_layout(1.0), _scaled_layout(math.sqrt(2))
    rng = np.random.default_rng(5)
    for _ in range(10):
        q = rng.uniform(-200, 200, 2)
        k = int(rng.integers(4))
        pa = min_covert_power(a, q, k, p_cap=1e9)
        pb = min_covert_power(b, q * math.sqrt(2), k, p_cap=1e9)
        assert pb == pytest.approx(2 * pa, rel=1e-10)
