"""Oracle suites comparing closed forms against sampling, quadrature and brute force.

Each suite returns a list of :class:`Check` records; the CLI prints them and
the test-suite asserts on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import channel, detection
from .detection import DetectorGeometry
from .psca import rate_lower_bound, xi_upper_bound
from .scenario import Scenario, reference_scenario
from .streams import substream

__all__ = [
    "Check",
    "random_geometries",
    "detection_suite",
    "bounds_suite",
    "outage_suite",
    "SUITES",
    "run_suite",
]


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    limit: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.limit - self.value

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.value:.3g} (limit {self.limit:.3g}, margin {self.margin:.3g})"


def _check(name, value, limit):
    return Check(name, float(value), float(limit), bool(value <= limit))


def random_geometries(n: int, seed: int) -> list[DetectorGeometry]:
    """Detector geometries on realistic scales: received powers 1e-13..1e-9 W."""
    rng = substream(seed, "geometries")
    out = []
    for _ in range(n):
        rho = 10 ** rng.uniform(-13, -9)
        out.append(DetectorGeometry(rho, rho * 10 ** rng.uniform(-1.5, 1.5), 10 ** rng.uniform(-15, -13)))
    return out


def _binomial_se(p, n):
    return np.sqrt(max(p * (1 - p), 1.0 / n) / n)


def detection_suite(seed: int = 2024, n_samples: int = 1_000_000, n_geometries: int = 20, grid_points: int = 10_000):
    """False alarm, miss and total error against sampling; pdf mass; threshold grid search."""
    checks = []
    rng = substream(seed, "detection_thresholds")
    worst_a = worst_b = worst_x = 0.0
    worst_mass = worst_grid = worst_arg = 0.0
    for i, g in enumerate(random_geometries(n_geometries, seed)):
        tau_star, xi_star = detection.optimal_threshold(g)
        for j, tau in enumerate((g.sigma_m_sq + rng.uniform(0.05, 1.5) * g.rho_um, tau_star)):
            a_hat, b_hat = detection.mc_detection(g, tau, n_samples, seed=seed * 1000 + 2 * i + j)
            a = float(detection.false_alarm(g, tau))
            b = float(detection.miss_detection(g, tau))
            se_a, se_b = _binomial_se(a, n_samples), _binomial_se(b, n_samples)
            worst_a = max(worst_a, abs(a_hat - a) / se_a)
            worst_b = max(worst_b, abs(b_hat - b) / se_b)
            worst_x = max(worst_x, abs(a_hat + b_hat - a - b) / np.hypot(se_a, se_b))
        # pdf normalization: split at the kink, truncate the tail at 40 mean signal powers
        f = lambda z: float(detection.sum_pdf(g, z))
        hi = g.rho_um + 40 * g.pk_lambda
        mass = quad(f, 0, g.rho_um, epsabs=1e-10, limit=200)[0]
        mass += quad(f, g.rho_um, hi, epsabs=1e-10, limit=200)[0]
        mass += np.exp(-40.0) * -np.expm1(-g.rho_um / g.pk_lambda) * g.pk_lambda / g.rho_um
        worst_mass = max(worst_mass, abs(mass - 1.0))
        # brute-force threshold sweep
        taus = np.linspace(g.sigma_m_sq, g.sigma_m_sq + 10 * g.rho_um, grid_points)
        xi = detection.false_alarm(g, taus) + detection.miss_detection(g, taus)
        k = int(np.argmin(xi))
        worst_grid = max(worst_grid, abs(xi[k] - xi_star))
        worst_arg = max(worst_arg, abs(taus[k] - tau_star) / (taus[1] - taus[0]))
    checks.append(_check("false alarm vs sampling [std errors]", worst_a, 3.0))
    checks.append(_check("miss detection vs sampling [std errors]", worst_b, 3.0))
    checks.append(_check("total error vs sampling [std errors]", worst_x, 3.0))
    checks.append(_check("sum pdf mass error", worst_mass, 1e-9))
    checks.append(_check("grid minimum vs closed form", worst_grid, 1e-3))
    checks.append(_check("grid argmin offset [grid steps]", worst_arg, 1.0))
    return checks


def _random_points(rng, n, scenario: Scenario, spread=400.0):
    q = rng.uniform(-spread, spread, (n, 2))
    p = scenario.uav.p_max_an_w * 10 ** rng.uniform(-3, 0, n)
    return q, p


def bounds_suite(seed: int = 2024, n_points: int = 1000, scenario: Scenario | None = None):
    """Global bound, tangency and gradient checks of both tangent surrogates."""
    sc = scenario or reference_scenario()
    uav, rc = sc.uav, sc.rc
    rng = substream(seed, "bounds")
    K = sc.n_users
    q_ref, p_ref = _random_points(rng, n_points, sc)
    q, p = _random_points(rng, n_points, sc)
    ks = rng.integers(0, K, n_points)
    ms = (ks + rng.integers(1, K, n_points)) % K

    def rate(qq, pp, k):
        gain = channel.los_gain(qq, sc.positions[k], uav.altitude_m, rc.ref_gain)
        return channel.covert_rate(
            sc.tx_powers[k], gain, uav.self_interference_rho, uav.self_interference_fading, pp, rc.outage_eps, uav.rx_noise_w
        )

    def xib(qq, pp, k, m):
        return detection.xi_bar(qq, sc.positions[m], uav.altitude_m, pp, sc.beta_bar[k, m])

    rate_slack = xi_slack = np.inf
    rate_tan = xi_tan = 0.0
    rate_grad = xi_grad = 0.0
    min_slope = np.inf
    for i in range(n_points):
        k, m = int(ks[i]), int(ms[i])
        r = rate_lower_bound(q[i], p[i], q_ref[i], p_ref[i], k, sc)
        rate_slack = min(rate_slack, float(rate(q[i], p[i], k) - r.value))
        at = rate_lower_bound(q_ref[i], p_ref[i], q_ref[i], p_ref[i], k, sc)
        rate_tan = max(rate_tan, abs(float(at.value - rate(q_ref[i], p_ref[i], k))))
        x = xi_upper_bound(q[i], p[i], q_ref[i], p_ref[i], k, m, sc)
        xi_slack = min(xi_slack, float(x.value - xib(q[i], p[i], k, m)))
        xt = xi_upper_bound(q_ref[i], p_ref[i], q_ref[i], p_ref[i], k, m, sc)
        xi_tan = max(xi_tan, abs(float(xt.value - xib(q_ref[i], p_ref[i], k, m))))
        min_slope = min(min_slope, float(x.slope))

        # gradients in (qx, qy, P) against central differences of the exact functions
        hq, hp = 1e-4 * 100.0, 1e-4 * p_ref[i]
        steps = [(np.array([hq, 0.0]), 0.0), (np.array([0.0, hq]), 0.0), (np.zeros(2), hp)]
        fd_r, fd_x = [], []
        for dq, dp in steps:
            h = hq if dp == 0 else hp
            fd_r.append((rate(q_ref[i] + dq, p_ref[i] + dp, k) - rate(q_ref[i] - dq, p_ref[i] - dp, k)) / (2 * h))
            fd_x.append((xib(q_ref[i] + dq, p_ref[i] + dp, k, m) - xib(q_ref[i] - dq, p_ref[i] - dp, k, m)) / (2 * h))
        an_r = _surrogate_gradient_rate(q_ref[i], p_ref[i], k, sc)
        an_x = _surrogate_gradient_xi(q_ref[i], p_ref[i], k, m, sc)
        rate_grad = max(rate_grad, _rel(an_r, fd_r))
        xi_grad = max(xi_grad, _rel(an_x, fd_x))

    return [
        _check("rate bound slack (negated)", -rate_slack, 1e-9),
        _check("rate tangency", rate_tan, 1e-12),
        _check("rate gradient vs finite differences [rel]", rate_grad, 1e-4),
        _check("covertness bound slack (negated)", -xi_slack, 1e-9),
        _check("covertness tangency", xi_tan, 1e-12),
        _check("covertness gradient vs finite differences [rel]", xi_grad, 1e-4),
        _check("covertness slope (negated)", -min_slope, 0.0),
    ]


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _surrogate_gradient_rate(q_ref, p_ref, k, sc):
    s = rate_lower_bound(q_ref, p_ref, q_ref, p_ref, k, sc)
    gq = -2.0 * s.coef_dist * (np.asarray(q_ref) - sc.positions[k])
    return np.array([gq[0], gq[1], -s.coef_power])


def _surrogate_gradient_xi(q_ref, p_ref, k, m, sc):
    s = xi_upper_bound(q_ref, p_ref, q_ref, p_ref, k, m, sc)
    bb = sc.beta_bar[k, m]
    d = np.asarray(q_ref) - sc.positions[m]
    u = float(d @ d) + sc.uav.altitude_m**2
    gq = s.slope * 2.0 * d / (bb * p_ref)
    return np.array([gq[0], gq[1], -s.slope * u / (bb * p_ref**2)])


def outage_suite(seed: int = 2024, n_samples: int = 1_000_000, n_configs: int = 5, scenario: Scenario | None = None):
    """Sampled outage at the calibrated rate against the target ``eps``."""
    sc = scenario or reference_scenario()
    uav, rc = sc.uav, sc.rc
    rng = substream(seed, "outage_configs")
    checks = []
    for i in range(n_configs):
        k = int(rng.integers(sc.n_users))
        q = rng.uniform(-300, 300, 2) if i else sc.positions[k]
        p = uav.p_max_an_w if i == 0 else uav.p_max_an_w * 10 ** rng.uniform(-2, 0)
        gain = channel.los_gain(q, sc.positions[k], uav.altitude_m, rc.ref_gain)
        args = (sc.tx_powers[k], gain, uav.self_interference_rho, uav.self_interference_fading, p)
        rate = channel.covert_rate(*args, rc.outage_eps, uav.rx_noise_w)
        est = channel.mc_outage(*args, rate, uav.rx_noise_w, n_samples, seed=seed * 100 + i)
        z = abs(est - rc.outage_eps) / _binomial_se(rc.outage_eps, n_samples)
        checks.append(_check(f"outage config {i} [std errors]", z, 3.0))
    return checks


SUITES = {"detection": detection_suite, "bounds": bounds_suite, "outage": outage_suite}


def run_suite(name: str, seed: int = 2024, samples: int | None = None):
    """Run one suite; ``samples`` is the Monte Carlo size (point count for ``bounds``)."""
    fn = SUITES[name]
    if samples is None:
        return fn(seed=seed)
    return fn(seed=seed, n_points=samples) if name == "bounds" else fn(seed=seed, n_samples=samples)
