"""Radiometer detection at the unscheduled users (wardens).

With infinitely many samples per slot the warden's statistic is the received
power ``X + sigma^2`` (no transmission) or ``X + Y + sigma^2`` (transmission),
where ``X ~ U(0, rho_um)`` is the AN power it receives and ``Y`` is the
exponential power of the scheduled user's signal with mean ``pk_lambda``.

The covertness function used by the optimizer works on the ratio
``s = (||q - w_m||^2 + H^2) / (beta_bar * P)`` which equals
``pk_lambda / rho_um``; in terms of ``s`` the minimum detection error is
``1 - g(s)`` with ``g(s) = s (1 - exp(-1/s))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .streams import blocked_count

__all__ = [
    "DetectorGeometry",
    "DetectionOutcome",
    "CovertInfeasible",
    "false_alarm",
    "sum_pdf",
    "miss_detection",
    "detection_error",
    "optimal_threshold",
    "covert_ratio",
    "xi_bar_of_ratio",
    "xi_bar_slope",
    "xi_bar",
    "min_detection_error",
    "min_covert_power",
    "mc_detection",
]


@dataclass(frozen=True)
class DetectorGeometry:
    """Distribution parameters seen by one warden in one slot (watts)."""

    rho_um: float
    pk_lambda: float
    sigma_m_sq: float

    def __post_init__(self):
        if self.rho_um < 0 or self.pk_lambda <= 0 or self.sigma_m_sq <= 0:
            raise ValueError("need rho_um >= 0, pk_lambda > 0, sigma_m_sq > 0")


@dataclass(frozen=True)
class DetectionOutcome:
    false_alarm: float
    miss: float

    @property
    def total(self) -> float:
        return self.false_alarm + self.miss


class CovertInfeasible(Exception):
    """No AN power up to the cap makes the scheduled user covert."""

    def __init__(self, user_index, power_needed, cap, slot=None):
        self.user_index = user_index
        self.power_needed = power_needed
        self.cap = cap
        self.slot = slot
        where = "" if slot is None else f" in slot {slot}"
        super().__init__(f"user index {user_index}{where} needs {power_needed:.4g} W of AN > cap {cap:.4g} W")


def false_alarm(g: DetectorGeometry, tau):
    tau = np.asarray(tau, float)
    if g.rho_um == 0:
        return np.where(tau <= g.sigma_m_sq, 1.0, 0.0)
    lin = 1.0 - (tau - g.sigma_m_sq) / g.rho_um
    return np.clip(np.where(tau <= g.sigma_m_sq, 1.0, lin), 0.0, 1.0)


def sum_pdf(g: DetectorGeometry, z):
    """Density of ``X + Y`` (uniform AN power plus exponential signal power)."""
    z = np.asarray(z, float)
    r, m = g.rho_um, g.pk_lambda
    zp = np.maximum(z, 0.0)
    low = -np.expm1(-zp / m) / r
    zh = np.maximum(zp, r)
    high = -np.exp(-(zh - r) / m) * np.expm1(-r / m) / r
    return np.where(z <= 0, 0.0, np.where(z <= r, low, high))


def miss_detection(g: DetectorGeometry, tau):
    """``Pr{X + Y + sigma^2 <= tau}``."""
    tau = np.asarray(tau, float)
    r, m = g.rho_um, g.pk_lambda
    t = np.maximum(tau - g.sigma_m_sq, 0.0)
    if r == 0:
        return -np.expm1(-t / m)
    mid = t / r + (m / r) * np.expm1(-t / m)
    th = np.maximum(t, r)
    tail = 1.0 + (m / r) * np.exp(-(th - r) / m) * np.expm1(-r / m)
    out = np.where(t <= 0, 0.0, np.where(t <= r, mid, tail))
    return np.clip(out, 0.0, 1.0)


def detection_error(g: DetectorGeometry, tau) -> DetectionOutcome:
    return DetectionOutcome(float(false_alarm(g, tau)), float(miss_detection(g, tau)))


def xi_bar_of_ratio(s):
    """``g(s) = s (1 - exp(-1/s))``, increasing from 0 (s=0) to 1 (s=inf)."""
    s = np.asarray(s, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -s * np.expm1(-1.0 / s)
    return np.where(np.isinf(s), 1.0, np.where(s <= 0, 0.0, out))


def xi_bar_slope(s):
    """Derivative ``g'(s) = exp(-1/s) (exp(1/s) - 1 - 1/s) >= 0``."""
    s = np.asarray(s, float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        x = 1.0 / s
        direct = -np.expm1(-x) - x * np.exp(-x)
        # 1 - e^{-x}(1+x) = sum_{j>=2} (-1)^j (j-1) x^j / j!
        series = x**2 * (0.5 - x / 3.0 + x**2 / 8.0 - x**3 / 30.0 + x**4 / 144.0 - x**5 / 840.0 + x**6 / 5760.0)
    out = np.where(x < 1e-2, series, direct)
    return np.where(s <= 0, 1.0, out)


def optimal_threshold(g: DetectorGeometry) -> tuple[float, float]:
    """Optimal radiometer threshold and the resulting minimum error rate."""
    tau = g.rho_um + g.sigma_m_sq
    if g.rho_um == 0:
        return tau, 0.0
    xi = 1.0 - float(xi_bar_of_ratio(g.pk_lambda / g.rho_um))
    return tau, xi


def covert_ratio(q, w_m, altitude, p_umax, beta_bar):
    """``s = (||q - w_m||^2 + H^2) / (beta_bar * P)``; inf when ``P = 0``."""
    d2 = np.sum((np.asarray(q, float) - np.asarray(w_m, float)) ** 2, axis=-1) + altitude**2
    with np.errstate(divide="ignore"):
        return d2 / (np.asarray(beta_bar, float) * np.asarray(p_umax, float))


def xi_bar(q, w_m, altitude, p_umax, beta_bar):
    """One minus the minimum detection error, expressed through the geometry."""
    return xi_bar_of_ratio(covert_ratio(q, w_m, altitude, p_umax, beta_bar))


def min_detection_error(scenario, q, p_umax, k):
    """``min_{m != k} xi*_{k,m}`` when user index ``k`` transmits with the UAV at ``q``.

    ``q`` may be ``(2,)`` or ``(N, 2)`` with ``p_umax`` and ``k`` broadcasting.
    Also returns the index of the strongest warden.
    """
    q = np.atleast_2d(np.asarray(q, float))
    p = np.broadcast_to(np.asarray(p_umax, float), q.shape[:1])
    k = np.broadcast_to(np.asarray(k), q.shape[:1])
    W = scenario.positions
    bb = scenario.beta_bar
    H = scenario.uav.altitude_m
    s = covert_ratio(q[:, None, :], W[None, :, :], H, p[:, None], bb[k, :])
    xb = xi_bar_of_ratio(s)
    xb[np.arange(len(k)), k] = -np.inf
    strongest = np.argmax(xb, axis=1)
    return 1.0 - xb[np.arange(len(k)), strongest], strongest


_RATIO_CACHE: dict[float, float] = {}


def _ratio_at(eps: float) -> float:
    """Largest ``s`` with ``g(s) <= eps``."""
    if eps not in _RATIO_CACHE:
        hi = 1.0
        while xi_bar_of_ratio(hi) < eps:
            hi *= 2.0
        s = brentq(lambda s: float(xi_bar_of_ratio(s)) - eps, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
        while xi_bar_of_ratio(s) > eps:
            s = np.nextafter(s, 0.0)
        _RATIO_CACHE[eps] = float(s)
    return _RATIO_CACHE[eps]


def min_covert_power(scenario, q, k, covert_eps=None, p_cap=None, raise_on_infeasible=True):
    """Smallest AN cap making every warden's minimum error at least ``1 - eps``.

    The error only depends on ``P`` through ``s_m = D_m / (beta_bar_km P)``
    and is decreasing in ``s``, so the answer is ``max_m D_m / (beta_bar_km s_eps)``
    with ``g(s_eps) = eps`` solved once to machine precision. Vectorized over
    rows of ``q`` (slots) with ``k`` broadcasting.

    Returns NaN (or raises :class:`CovertInfeasible`) where the cap is exceeded.
    """
    eps = scenario.rc.covert_eps if covert_eps is None else covert_eps
    cap = scenario.uav.p_max_an_w if p_cap is None else p_cap
    q2 = np.atleast_2d(np.asarray(q, float))
    k = np.broadcast_to(np.asarray(k), q2.shape[:1])
    W = scenario.positions
    d2 = np.sum((q2[:, None, :] - W[None, :, :]) ** 2, axis=-1) + scenario.uav.altitude_m**2
    need = d2 / scenario.beta_bar[k, :]
    need[np.arange(len(k)), k] = -np.inf
    power = np.max(need, axis=1) / _ratio_at(eps)
    # guard the last ulp so re-evaluation lands on the covert side
    power = power * (1.0 + 4e-16 * 8)
    bad = power > cap
    if np.any(bad):
        if raise_on_infeasible:
            n = int(np.flatnonzero(bad)[0])
            raise CovertInfeasible(int(k[n]), float(power[n]), cap, slot=n if q2.shape[0] > 1 else None)
        power = np.where(bad, np.nan, power)
    return power if np.ndim(q) > 1 else float(power[0])


def mc_detection(g: DetectorGeometry, tau, n_samples, seed, workers=1) -> tuple[float, float]:
    """Empirical false-alarm and miss rates of the limiting radiometer statistic."""

    def count(rng, size):
        x0 = rng.uniform(0.0, g.rho_um, size)
        t0 = x0 + g.sigma_m_sq
        x1 = rng.uniform(0.0, g.rho_um, size)
        y1 = rng.exponential(g.pk_lambda, size)
        t1 = x1 + y1 + g.sigma_m_sq
        return np.array([np.count_nonzero(t0 >= tau), np.count_nonzero(t1 <= tau)])

    hits = blocked_count(seed, "mc_detection", int(n_samples), count, workers)
    return hits[0] / n_samples, hits[1] / n_samples
