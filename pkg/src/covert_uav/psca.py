"""Penalty successive convex approximation for the covert data-collection design.

The binary schedule is relaxed to ``[0, 1]`` with the violation
``sum(x - x^2)`` moved into the objective through a slack ``phi`` and a
growing weight ``mu``. Each outer step solves a second-order cone program in
which every nonconvex piece is replaced by a tangent restriction around the
current point, so every accepted point stays feasible for the relaxed
problem.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import covert_rate, interference_floor, los_gain
from .conic import (
    Affine,
    ConicBuilder,
    ConicProgram,
    encode_quad_over_linear_le_affine,
    encode_sum_squares_le_affine,
    solve,
)
from .detection import covert_ratio, min_covert_power, min_detection_error, xi_bar_of_ratio, xi_bar_slope
from .scenario import Scenario

__all__ = [
    "Iterate",
    "PenaltySchedule",
    "SolveReport",
    "FeasibilityReport",
    "RateSurrogate",
    "XiSurrogate",
    "SolverFailure",
    "RoundingFailure",
    "rate_lower_bound",
    "xi_upper_bound",
    "build_subproblem",
    "extract_iterate",
    "pack_iterate",
    "psca_solve",
    "verify_iterate",
    "true_rates",
    "LENGTH_UNIT",
]

log = logging.getLogger(__name__)

#: Largest scaled constraint violation accepted from a solve that stopped
#: short of its gap tolerance.
ACCEPT_RESIDUAL = 1e-7

#: Positions inside the cone program are expressed in units of 100 m.
LENGTH_UNIT = 100.0


@dataclass
class Iterate:
    x: np.ndarray  # (K, N) relaxed schedule
    q: np.ndarray  # (N, 2) waypoints, meters
    p_umax: np.ndarray  # (N,) AN caps, watts
    nu: np.ndarray  # (K, N) rate slacks
    omega: np.ndarray  # (K, N) covertness slacks
    eta: float
    phi: float

    @property
    def shape(self):
        return self.x.shape


@dataclass(frozen=True)
class PenaltySchedule:
    mu0: float = 0.1
    growth: float = 1.3
    mu_max: float = 1e4
    max_outer: int = 200
    tol_obj: float = 1e-4
    tol_phi: float = 1e-5

    def __post_init__(self):
        if self.mu0 <= 0 or self.growth < 1 or self.mu_max < self.mu0 or self.max_outer < 1:
            raise ValueError("need mu0 > 0, growth >= 1, mu_max >= mu0, max_outer >= 1")


@dataclass
class SolveReport:
    schedule: np.ndarray  # (K, N) binary
    owner: np.ndarray  # (N,) scheduled user index, -1 if none
    trajectory: np.ndarray  # (N, 2)
    power: np.ndarray  # (N,) AN caps after re-tightening
    rates: np.ndarray  # (K, N) instantaneous rates at the final power
    avg_rates: np.ndarray  # (K,)
    minimum_atr: float
    min_detection_error: np.ndarray  # (N,) strongest-warden error for the scheduled user
    strongest: np.ndarray  # (N,) strongest warden index
    trace: list
    converged: bool
    relaxed: Iterate
    wall_time: float = 0.0
    benchmark: bool = False


class SolverFailure(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class RoundingFailure(RuntimeError):
    def __init__(self, message, slots, trace):
        super().__init__(message)
        self.slots = list(slots)
        self.trace = trace


# ---------------------------------------------------------------------------
# surrogates


@dataclass(frozen=True)
class RateSurrogate:
    """``R_lo(q, P) = const - coef_dist * ||q - w_k||^2 - coef_power * P``."""

    value: np.ndarray
    const: np.ndarray
    coef_dist: np.ndarray
    coef_power: np.ndarray
    exact: np.ndarray  # true rate at the expansion point


def rate_lower_bound(q, p, q_ref, p_ref, k: int, scenario: Scenario) -> RateSurrogate:
    """Tangent lower bound of the covert rate of user index ``k``.

    The rate is ``log2(1 + a / (x1 x2))`` with ``x1 = ||q - w_k||^2 + H^2``
    and ``x2`` the interference floor, which is jointly convex in
    ``(x1, x2)``; its tangent plane in those variables is a global lower
    bound, concave in ``q`` and affine in ``P``.
    """
    uav, rc = scenario.uav, scenario.rc
    w = scenario.positions[k]
    H2 = uav.altitude_m**2
    a = rc.ref_gain * scenario.tx_powers[k]
    kappa = -uav.self_interference_rho * uav.self_interference_fading * np.log(rc.outage_eps)
    d2_ref = np.sum((np.asarray(q_ref, float) - w) ** 2, axis=-1)
    x1 = d2_ref + H2
    x2 = interference_floor(uav.self_interference_rho, uav.self_interference_fading, p_ref, rc.outage_eps, uav.rx_noise_w)
    prod = x1 * x2
    r_ref = np.log2(1.0 + a / prod)
    coef_dist = a / (x1 * (prod + a) * np.log(2.0))
    coef_power = a * kappa / (x2 * (prod + a) * np.log(2.0))
    const = r_ref + coef_dist * d2_ref + coef_power * np.asarray(p_ref, float)
    d2 = np.sum((np.asarray(q, float) - w) ** 2, axis=-1)
    value = const - coef_dist * d2 - coef_power * np.asarray(p, float)
    return RateSurrogate(value, const, coef_dist, coef_power, r_ref)


@dataclass(frozen=True)
class XiSurrogate:
    """``xi_up = intercept + slope * s`` with ``s = (||q - w_m||^2 + H^2) / (beta_bar P)``."""

    value: np.ndarray
    intercept: np.ndarray
    slope: np.ndarray
    ratio_ref: np.ndarray


def xi_upper_bound(q, p, q_ref, p_ref, k: int, m: int, scenario: Scenario) -> XiSurrogate:
    """Tangent upper bound of the covertness function for pair ``(k, m)``.

    ``g(s) = s (1 - exp(-1/s))`` is concave, so its tangent at the reference
    ratio lies above it; the slope ``g'`` is nonnegative.
    """
    if np.any(np.asarray(p_ref) <= 0):
        raise ValueError("expansion point needs a positive AN power")
    H = scenario.uav.altitude_m
    bb = scenario.beta_bar[k, m]
    w = scenario.positions[m]
    s_ref = covert_ratio(q_ref, w, H, p_ref, bb)
    slope = xi_bar_slope(s_ref)
    intercept = xi_bar_of_ratio(s_ref) - slope * s_ref
    s = covert_ratio(q, w, H, p, bb)
    return XiSurrogate(intercept + slope * s, intercept, slope, s_ref)


# ---------------------------------------------------------------------------
# subproblem


def build_subproblem(it: Iterate, mu: float, scenario: Scenario, fixed_trajectory: bool = False) -> ConicProgram:
    """Convex restriction around ``it``: maximize ``eta - mu * phi``.

    Inside the program positions are in units of :data:`LENGTH_UNIT` and
    powers in watts.
    """
    K, N = it.x.shape
    L = LENGTH_UNIT
    uav, rc = scenario.uav, scenario.rc
    W = scenario.positions / L
    Hs = uav.altitude_m / L
    eps = rc.covert_eps
    a_rate = it.x + it.nu
    if np.any(np.abs(a_rate).sum(axis=1) == 0):
        raise ValueError("degenerate linearization: x + nu vanishes for a whole user")

    B = ConicBuilder()
    x = B.add_variable("x", (K, N), 0.0, 1.0)
    q = B.add_variable("q", (N, 2))
    p = B.add_variable("p", (N,), 0.0, uav.p_max_an_w)
    nu = B.add_variable("nu", (K, N))
    om = B.add_variable("omega", (K, N))
    eta = B.add_variable("eta")
    phi = B.add_variable("phi", lb=0.0)
    B.maximize([(eta, 1.0), (phi, -mu)])
    if fixed_trajectory:
        B.fix(q, it.q / L)

    # average rate: sum_n (x - nu)^2 <= sum_n [2a(x + nu) - a^2] - 4 N eta, divided by N
    sq = 1.0 / np.sqrt(N)
    for k in range(K):
        terms = [Affine(np.array([x[k, n], nu[k, n]]), np.array([sq, -sq])) for n in range(N)]
        a = a_rate[k]
        idx = np.concatenate([x[k], nu[k], [eta]])
        coef = np.concatenate([2 * a / N, 2 * a / N, [-4.0]])
        B.add_blocks(encode_sum_squares_le_affine(terms, Affine(idx, coef, -float(np.sum(a**2)) / N)))

    # rate surrogate >= nu
    for k in range(K):
        sur = rate_lower_bound(it.q, it.p_umax, it.q, it.p_umax, k, scenario)
        cd = sur.coef_dist * L**2
        rc_ = np.sqrt(cd)
        for n in range(N):
            terms = [Affine(np.array([q[n, c]]), np.array([rc_[n]]), -rc_[n] * W[k, c]) for c in range(2)]
            bound = Affine(np.array([p[n], nu[k, n]]), np.array([-sur.coef_power[n], -1.0]), float(sur.const[n]))
            B.add_blocks(encode_sum_squares_le_affine(terms, bound))

    # covertness: sum_k (x - omega)^2 <= sum_k [2b(x + omega) - b^2] - 4(1 - eps)
    b_cov = it.x + it.omega
    for n in range(N):
        terms = [Affine(np.array([x[k, n], om[k, n]]), np.array([1.0, -1.0])) for k in range(K)]
        b = b_cov[:, n]
        bound = Affine(np.concatenate([x[:, n], om[:, n]]), np.concatenate([2 * b, 2 * b]), -float(np.sum(b**2)) - 4 * (1 - eps))
        B.add_blocks(encode_sum_squares_le_affine(terms, bound))

    # covertness surrogate: slope * (||q - w_m||^2 + H^2) <= beta_bar P (1 - omega - intercept)
    bb_all = scenario.beta_bar / L**2
    for k in range(K):
        for m in range(K):
            if m == k:
                continue
            sur = xi_upper_bound(it.q, it.p_umax, it.q, it.p_umax, k, m, scenario)
            bb = bb_all[k, m]
            rs = np.sqrt(sur.slope)
            for n in range(N):
                num = [Affine(np.array([q[n, c]]), np.array([rs[n]]), -rs[n] * W[m, c]) for c in range(2)]
                num.append(Affine.constant(rs[n] * Hs))
                den = Affine(np.array([p[n]]), np.array([1.0]))
                bound = Affine(np.array([om[k, n]]), np.array([-bb]), bb * (1.0 - float(sur.intercept[n])))
                ref = bound.const - bb * it.omega[k, n]
                bal = np.sqrt(max(ref, 1e-6) / max(0.5 * it.p_umax[n], 1e-9))
                B.add_blocks(encode_quad_over_linear_le_affine(num, den, bound, balance=bal))

    # binary-violation linearization
    idx = np.concatenate([x.ravel(), [phi]])
    coef = np.concatenate([-(1.0 - 2.0 * it.x).ravel(), [1.0]])
    B.add("nonneg", [Affine(idx, coef, -float(np.sum(it.x**2)))])

    # at most one user per slot
    B.add("nonneg", [Affine(x[:, n], -np.ones(K), 1.0) for n in range(N)])

    # closed loop and speed limit
    B.add("zero", [Affine(np.array([q[0, c], q[N - 1, c]]), np.array([1.0, -1.0])) for c in range(2)])
    vstep = uav.v_max_mps * scenario.grid.slot_s / L
    for n in range(N - 1):
        rows = [Affine.constant(vstep)]
        rows += [Affine(np.array([q[n + 1, c], q[n, c]]), np.array([1.0, -1.0])) for c in range(2)]
        B.add("soc", rows)
    return B.build()


def pack_iterate(program: ConicProgram, it: Iterate) -> np.ndarray:
    """Program variable vector holding ``it`` (inverse of :func:`extract_iterate`)."""
    v = np.zeros(program.n_vars)
    values = {
        "x": it.x, "q": it.q / LENGTH_UNIT, "p": it.p_umax, "nu": it.nu,
        "omega": it.omega, "eta": it.eta, "phi": it.phi,
    }
    for name, val in values.items():
        lo, hi, _ = program.var_slices[name]
        v[lo:hi] = np.ravel(val)
    return v


def extract_iterate(program: ConicProgram, primal: np.ndarray) -> Iterate:
    def var(name):
        lo, hi, shape = program.var_slices[name]
        v = primal[lo:hi]
        return v.reshape(shape) if shape else float(v[0])

    return Iterate(
        x=np.clip(var("x"), 0.0, 1.0),
        q=var("q") * LENGTH_UNIT,
        p_umax=np.maximum(var("p"), 0.0),
        nu=var("nu"),
        omega=var("omega"),
        eta=var("eta"),
        phi=max(var("phi"), 0.0),
    )


# ---------------------------------------------------------------------------
# feasibility


def true_rates(scenario: Scenario, q, p) -> np.ndarray:
    """``(K, N)`` covert rates for every user at waypoints ``q`` and caps ``p``."""
    uav, rc = scenario.uav, scenario.rc
    gains = los_gain(np.asarray(q)[None, :, :], scenario.positions[:, None, :], uav.altitude_m, rc.ref_gain)
    return covert_rate(
        scenario.tx_powers[:, None], gains, uav.self_interference_rho, uav.self_interference_fading,
        np.asarray(p)[None, :], rc.outage_eps, uav.rx_noise_w,
    )


def _covert_margin(scenario: Scenario, q, p) -> np.ndarray:
    """``(K, N)`` array of ``min_m xi*_{k,m}``."""
    K = scenario.n_users
    return np.vstack([min_detection_error(scenario, q, p, k)[0] for k in range(K)])


@dataclass
class FeasibilityReport:
    violations: dict = field(default_factory=dict)

    @property
    def max_violation(self) -> float:
        return max(self.violations.values(), default=0.0)

    def ok(self, tol: float = 1e-9) -> bool:
        return self.max_violation <= tol

    def worst(self):
        return max(self.violations.items(), key=lambda kv: kv[1])


def verify_iterate(it: Iterate, scenario: Scenario) -> FeasibilityReport:
    """Largest violation of each true (non-approximated) constraint family."""
    K, N = it.x.shape
    uav, rc = scenario.uav, scenario.rc
    rates = true_rates(scenario, it.q, it.p_umax)
    margin = _covert_margin(scenario, it.q, it.p_umax)
    steps = np.linalg.norm(np.diff(it.q, axis=0), axis=1)
    pos = lambda v: float(max(np.max(v, initial=0.0), 0.0))
    v = {
        "schedule_sum": pos(it.x.sum(axis=0) - 1.0),
        "schedule_box": pos(np.maximum(-it.x, it.x - 1.0)),
        "power_cap": pos(np.maximum(-it.p_umax, it.p_umax - uav.p_max_an_w)),
        "closure": float(np.linalg.norm(it.q[0] - it.q[-1])),
        "speed": pos(steps - uav.v_max_mps * scenario.grid.slot_s),
        "rate": pos(it.eta - np.mean(it.x * rates, axis=1)),
        "covertness": pos((1.0 - rc.covert_eps) - np.sum(it.x * margin, axis=0)),
        "binary": pos(np.sum(it.x - it.x**2) - it.phi),
        "rate_slack": pos(it.nu - rates),
        "covert_slack": pos(it.omega - margin),
        "rate_product": pos(it.eta - np.mean(it.x * it.nu, axis=1)),
        "covert_product": pos((1.0 - rc.covert_eps) - np.sum(it.x * it.omega, axis=0)),
    }
    return FeasibilityReport(v)


# ---------------------------------------------------------------------------
# driver


def _finalize(scenario: Scenario, it: Iterate, trace, converged, t0, benchmark) -> SolveReport:
    K, N = it.x.shape
    sched = (it.x > 0.5).astype(float)
    active = sched.sum(axis=0)
    empty = np.flatnonzero(active == 0)
    if len(empty):
        raise RoundingFailure(f"{len(empty)} slots left without a scheduled user", empty, trace)
    owner = np.argmax(sched, axis=0)
    power = min_covert_power(scenario, it.q, owner, raise_on_infeasible=False)
    bad = np.flatnonzero(~np.isfinite(power))
    if len(bad):
        raise RoundingFailure(f"{len(bad)} slots cannot be made covert after rounding", bad, trace)
    rates = true_rates(scenario, it.q, power)
    avg = np.mean(sched * rates, axis=1)
    xi, strongest = min_detection_error(scenario, it.q, power, owner)
    return SolveReport(
        schedule=sched,
        owner=owner,
        trajectory=it.q.copy(),
        power=power,
        rates=rates,
        avg_rates=avg,
        minimum_atr=float(avg.min()),
        min_detection_error=xi,
        strongest=strongest,
        trace=trace,
        converged=converged,
        relaxed=it,
        wall_time=time.perf_counter() - t0,
        benchmark=benchmark,
    )


def psca_solve(
    scenario: Scenario,
    init: Iterate,
    schedule: PenaltySchedule | None = None,
    fixed_trajectory: bool = False,
    backend: str = "clarabel",
    verify_tol: float = 1e-6,
    callback=None,
) -> SolveReport:
    """Run the penalty SCA loop from ``init`` and return a rounded, certified design.

    Stops when the objective ``eta - mu * phi`` changes by at most
    ``tol_obj`` and ``phi <= tol_phi``, or after ``max_outer`` steps. The
    schedule is then rounded (ties to 0) and each slot's AN cap is reset to
    the smallest covert value for the scheduled user.
    """
    sched = schedule or PenaltySchedule()
    t0 = time.perf_counter()
    report = verify_iterate(init, scenario)
    if not report.ok(verify_tol):
        name, val = report.worst()
        raise ValueError(f"initial point is infeasible: {name} violated by {val:.3g}")
    it = init
    mu = sched.mu0
    trace = []
    prev = None
    converged = False
    for r in range(sched.max_outer):
        program = build_subproblem(it, mu, scenario, fixed_trajectory)
        sol = solve(program, backend=backend)
        entry = {"r": r, "mu": mu, "status": sol.status, "solve_time": sol.solve_time, "residual": sol.feasibility_residual}
        usable = sol.status == "optimal" or (
            sol.status == "numerical_limit" and sol.feasibility_residual <= ACCEPT_RESIDUAL
        )
        if not usable:
            trace.append({**entry, "eta": float("nan"), "phi": float("nan"), "objective": float("nan")})
            raise SolverFailure(f"subproblem {r} returned {sol.status}", trace)
        new = extract_iterate(program, sol.primal)
        if fixed_trajectory:
            new.q = it.q.copy()
        obj = new.eta - mu * new.phi
        check = verify_iterate(new, scenario)
        entry.update(
            eta=new.eta, phi=new.phi, objective=obj, binary_gap=float(np.sum(new.x - new.x**2)),
            max_violation=check.max_violation,
        )
        trace.append(entry)
        if not check.ok(verify_tol):
            name, val = check.worst()
            raise SolverFailure(f"iterate {r} breaks {name} by {val:.3g}", trace)
        log.debug("iter %d mu=%.3g eta=%.6f phi=%.3g", r, mu, new.eta, new.phi)
        if callback is not None:
            callback(r, new, entry)
        it = new
        if prev is not None and abs(obj - prev) <= sched.tol_obj and new.phi <= sched.tol_phi:
            converged = True
            break
        prev = obj
        mu = min(sched.growth * mu, sched.mu_max)
    return _finalize(scenario, it, trace, converged, t0, fixed_trajectory)
