"""Successive hover-and-fly (SHAF) trajectory and the initial feasible point.

The UAV visits the users along a nearest-neighbour tour at full speed and
spends the remaining time hovering, with more time over users whose nearest
neighbour is close (their closest warden is strong). When the period is too
short to reach every user, the tour is shrunk toward the users' centroid so
that its length matches what the UAV can fly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import covert_rate, los_gain
from .detection import min_covert_power, min_detection_error
from .scenario import Scenario, geometric_center

__all__ = [
    "Tour",
    "HoverPlan",
    "Trajectory",
    "PolylinePath",
    "InsufficientFlightTime",
    "nearest_neighbour_tour",
    "hover_allocation",
    "shaf_path",
    "scale_trajectory",
    "shaf_trajectory",
    "build_initial_iterate",
]


class InsufficientFlightTime(ValueError):
    """The period is shorter than the tour; shrink the path instead."""


@dataclass(frozen=True)
class Tour:
    order: tuple  # user ids
    length_m: float
    t_min_s: float


@dataclass(frozen=True)
class HoverPlan:
    hover_s: np.ndarray
    nearest_dist: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Discrete waypoints ``q[n]`` at fixed altitude.

    ``owner`` optionally holds the user index the SHAF construction serves
    in each slot.
    """

    waypoints: np.ndarray
    altitude: float
    owner: np.ndarray | None = None

    @property
    def n_slots(self) -> int:
        return len(self.waypoints)

    def step_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)

    def length(self) -> float:
        return float(self.step_lengths().sum())

    def mobility_violation(self, v_max: float, slot_s: float) -> tuple[float, float]:
        """(closure gap, worst excess step) in meters."""
        closure = float(np.linalg.norm(self.waypoints[0] - self.waypoints[-1]))
        excess = float(np.max(self.step_lengths() - v_max * slot_s, initial=0.0))
        return closure, max(excess, 0.0)


@dataclass(frozen=True)
class PolylinePath:
    """Closed piecewise-linear path ``q(t)`` given by knots ``(times, points)``."""

    times: np.ndarray
    points: np.ndarray

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __call__(self, t):
        t = np.asarray(t, float)
        return np.stack([np.interp(t, self.times, self.points[:, i]) for i in range(2)], axis=-1)

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def _positions_and_ids(users):
    if isinstance(users, Scenario):
        users = users.users
    pos = np.array([u.position for u in users], dtype=float)
    ids = np.array([u.id for u in users])
    return pos, ids


def _cycle_length(pos, order_idx) -> float:
    pts = pos[list(order_idx) + [order_idx[0]]]
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def nearest_neighbour_tour(users, v_max_mps: float = 1.0) -> Tour:
    """Best nearest-neighbour closed tour over all start users.

    Ties (equal distances, equal tour lengths) go to the lower user id.
    """
    if isinstance(users, Scenario):
        v_max_mps = users.uav.v_max_mps
    pos, ids = _positions_and_ids(users)
    K = len(ids)
    if K < 2:
        raise ValueError("need at least two users")
    by_id = np.argsort(ids, kind="stable")
    D = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    best = None
    for start in by_id:
        order = [int(start)]
        left = set(range(K)) - {int(start)}
        while left:
            cur = order[-1]
            nxt = min(left, key=lambda j: (D[cur, j], ids[j]))
            order.append(nxt)
            left.remove(nxt)
        length = _cycle_length(pos, order)
        key = (round(length, 9), tuple(int(ids[i]) for i in order))
        if best is None or key < best[0]:
            best = (key, length, order)
    _, length, order = best
    return Tour(order=tuple(int(ids[i]) for i in order), length_m=length, t_min_s=length / v_max_mps)


def _nearest_dist(pos) -> np.ndarray:
    D = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    np.fill_diagonal(D, np.inf)
    return D.min(axis=1)


def hover_allocation(period_s: float, tour: Tour, users) -> HoverPlan:
    """Split the spare time ``T - T_min`` in proportion to ``1 / d_k``.

    Entries follow the order of ``users``.
    """
    if period_s < tour.t_min_s:
        raise InsufficientFlightTime(f"T={period_s} s < T_min={tour.t_min_s:.6g} s")
    pos, _ = _positions_and_ids(users)
    d = _nearest_dist(pos)
    share = (1.0 / d) / np.sum(1.0 / d)
    return HoverPlan(hover_s=share * (period_s - tour.t_min_s), nearest_dist=d)


def shaf_path(tour: Tour, users, v_max_mps: float, hover: HoverPlan | None = None) -> PolylinePath:
    """Continuous closed SHAF path starting at the first tour user.

    Without ``hover`` the path lasts ``T_min``.
    """
    pos, ids = _positions_and_ids(users)
    idx = [int(np.flatnonzero(ids == uid)[0]) for uid in tour.order]
    times, points = [0.0], [pos[idx[0]]]
    t = 0.0
    for j, i in enumerate(idx):
        if hover is not None and hover.hover_s[i] > 0:
            t += float(hover.hover_s[i])
            times.append(t)
            points.append(pos[i])
        nxt = pos[idx[(j + 1) % len(idx)]]
        t += float(np.linalg.norm(nxt - pos[i])) / v_max_mps
        times.append(t)
        points.append(nxt)
    return PolylinePath(np.array(times), np.array(points))


def scale_trajectory(path: PolylinePath, period_s: float, center) -> PolylinePath:
    """Shrink ``path`` toward ``center`` so it is flown in ``period_s`` at the same speed.

    ``q(t) = q_hat(t / k) + (1 - k) (center - q_hat(t / k))`` with
    ``k = period_s / path.duration``.
    """
    k = period_s / path.duration
    if not 0 < k <= 1:
        raise ValueError("scaling needs 0 < period_s <= path duration")
    center = np.asarray(center, float)
    pts = path.points + (1.0 - k) * (center - path.points)
    return PolylinePath(path.times * k, pts)


def _largest_remainder(shares: np.ndarray, total: int, ids: np.ndarray) -> np.ndarray:
    raw = shares * total
    base = np.floor(raw + 1e-9).astype(int)
    rest = total - int(base.sum())
    frac = raw - base
    order = sorted(range(len(raw)), key=lambda i: (-round(frac[i], 12), ids[i]))
    for i in order[:rest]:
        base[i] += 1
    return base


def shaf_trajectory(scenario: Scenario, tour: Tour | None = None) -> tuple[Trajectory, dict]:
    """Discretize the SHAF path onto the slot grid.

    With ``q[1] = q[N]`` the loop has ``N - 1`` moves of at most
    ``V_max * slot_s``. Each tour leg takes ``ceil(length / step)`` moves
    (evenly spaced), the rest are hover moves split by ``1 / d_k`` with
    largest-remainder rounding. If the legs do not fit, the tour is shrunk
    toward the centroid and sampled uniformly by arc length.

    Slots on a leg belong to the user at its end; hover slots to the hovered
    user.
    """
    if tour is None:
        tour = nearest_neighbour_tour(scenario)
    pos, ids = scenario.positions, scenario.user_ids
    N, dt, v = scenario.grid.n_slots, scenario.grid.slot_s, scenario.uav.v_max_mps
    moves = N - 1
    step = v * dt
    idx = [scenario.index_of(uid) for uid in tour.order]
    K = len(idx)
    legs = np.array([np.linalg.norm(pos[idx[(j + 1) % K]] - pos[idx[j]]) for j in range(K)])
    leg_moves = np.ceil(legs / step - 1e-9).astype(int)
    info = {"tour": tour, "continuous_period_s": scenario.grid.period_s}

    if leg_moves.sum() <= moves:
        d = _nearest_dist(pos)
        share = (1.0 / d) / np.sum(1.0 / d)
        hover_slots = _largest_remainder(share, moves - int(leg_moves.sum()), ids)
        points, owner = [], []
        for j, i in enumerate(idx):
            nxt = idx[(j + 1) % K]
            points += [pos[i]] * (hover_slots[i] + 1)
            owner += [i] * (hover_slots[i] + 1)
            for s in range(1, leg_moves[j]):
                points.append(pos[i] + (s / leg_moves[j]) * (pos[nxt] - pos[i]))
                owner.append(nxt)
        info.update(mode="hover_and_fly", hover_slots=hover_slots, leg_moves=leg_moves, scale=1.0)
    else:
        L = float(legs.sum())
        k = min(1.0, scenario.grid.period_s / tour.t_min_s, moves * step / L)
        w0 = geometric_center(pos)
        verts = np.array([pos[i] for i in idx] + [pos[idx[0]]])
        verts = verts + (1.0 - k) * (w0 - verts)
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(verts, axis=0), axis=1))])
        arc = cum[-1] * np.arange(moves) / moves
        leg_of = np.clip(np.searchsorted(cum, arc, side="left") - 1, 0, K - 1)
        leg_of[arc == 0] = -1
        points = np.stack([np.interp(arc, cum, verts[:, c]) for c in range(2)], axis=-1).tolist()
        owner = [idx[0] if j < 0 else idx[(j + 1) % K] for j in leg_of]
        info.update(mode="scaled", scale=k, continuous_scale=scenario.grid.period_s / tour.t_min_s)
    points = np.asarray(points, float)
    points = np.vstack([points, points[:1]])
    owner = np.asarray(owner + owner[:1], dtype=int)
    return Trajectory(points, scenario.uav.altitude_m, owner), info


def build_initial_iterate(scenario: Scenario, trajectory: Trajectory):
    """Binary schedule plus the tightest covert AN power along ``trajectory``.

    Slots follow ``trajectory.owner`` when present, else the horizontally
    nearest user. Raises :class:`~covert_uav.detection.CovertInfeasible`
    naming the slot when no admissible AN power hides the scheduled user.
    """
    from .psca import Iterate

    closure, excess = trajectory.mobility_violation(scenario.uav.v_max_mps, scenario.grid.slot_s)
    if closure > 1e-9 or excess > 1e-9:
        raise ValueError(f"trajectory violates mobility limits (closure {closure:.3g} m, excess step {excess:.3g} m)")
    q = np.asarray(trajectory.waypoints, float)
    N, K = len(q), scenario.n_users
    if N != scenario.grid.n_slots:
        raise ValueError("trajectory length does not match the slot grid")
    if trajectory.owner is not None:
        owner = np.asarray(trajectory.owner, int)
    else:
        d = np.linalg.norm(q[:, None, :] - scenario.positions[None], axis=-1)
        owner = np.argmin(d, axis=1)
    x = np.zeros((K, N))
    x[owner, np.arange(N)] = 1.0
    p = min_covert_power(scenario, q, owner)

    uav, rc = scenario.uav, scenario.rc
    gains = los_gain(q[None, :, :], scenario.positions[:, None, :], uav.altitude_m, rc.ref_gain)
    nu = covert_rate(
        scenario.tx_powers[:, None], gains, uav.self_interference_rho, uav.self_interference_fading, p[None, :],
        rc.outage_eps, uav.rx_noise_w,
    )
    omega = np.vstack([min_detection_error(scenario, q, p, k)[0] for k in range(K)])
    eta = float(np.min(np.mean(x * nu, axis=1)))
    return Iterate(x=x, q=q.copy(), p_umax=p, nu=nu, omega=omega, eta=eta, phi=0.0)
