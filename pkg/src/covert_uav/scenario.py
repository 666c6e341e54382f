"""Problem instances: ground users, UAV limits, time grid and covertness settings.

All quantities are held in SI units (watts, meters, seconds, linear gains).
Decibel values only appear at the file boundary, see :func:`load_scenario`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "GroundUser",
    "UavParams",
    "TimeGrid",
    "ReliabilityCovertness",
    "Scenario",
    "ScenarioError",
    "ScenarioParseError",
    "ScenarioValidationError",
    "db_to_linear",
    "linear_to_db",
    "dbm_to_watts",
    "watts_to_dbm",
    "pathloss_fading",
    "geometric_center",
    "load_scenario",
    "scenario_from_dict",
    "reference_scenario",
    "reference_document",
    "scenario_hash",
    "DEFAULT_GROUND_PATHLOSS_EXPONENT",
]

#: Exponent used by the ``"auto_pathloss"`` user-to-user fading generator.
#: Not a published value: with free-space decay (exponent 2) the four-user
#: reference layout cannot be made covert under a 36 dBm AN cap.
DEFAULT_GROUND_PATHLOSS_EXPONENT = 3.0


class ScenarioError(ValueError):
    """Base class for scenario loading problems."""


class ScenarioParseError(ScenarioError):
    """The scenario file is not valid JSON or does not follow the schema."""


class ScenarioValidationError(ScenarioError):
    """A scenario field violates one of its invariants."""


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbm_to_watts(value_dbm):
    return 10.0 ** ((np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(value_w):
    return 10.0 * np.log10(np.asarray(value_w, dtype=float)) + 30.0


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ScenarioValidationError(message)


@dataclass(frozen=True)
class GroundUser:
    """A ground user that uploads data and otherwise acts as a warden.

    ``inter_user_fading`` maps each peer id ``m`` to the mean power
    ``lambda_{k,m}`` of the Rayleigh channel from this user to ``m``.
    """

    id: int
    position: tuple[float, float]
    tx_power_w: float
    inter_user_fading: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "inter_user_fading", MappingProxyType(dict(self.inter_user_fading)))
        _require(all(math.isfinite(c) for c in self.position), f"user {self.id}: position must be finite")
        _require(self.tx_power_w > 0, f"user {self.id}: tx_power_w must be > 0")
        for peer, lam in self.inter_user_fading.items():
            _require(lam > 0 and math.isfinite(lam), f"user {self.id}: fading to peer {peer} must be > 0")


@dataclass(frozen=True)
class UavParams:
    altitude_m: float
    v_max_mps: float
    p_max_an_w: float
    self_interference_rho: float
    self_interference_fading: float
    rx_noise_w: float

    def __post_init__(self):
        _require(self.altitude_m > 0, "uav: altitude_m must be > 0")
        _require(self.v_max_mps > 0, "uav: v_max_mps must be > 0")
        _require(self.p_max_an_w > 0, "uav: p_max_an_w must be > 0")
        _require(0 <= self.self_interference_rho <= 1, "uav: rho must lie in [0, 1]")
        _require(self.self_interference_fading > 0, "uav: lambda_uu must be > 0")
        _require(self.rx_noise_w > 0, "uav: rx_noise_w must be > 0")


@dataclass(frozen=True)
class TimeGrid:
    period_s: float
    n_slots: int
    slot_s: float

    def __post_init__(self):
        _require(self.n_slots >= 2, "grid: need at least 2 slots")
        _require(self.slot_s > 0, "grid: slot_s must be > 0")
        _require(
            math.isclose(self.period_s, self.n_slots * self.slot_s, rel_tol=1e-12, abs_tol=0.0),
            "grid: period_s must equal n_slots * slot_s",
        )

    @classmethod
    def from_period(cls, period_s: float, slot_s: float) -> "TimeGrid":
        _require(slot_s > 0, "grid: slot_s must be > 0")
        ratio = period_s / slot_s
        n = int(round(ratio))
        _require(abs(ratio - n) <= 1e-9 * max(1.0, ratio), "grid: period_s must be a whole number of slots")
        return cls(period_s=n * slot_s, n_slots=n, slot_s=slot_s)

    @property
    def times(self) -> np.ndarray:
        """Slot time stamps ``n * slot_s`` for ``n = 1..N``."""
        return self.slot_s * np.arange(1, self.n_slots + 1)


@dataclass(frozen=True)
class ReliabilityCovertness:
    outage_eps: float
    covert_eps: float
    usu_noise_w: float
    ref_gain: float

    def __post_init__(self):
        _require(0 < self.outage_eps < 1, "constraints: outage_eps must lie in (0, 1)")
        _require(0 < self.covert_eps < 1, "constraints: covert_eps must lie in (0, 1)")
        _require(self.usu_noise_w > 0, "constraints: usu_noise_w must be > 0")
        _require(self.ref_gain > 0, "constraints: ref_gain must be > 0")


@dataclass(frozen=True)
class Scenario:
    users: tuple[GroundUser, ...]
    uav: UavParams
    grid: TimeGrid
    rc: ReliabilityCovertness

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        _require(len(self.users) >= 2, "scenario: need K >= 2 users so that a warden exists")
        ids = [u.id for u in self.users]
        _require(len(set(ids)) == len(ids), "scenario: user ids must be distinct")
        for u in self.users:
            missing = set(ids) - {u.id} - set(u.inter_user_fading)
            _require(not missing, f"user {u.id}: missing fading to peers {sorted(missing)}")

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def user_ids(self) -> np.ndarray:
        return np.array([u.id for u in self.users])

    @property
    def positions(self) -> np.ndarray:
        return np.array([u.position for u in self.users], dtype=float)

    @property
    def tx_powers(self) -> np.ndarray:
        return np.array([u.tx_power_w for u in self.users], dtype=float)

    @property
    def fading(self) -> np.ndarray:
        """``K x K`` matrix of mean user-to-user channel powers, NaN on the diagonal."""
        K = self.n_users
        lam = np.full((K, K), np.nan)
        for i, u in enumerate(self.users):
            for j, v in enumerate(self.users):
                if i != j:
                    lam[i, j] = u.inter_user_fading[v.id]
        return lam

    @property
    def beta_bar(self) -> np.ndarray:
        """``beta_0 / (P_k lambda_{k,m})`` for every ordered pair, NaN on the diagonal."""
        return self.rc.ref_gain / (self.tx_powers[:, None] * self.fading)

    def index_of(self, user_id: int) -> int:
        for i, u in enumerate(self.users):
            if u.id == user_id:
                return i
        raise KeyError(user_id)

    def replace(self, **changes) -> "Scenario":
        """Copy with selected top-level knobs changed.

        Accepted keys: ``period_s``, ``covert_eps``, ``outage_eps``, ``rho``,
        ``p_max_an_w`` and ``v_max_mps``.
        """
        grid, rc, uav = self.grid, self.rc, self.uav
        if "period_s" in changes:
            grid = TimeGrid.from_period(changes.pop("period_s"), grid.slot_s)
        rc_fields = {k: changes.pop(k) for k in ("covert_eps", "outage_eps") if k in changes}
        if rc_fields:
            rc = dataclasses.replace(rc, **rc_fields)
        uav_fields = {}
        if "rho" in changes:
            uav_fields["self_interference_rho"] = changes.pop("rho")
        for key in ("p_max_an_w", "v_max_mps"):
            if key in changes:
                uav_fields[key] = changes.pop(key)
        if uav_fields:
            uav = dataclasses.replace(uav, **uav_fields)
        if changes:
            raise TypeError(f"unsupported scenario changes: {sorted(changes)}")
        return Scenario(users=self.users, uav=uav, grid=grid, rc=rc)


def geometric_center(users) -> np.ndarray:
    """Mean horizontal position of the users.

    Accepts a sequence of :class:`GroundUser` or a ``(K, 2)`` array.
    """
    if len(users) and isinstance(users[0], GroundUser):
        pts = np.array([u.position for u in users], dtype=float)
    else:
        pts = np.asarray(users, dtype=float).reshape(-1, 2)
    return pts.mean(axis=0)


def pathloss_fading(ref_gain: float, p1, p2, exponent: float = DEFAULT_GROUND_PATHLOSS_EXPONENT) -> float:
    """Mean user-to-user channel power ``beta_0 * d**(-exponent)``."""
    d = float(np.hypot(*(np.asarray(p1, float) - np.asarray(p2, float))))
    if d <= 0:
        raise ScenarioValidationError("auto_pathloss: two users share a position")
    return ref_gain * d ** (-exponent)


# ---------------------------------------------------------------------------
# file boundary

_TOP_KEYS = {"users", "uav", "grid", "constraints"}
_USER_KEYS = {"id", "xy_m", "tx_power_dbm", "fading_db"}
_UAV_KEYS = {"altitude_m", "v_max_mps", "p_max_an_dbm", "rho_db", "lambda_uu_db", "noise_dbm"}
_GRID_KEYS = {"period_s", "slot_s"}
_CONSTRAINT_KEYS = {"outage_eps", "covert_eps", "usu_noise_dbm", "ref_gain_db"}
_CONSTRAINT_OPTIONAL = {"ground_pathloss_exponent"}


def _check_keys(section: str, obj, required: set, optional: set = frozenset()) -> None:
    if not isinstance(obj, dict):
        raise ScenarioParseError(f"{section}: expected an object")
    unknown = set(obj) - required - optional
    if unknown:
        raise ScenarioParseError(f"{section}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ScenarioParseError(f"{section}: missing keys {sorted(missing)}")


def _number(section: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(f"{section}: expected a number, got {value!r}")
    return float(value)


def scenario_from_dict(data: dict) -> Scenario:
    """Build a :class:`Scenario` from the decoded JSON document."""
    _check_keys("scenario", data, _TOP_KEYS)
    cons = data["constraints"]
    _check_keys("constraints", cons, _CONSTRAINT_KEYS, _CONSTRAINT_OPTIONAL)
    ref_gain = float(db_to_linear(_number("constraints.ref_gain_db", cons["ref_gain_db"])))
    exponent = _number(
        "constraints.ground_pathloss_exponent",
        cons.get("ground_pathloss_exponent", DEFAULT_GROUND_PATHLOSS_EXPONENT),
    )
    rc = ReliabilityCovertness(
        outage_eps=_number("constraints.outage_eps", cons["outage_eps"]),
        covert_eps=_number("constraints.covert_eps", cons["covert_eps"]),
        usu_noise_w=float(dbm_to_watts(_number("constraints.usu_noise_dbm", cons["usu_noise_dbm"]))),
        ref_gain=ref_gain,
    )

    uav = data["uav"]
    _check_keys("uav", uav, _UAV_KEYS)
    uav_params = UavParams(
        altitude_m=_number("uav.altitude_m", uav["altitude_m"]),
        v_max_mps=_number("uav.v_max_mps", uav["v_max_mps"]),
        p_max_an_w=float(dbm_to_watts(_number("uav.p_max_an_dbm", uav["p_max_an_dbm"]))),
        self_interference_rho=float(db_to_linear(_number("uav.rho_db", uav["rho_db"]))),
        self_interference_fading=float(db_to_linear(_number("uav.lambda_uu_db", uav["lambda_uu_db"]))),
        rx_noise_w=float(dbm_to_watts(_number("uav.noise_dbm", uav["noise_dbm"]))),
    )

    grid = data["grid"]
    _check_keys("grid", grid, _GRID_KEYS)
    time_grid = TimeGrid.from_period(_number("grid.period_s", grid["period_s"]), _number("grid.slot_s", grid["slot_s"]))

    raw_users = data["users"]
    if not isinstance(raw_users, list):
        raise ScenarioParseError("users: expected a list")
    parsed = []
    for i, u in enumerate(raw_users):
        _check_keys(f"users[{i}]", u, _USER_KEYS)
        if isinstance(u["id"], bool) or not isinstance(u["id"], int):
            raise ScenarioParseError(f"users[{i}].id: expected an integer")
        xy = u["xy_m"]
        if not isinstance(xy, list) or len(xy) != 2:
            raise ScenarioParseError(f"users[{i}].xy_m: expected [x, y]")
        parsed.append((u["id"], tuple(_number(f"users[{i}].xy_m", c) for c in xy), u))

    users = []
    for uid, xy, u in parsed:
        entry = u["fading_db"]
        if entry == "auto_pathloss":
            fading = {pid: pathloss_fading(ref_gain, xy, pxy, exponent) for pid, pxy, _ in parsed if pid != uid}
        elif isinstance(entry, dict):
            try:
                fading = {int(k): float(db_to_linear(_number(f"user {uid} fading", v))) for k, v in entry.items()}
            except ValueError as exc:
                raise ScenarioParseError(f"user {uid}: fading_db keys must be peer ids") from exc
        else:
            raise ScenarioParseError(f"user {uid}: fading_db must be a map or 'auto_pathloss'")
        users.append(
            GroundUser(
                id=uid,
                position=xy,
                tx_power_w=float(dbm_to_watts(_number(f"user {uid} tx_power_dbm", u["tx_power_dbm"]))),
                inter_user_fading=fading,
            )
        )
    return Scenario(users=tuple(users), uav=uav_params, grid=time_grid, rc=rc)


def load_scenario(path) -> Scenario:
    """Read a JSON scenario file and convert dB/dBm fields to linear SI values."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


def scenario_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


REFERENCE_USERS: Sequence[tuple[float, float]] = ((200.0, 0.0), (0.0, 120.0), (-200.0, 0.0), (0.0, -120.0))


def reference_document(period_s: float = 240.0, covert_eps: float = 0.03, rho_db: float = -60.0) -> dict:
    """JSON document of the four-user evaluation layout."""
    return {
        "users": [
            {"id": i + 1, "xy_m": list(xy), "tx_power_dbm": 30.0, "fading_db": "auto_pathloss"}
            for i, xy in enumerate(REFERENCE_USERS)
        ],
        "uav": {
            "altitude_m": 100.0,
            "v_max_mps": 6.0,
            "p_max_an_dbm": 36.0,
            "rho_db": rho_db,
            "lambda_uu_db": -60.0,
            "noise_dbm": -110.0,
        },
        "grid": {"period_s": period_s, "slot_s": 1.0},
        "constraints": {
            "outage_eps": 0.05,
            "covert_eps": covert_eps,
            "usu_noise_dbm": -110.0,
            "ref_gain_db": -60.0,
        },
    }


def reference_scenario(period_s: float = 240.0, covert_eps: float = 0.03, rho_db: float = -60.0) -> Scenario:
    return scenario_from_dict(reference_document(period_s, covert_eps, rho_db))
