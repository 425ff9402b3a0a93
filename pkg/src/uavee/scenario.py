"""Parameter records, trajectories, config ingestion and design metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

# speeds below this are treated as zero (fixed-wing power diverges)
SPEED_GUARD = 1e-6


class ScenarioError(ValueError):
    """Raised for malformed configs and parameter invariant violations."""


def _require_positive(name: str, value: float) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(value) or value <= 0.0:
        raise ScenarioError(f"{name} must be positive and finite, got {value!r}")
    return value


def _vec2(name: str, value: Any) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (2,) or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name} must be a finite 2-vector, got {value!r}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AircraftParams:
    """Fixed-wing propulsion constants.

    ``c1`` multiplies V^3 (parasitic power), ``c2`` divides V (induced power).
    """

    c1: float
    c2: float
    m: float = 10.0
    g: float = 9.8

    def __post_init__(self):
        for name in ("c1", "c2", "m", "g"):
            object.__setattr__(self, name, _require_positive(name, getattr(self, name)))


@dataclass(frozen=True)
class LinkParams:
    """Line-of-sight link: bandwidth ``B`` (Hz), reference SNR ``gamma0`` at 1 m,
    altitude ``H`` (m).

    A zero bandwidth is accepted here (it models a silent link); the config
    loader still insists on ``B > 0``.
    """

    B: float
    gamma0: float
    H: float

    def __post_init__(self):
        B = float(self.B)
        if not math.isfinite(B) or B < 0.0:
            raise ScenarioError(f"B must be non-negative and finite, got {self.B!r}")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "gamma0", _require_positive("gamma0", self.gamma0))
        object.__setattr__(self, "H", _require_positive("H", self.H))

    @classmethod
    def from_triplet(cls, B: float, beta0: float, P_tx: float, sigma2: float, H: float) -> "LinkParams":
        beta0 = _require_positive("beta0", beta0)
        P_tx = _require_positive("P_tx_w", P_tx)
        sigma2 = _require_positive("sigma2_w", sigma2)
        return cls(B=B, gamma0=beta0 * P_tx / sigma2, H=H)


@dataclass(frozen=True)
class TrajectoryConstraints:
    """Boundary states, caps and horizon. ``None`` leaves a quantity free."""

    T: float
    q0: Optional[np.ndarray] = None
    qF: Optional[np.ndarray] = None
    v0: Optional[np.ndarray] = None
    vF: Optional[np.ndarray] = None
    Vmax: Optional[float] = None
    amax: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "T", _require_positive("T", self.T))
        for name in ("q0", "qF", "v0", "vF"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _vec2(name, val))
        for name in ("Vmax", "amax"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _require_positive(name, val))
        if self.Vmax is not None:
            for name in ("v0", "vF"):
                val = getattr(self, name)
                if val is not None and np.linalg.norm(val) > self.Vmax:
                    raise ScenarioError(f"{name} exceeds Vmax={self.Vmax}")
            if self.q0 is not None and self.qF is not None:
                dist = float(np.linalg.norm(self.qF - self.q0))
                if dist > self.Vmax * self.T:
                    raise ScenarioError(
                        f"qF unreachable from q0: distance {dist:.6g} m > Vmax*T = {self.Vmax * self.T:.6g} m"
                    )

    @property
    def kinetic_fixed(self) -> bool:
        """True when both boundary velocities are pinned, so the kinetic term is a constant."""
        return self.v0 is not None and self.vF is not None

    @property
    def unconstrained(self) -> bool:
        return all(getattr(self, n) is None for n in ("q0", "qF", "v0", "vF", "Vmax", "amax"))


@dataclass(frozen=True)
class SolverSettings:
    dt: float = 0.5
    inner_tol: float = 1e-8
    outer_tol: float = 1e-4
    fractional_tol: float = 1e-7
    max_iters: int = 100
    max_fractional_iters: int = 60
    seed: int = 0
    method: str = "dinkelbach"
    init: Optional[str] = None
    speed_floor: float = 0.1
    init_lateral: float = 0.0  # sideways bump (m) for the direct-path init

    def __post_init__(self):
        for name in ("dt", "inner_tol", "outer_tol", "fractional_tol", "speed_floor"):
            object.__setattr__(self, name, _require_positive(name, getattr(self, name)))
        for name in ("max_iters", "max_fractional_iters"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ScenarioError(f"{name} must be a positive integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        object.__setattr__(self, "seed", int(self.seed))
        if not self.init_lateral >= 0:
            raise ScenarioError(f"init_lateral must be non-negative, got {self.init_lateral!r}")
        object.__setattr__(self, "init_lateral", float(self.init_lateral))
        if self.method not in ("dinkelbach", "bisection"):
            raise ScenarioError(f"method must be 'dinkelbach' or 'bisection', got {self.method!r}")
        if self.init is not None and self.init not in ("circular", "direct", "random"):
            raise ScenarioError(f"init must be circular, direct or random, got {self.init!r}")


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Slots ``0..N+1`` of positions, velocities and accelerations (each ``(N+2, 2)``)."""

    dt: float
    q: np.ndarray
    v: np.ndarray
    a: np.ndarray
    tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "dt", _require_positive("dt", self.dt))
        arrays = []
        for name in ("q", "v", "a"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ScenarioError(f"{name} must have shape (N+2, 2), got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            arrays.append(arr)
        lengths = {len(x) for x in arrays}
        if len(lengths) != 1:
            raise ScenarioError(f"q, v, a lengths differ: {sorted(lengths)}")
        if lengths.pop() < 3:
            raise ScenarioError("trajectory needs N >= 1 interior slots")

    @property
    def N(self) -> int:
        return len(self.q) - 2

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 2)

    def dynamics_residuals(self) -> tuple[float, float]:
        """Max position and velocity residuals of the discrete double integrator."""
        dt = self.dt
        q, v, a = self.q, self.v, self.a
        rq = q[1:] - q[:-1] - v[:-1] * dt - 0.5 * a[:-1] * dt**2
        rv = v[1:] - v[:-1] - a[:-1] * dt
        return float(np.max(np.linalg.norm(rq, axis=1))), float(np.max(np.linalg.norm(rv, axis=1)))

    def is_dynamics_consistent(self, tol: Optional[float] = None) -> bool:
        tol = self.tol if tol is None else tol
        return max(self.dynamics_residuals()) <= tol

    @classmethod
    def from_accelerations(cls, dt: float, q0, v0, a) -> "DiscreteTrajectory":
        """Integrate slot accelerations ``a[0..N+1]`` forward from ``(q0, v0)``."""
        a = np.asarray(a, dtype=float)
        q = np.empty_like(a)
        v = np.empty_like(a)
        q[0], v[0] = q0, v0
        for n in range(len(a) - 1):
            v[n + 1] = v[n] + a[n] * dt
            q[n + 1] = q[n] + v[n] * dt + 0.5 * a[n] * dt**2
        return cls(dt=dt, q=q, v=v, a=a)


@dataclass(frozen=True)
class DesignMetrics:
    """Slot-averaged performance of a design over the interior slots.

    When some interior speed is zero the propulsion power diverges; this is
    recorded in ``power_divergent`` and the efficiency is set to zero on purpose.
    """

    avg_speed: float
    avg_accel: float
    avg_rate: float
    avg_power: float
    energy_efficiency: float
    power_divergent: bool = False
    thrust_reversal: bool = False
    total_bits: float = float("nan")
    total_energy: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def metrics(
    traj: DiscreteTrajectory,
    link: LinkParams,
    ac: AircraftParams,
    include_kinetic: bool = True,
) -> DesignMetrics:
    """Average speed/acceleration/rate/power and bits-per-Joule of ``traj``.

    Bits and energy are left-endpoint slot sums over ``n = 1..N``; the kinetic
    energy change between slots 0 and N+1 is added to the energy when
    ``include_kinetic`` is set.
    """
    from uavee import comm, propulsion

    if not traj.is_dynamics_consistent():
        raise ScenarioError(
            "trajectory is not dynamics-consistent (residuals %.3g, %.3g)" % traj.dynamics_residuals()
        )
    N, dt = traj.N, traj.dt
    interior = slice(1, N + 1)
    avg_speed = float(np.mean(np.linalg.norm(traj.v[interior], axis=1)))
    avg_accel = float(np.mean(np.linalg.norm(traj.a[interior], axis=1)))
    bits = comm.trajectory_throughput(traj, link)
    duration = N * dt
    avg_rate = bits / duration
    try:
        energy = propulsion.trajectory_energy(traj, ac, include_kinetic=include_kinetic)
    except propulsion.DivergentPowerError:
        return DesignMetrics(
            avg_speed=avg_speed,
            avg_accel=avg_accel,
            avg_rate=avg_rate,
            avg_power=math.inf,
            energy_efficiency=0.0,
            power_divergent=True,
            total_bits=bits,
            total_energy=math.inf,
        )
    reversal = bool(propulsion.thrust_reversal_slots(traj, ac).size)
    return DesignMetrics(
        avg_speed=avg_speed,
        avg_accel=avg_accel,
        avg_rate=avg_rate,
        avg_power=energy / duration,
        energy_efficiency=bits / energy,
        thrust_reversal=reversal,
        total_bits=bits,
        total_energy=energy,
    )


# --- config ingestion -------------------------------------------------------

_SOLVER_TOL_KEYS = {"inner": "inner_tol", "outer": "outer_tol", "fractional": "fractional_tol"}


def _db_to_linear(db: float) -> float:
    return 10.0 ** (float(db) / 10.0)


def _dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((float(dbm) - 30.0) / 10.0)


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ScenarioError(f"missing required section '{name}'")
        return {}
    if not isinstance(sec, dict):
        raise ScenarioError(f"section '{name}' must be an object")
    return sec


def _get(sec: dict, key: str, where: str):
    if key not in sec or sec[key] is None:
        raise ScenarioError(f"missing required field '{where}.{key}'")
    return sec[key]


def _parse_link(sec: dict) -> LinkParams:
    B = _require_positive("link.B_hz", _get(sec, "B_hz", "link"))
    H = _require_positive("link.H_m", _get(sec, "H_m", "link"))
    if sec.get("gamma0") is not None:
        return LinkParams(B=B, gamma0=_require_positive("link.gamma0", sec["gamma0"]), H=H)
    if sec.get("beta0") is not None:
        beta0 = sec["beta0"]
    elif sec.get("beta0_db") is not None:
        beta0 = _db_to_linear(sec["beta0_db"])
    else:
        raise ScenarioError("link needs 'gamma0' or the 'beta0'/'P_tx_w'/'sigma2_w' triplet")
    if sec.get("P_tx_w") is not None:
        P_tx = sec["P_tx_w"]
    elif sec.get("P_tx_dbm") is not None:
        P_tx = _dbm_to_watts(sec["P_tx_dbm"])
    else:
        raise ScenarioError("missing required field 'link.P_tx_w'")
    if sec.get("sigma2_w") is not None:
        sigma2 = sec["sigma2_w"]
    elif sec.get("sigma2_dbm") is not None:
        sigma2 = _dbm_to_watts(sec["sigma2_dbm"])
    elif sec.get("N0_dbm_hz") is not None:
        sigma2 = _dbm_to_watts(sec["N0_dbm_hz"]) * B
    else:
        raise ScenarioError("missing required field 'link.sigma2_w'")
    for name, val in (("link.beta0", beta0), ("link.P_tx_w", P_tx), ("link.sigma2_w", sigma2)):
        _require_positive(name, val)
    return LinkParams.from_triplet(B=B, beta0=beta0, P_tx=P_tx, sigma2=sigma2, H=H)


def _parse_constraints(sec: dict) -> TrajectoryConstraints:
    known = {"T", "q0", "qF", "v0", "vF", "Vmax", "amax"}
    unknown = set(sec) - known
    if unknown:
        raise ScenarioError(f"unknown constraints field(s): {', '.join(sorted(unknown))}")
    kwargs = {k: sec.get(k) for k in known}
    kwargs["T"] = _get(sec, "T", "constraints")
    try:
        return TrajectoryConstraints(**kwargs)
    except ScenarioError as exc:
        raise ScenarioError(f"constraints: {exc}") from None


def _parse_solver(sec: dict) -> SolverSettings:
    kwargs = {}
    for key, val in sec.items():
        if key == "tolerances":
            if not isinstance(val, dict):
                raise ScenarioError("solver.tolerances must be an object")
            for tkey, tval in val.items():
                if tkey not in _SOLVER_TOL_KEYS:
                    raise ScenarioError(f"unknown solver.tolerances field '{tkey}'")
                kwargs[_SOLVER_TOL_KEYS[tkey]] = tval
        elif key in SolverSettings.__dataclass_fields__:
            kwargs[key] = val
        else:
            raise ScenarioError(f"unknown solver field '{key}'")
    try:
        return SolverSettings(**kwargs)
    except ScenarioError as exc:
        raise ScenarioError(f"solver: {exc}") from None


def parse_scenario(cfg: dict) -> tuple[AircraftParams, LinkParams, TrajectoryConstraints, SolverSettings]:
    if not isinstance(cfg, dict):
        raise ScenarioError("config root must be an object")
    air = _section(cfg, "aircraft")
    kwargs = {k: _get(air, k, "aircraft") for k in ("c1", "c2")}
    for k in ("m", "g"):
        if air.get(k) is not None:
            kwargs[k] = air[k]
    for k, v in kwargs.items():
        _require_positive(f"aircraft.{k}", v)
    ac = AircraftParams(**kwargs)
    link = _parse_link(_section(cfg, "link"))
    cons = _parse_constraints(_section(cfg, "constraints"))
    solver = _parse_solver(_section(cfg, "solver", required=False))
    return ac, link, cons, solver


def load_scenario(config_text: str) -> tuple[AircraftParams, LinkParams, TrajectoryConstraints, SolverSettings]:
    """Parse JSON config text into validated parameter records."""
    try:
        cfg = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"config parse error: {exc}") from None
    return parse_scenario(cfg)


def load_scenario_file(path) -> tuple[AircraftParams, LinkParams, TrajectoryConstraints, SolverSettings]:
    return load_scenario(Path(path).read_text())


def dump_scenario(
    ac: AircraftParams,
    link: LinkParams,
    cons: TrajectoryConstraints,
    solver: Optional[SolverSettings] = None,
) -> str:
    """Serialize records to config text; floats are written with full repr precision."""

    def vec(x):
        return None if x is None else [float(c) for c in x]

    cfg = {
        "aircraft": {"c1": ac.c1, "c2": ac.c2, "m": ac.m, "g": ac.g},
        "link": {"B_hz": link.B, "H_m": link.H, "gamma0": link.gamma0},
        "constraints": {
            "T": cons.T,
            "q0": vec(cons.q0),
            "qF": vec(cons.qF),
            "v0": vec(cons.v0),
            "vF": vec(cons.vF),
            "Vmax": cons.Vmax,
            "amax": cons.amax,
        },
    }
    if solver is not None:
        s = asdict(solver)
        tol = {k: s.pop(v) for k, v in _SOLVER_TOL_KEYS.items()}
        s["tolerances"] = tol
        cfg["solver"] = s
    return json.dumps(cfg, indent=2)
