"""Fixed-wing propulsion power and trajectory energy."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from uavee.scenario import SPEED_GUARD, AircraftParams, DiscreteTrajectory


class DivergentPowerError(ValueError):
    """A fixed-wing aircraft at (numerically) zero speed needs unbounded power."""


class AccelDecomposition(NamedTuple):
    a_par: float
    a_perp: float


class PowerDraw(NamedTuple):
    watts: float
    thrust_reversal: bool


def _speed(v) -> float:
    speed = float(np.linalg.norm(v))
    if speed < SPEED_GUARD:
        raise DivergentPowerError(f"speed {speed:.3g} m/s is below the {SPEED_GUARD:g} m/s guard")
    return speed


def decompose_accel(v, a) -> AccelDecomposition:
    """Split ``a`` into the signed tangential part along ``v`` and the normal magnitude."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    speed = _speed(v)
    a_par = float(a @ v) / speed
    a_perp = float(np.sqrt(max(0.0, float(a @ a) - a_par**2)))
    return AccelDecomposition(a_par, a_perp)


def slf_power(V: float, ac: AircraftParams) -> float:
    """Straight-and-level power ``c1 V^3 + c2 / V``."""
    if V <= 0:
        raise DivergentPowerError(f"speed must be positive, got {V}")
    return ac.c1 * V**3 + ac.c2 / V


def power_required(v, a, ac: AircraftParams) -> PowerDraw:
    """Instantaneous propulsion power for velocity ``v`` and acceleration ``a``.

    The magnitude is returned; ``thrust_reversal`` is set when the engine
    would have to push against the motion, where the energy model stops being
    valid.
    """
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    speed = _speed(v)
    _, a_perp = decompose_accel(v, a)
    inner = ac.c1 * speed**3 + ac.c2 / speed * (1.0 + a_perp**2 / ac.g**2) + ac.m * float(a @ v)
    return PowerDraw(abs(inner), inner < 0.0)


def _interior(traj: DiscreteTrajectory):
    v = traj.v[1 : traj.N + 1]
    a = traj.a[1 : traj.N + 1]
    speed = np.linalg.norm(v, axis=1)
    if np.any(speed < SPEED_GUARD):
        bad = int(np.argmin(speed)) + 1
        raise DivergentPowerError(f"slot {bad} has speed {speed.min():.3g} m/s")
    return v, a, speed


def kinetic_energy_change(traj: DiscreteTrajectory, ac: AircraftParams) -> float:
    v0 = traj.v[0]
    vF = traj.v[-1]
    return 0.5 * ac.m * (float(vF @ vF) - float(v0 @ v0))


def slot_powers(traj: DiscreteTrajectory, ac: AircraftParams, upper_bound: bool = False) -> np.ndarray:
    """Drag power per interior slot (kinetic term excluded).

    With ``upper_bound`` the full acceleration replaces its normal component.
    """
    v, a, speed = _interior(traj)
    a_sq = np.einsum("ij,ij->i", a, a)
    if upper_bound:
        lateral_sq = a_sq
    else:
        a_par = np.einsum("ij,ij->i", a, v) / speed
        lateral_sq = np.maximum(0.0, a_sq - a_par**2)
    return ac.c1 * speed**3 + ac.c2 / speed * (1.0 + lateral_sq / ac.g**2)


def trajectory_energy(traj: DiscreteTrajectory, ac: AircraftParams, include_kinetic: bool = True) -> float:
    """Propulsion energy: slot sum of drag power times ``dt`` plus the kinetic change."""
    energy = traj.dt * float(np.sum(slot_powers(traj, ac)))
    if include_kinetic:
        energy += kinetic_energy_change(traj, ac)
    return energy


def trajectory_energy_ub(traj: DiscreteTrajectory, ac: AircraftParams, include_kinetic: bool = True) -> float:
    """Convex upper bound on ``trajectory_energy``; tight for constant-speed flight."""
    energy = traj.dt * float(np.sum(slot_powers(traj, ac, upper_bound=True)))
    if include_kinetic:
        energy += kinetic_energy_change(traj, ac)
    return energy


def thrust_reversal_slots(traj: DiscreteTrajectory, ac: AircraftParams) -> np.ndarray:
    """Interior slot indices where the power expression goes negative."""
    v, a, _ = _interior(traj)
    inner = slot_powers(traj, ac) + ac.m * np.einsum("ij,ij->i", a, v)
    return np.flatnonzero(inner < 0.0) + 1
