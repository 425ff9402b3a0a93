"""Closed-form benchmark designs: hovering, energy-minimum straight flight and
the efficiency-optimal circle centred on the ground terminal."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from uavee import comm
from uavee.scenario import AircraftParams, DesignMetrics, DiscreteTrajectory, LinkParams

# (3^{-3/4} + 3^{1/4}): minimum of c1 V^3 + c2/V is this times c1^{1/4} c2^{3/4}
POWER_CONSTANT = 3.0**-0.75 + 3.0**0.25


@dataclass(frozen=True)
class CircularDesign:
    r: float
    V: float
    ee: float
    avg_rate: float
    avg_power: float

    @property
    def avg_accel(self) -> float:
        return self.V**2 / self.r

    def metrics(self) -> DesignMetrics:
        return DesignMetrics(
            avg_speed=self.V,
            avg_accel=self.avg_accel,
            avg_rate=self.avg_rate,
            avg_power=self.avg_power,
            energy_efficiency=self.ee,
        )


def energy_min_speed(ac: AircraftParams) -> float:
    return (ac.c2 / (3.0 * ac.c1)) ** 0.25


def min_power(ac: AircraftParams) -> float:
    return POWER_CONSTANT * ac.c1**0.25 * ac.c2**0.75


def _turn_coefficient(r: float, ac: AircraftParams) -> float:
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    return ac.c1 + ac.c2 / (ac.g**2 * r**2)


def circular_power(V: float, r: float, ac: AircraftParams) -> float:
    """Power of a steady level turn of radius ``r`` at speed ``V``."""
    if V <= 0:
        raise ValueError(f"speed must be positive, got {V}")
    return _turn_coefficient(r, ac) * V**3 + ac.c2 / V


def circular_speed_opt(r: float, ac: AircraftParams) -> float:
    return (ac.c2 / (3.0 * _turn_coefficient(r, ac))) ** 0.25


def circular_power_opt(r: float, ac: AircraftParams) -> float:
    return POWER_CONSTANT * ac.c2**0.75 * _turn_coefficient(r, ac) ** 0.25


def circular_eta(z, link: LinkParams, ac: AircraftParams):
    """Efficiency merit of a circle with squared radius ``z`` (constants dropped)."""
    z = np.asarray(z, dtype=float)
    return np.log1p(link.gamma0 / (link.H**2 + z)) / (ac.c1 + ac.c2 / (ac.g**2 * z)) ** 0.25


def circular_design(r: float, link: LinkParams, ac: AircraftParams) -> CircularDesign:
    """Metrics of the circle of radius ``r`` flown at its power-optimal speed."""
    V = circular_speed_opt(r, ac)
    power = circular_power_opt(r, ac)
    rate = comm.instantaneous_rate(np.array([r, 0.0]), link)
    return CircularDesign(r=r, V=V, ee=rate / power, avg_rate=rate, avg_power=power)


def circular_ee_optimize(
    link: LinkParams,
    ac: AircraftParams,
    tol: float = 1e-9,
    bracket: tuple[float, float] = (1e-2, 1e8),
    grid_points: int = 400,
) -> CircularDesign:
    """Optimise the circle radius (and hence speed) for bits per Joule.

    A coarse log-spaced scan locates the peak of the merit function in
    ``log z``; a golden-section search then refines it.
    """
    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    grid = np.linspace(lo, hi, grid_points)
    vals = circular_eta(np.exp(grid), link, ac)
    k = int(np.argmax(vals))
    k = min(max(k, 1), grid_points - 2)
    res = minimize_scalar(
        lambda s: -float(circular_eta(math.exp(s), link, ac)),
        bracket=(grid[k - 1], grid[k], grid[k + 1]),
        method="golden",
        tol=tol,
    )
    z = math.exp(res.x)
    return circular_design(math.sqrt(z), link, ac)


def circular_lowsnr_radius(link: LinkParams, ac: AircraftParams) -> float:
    """Closed-form optimal radius when ``ln(1+x) ~ x`` (``gamma0 << H^2``)."""
    c1, c2, g, H = ac.c1, ac.c2, ac.g, link.H
    z = 3.0 * c2 / (8.0 * c1 * g**2) * (math.sqrt(1.0 + 16.0 * H**2 * c1 * g**2 / (9.0 * c2)) - 1.0)
    return math.sqrt(z)


def straight_em_design(link: LinkParams, ac: AircraftParams, T: float) -> DesignMetrics:
    """Straight pass at the energy-minimum speed, symmetric about the terminal."""
    V = energy_min_speed(ac)
    power = min_power(ac)
    bits = comm.straight_flight_throughput_closed(V, T, link)
    energy = power * T
    return DesignMetrics(
        avg_speed=V,
        avg_accel=0.0,
        avg_rate=bits / T,
        avg_power=power,
        energy_efficiency=bits / energy,
        total_bits=bits,
        total_energy=energy,
    )


def hover_design(link: LinkParams, T: float) -> DesignMetrics:
    """Stationary above the terminal: best rate, divergent propulsion power."""
    if T <= 0:
        raise ValueError("T must be positive")
    rate = comm.instantaneous_rate(np.zeros(2), link)
    return DesignMetrics(
        avg_speed=0.0,
        avg_accel=0.0,
        avg_rate=rate,
        avg_power=math.inf,
        energy_efficiency=0.0,
        power_divergent=True,
        total_bits=rate * T,
        total_energy=math.inf,
    )


# --- discrete materialisations ---------------------------------------------


def materialize_circle(r: float, V: float, dt: float, N: int, phase: float = 0.0) -> DiscreteTrajectory:
    """Constant-speed circle as an exactly dynamics-consistent slot sequence.

    Velocities are sampled from the continuous circle; the double-integrator
    update then places positions on a concentric circle of radius
    ``r * x / tan(x)`` with ``x`` half the angular step (a relative shrink of
    about ``x^2 / 3``).
    """
    omega = V / r
    theta = phase + omega * dt * np.arange(N + 2)
    half = 0.5 * omega * dt
    rho = r * half / math.tan(half) if half > 0 else r
    q = rho * np.column_stack([np.cos(theta), np.sin(theta)])
    v = V * np.column_stack([-np.sin(theta), np.cos(theta)])
    ahead = theta + omega * dt
    a = (V * np.column_stack([-np.sin(ahead), np.cos(ahead)]) - v) / dt
    return DiscreteTrajectory(dt=dt, q=q, v=v, a=a)


def materialize_straight(V: float, T: float, dt: float) -> DiscreteTrajectory:
    """Straight pass over the terminal with interior samples at slot midpoints.

    ``N = round(T / dt)`` interior slots cover ``[0, T]``; sample ``n`` sits at
    ``t = (n - 1/2) dt`` so that slot sums are midpoint-rule integrals.
    """
    N = int(round(T / dt))
    if N < 1:
        raise ValueError("T / dt must round to at least one slot")
    dt = T / N
    t = (np.arange(N + 2) - 0.5) * dt
    x = -V * T / 2.0 + V * t
    q = np.column_stack([x, np.zeros_like(x)])
    v = np.tile([V, 0.0], (N + 2, 1))
    return DiscreteTrajectory(dt=dt, q=q, v=v, a=np.zeros_like(v))


def materialize_hover(T: float, dt: float) -> DiscreteTrajectory:
    N = max(int(round(T / dt)), 1)
    z = np.zeros((N + 2, 2))
    return DiscreteTrajectory(dt=T / N, q=z, v=z, a=z)
