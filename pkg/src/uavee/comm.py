"""Line-of-sight rate model and throughput of trajectories."""

from __future__ import annotations

import math

import numpy as np

from uavee.scenario import DiscreteTrajectory, LinkParams

LOG2E = 1.0 / math.log(2.0)


def instantaneous_rate(q, link: LinkParams):
    """``B log2(1 + gamma0 / (H^2 + |q|^2))`` in bit/s; vectorised over leading axes."""
    q = np.asarray(q, dtype=float)
    dist_sq = link.H**2 + np.sum(q * q, axis=-1)
    rate = link.B * LOG2E * np.log1p(link.gamma0 / dist_sq)
    return float(rate) if np.ndim(rate) == 0 else rate


def trajectory_throughput(traj: DiscreteTrajectory, link: LinkParams) -> float:
    """Bits delivered over interior slots ``1..N``."""
    return traj.dt * float(np.sum(instantaneous_rate(traj.q[1 : traj.N + 1], link)))


def log_snr_antiderivative(z, link: LinkParams):
    """Antiderivative of ``ln(1 + gamma0 / (H^2 + z^2))`` in ``z``."""
    H, g0 = link.H, link.gamma0
    root = math.sqrt(H**2 + g0)
    z = np.asarray(z, dtype=float)
    return z * np.log1p(g0 / (H**2 + z**2)) + 2.0 * root * np.arctan(z / root) - 2.0 * H * np.arctan(z / H)


def straight_flight_throughput_closed(V: float, T: float, link: LinkParams) -> float:
    """Bits over a straight pass at speed ``V`` for ``T`` seconds, centred over the terminal."""
    if V <= 0 or T <= 0:
        raise ValueError("V and T must be positive")
    half = V * T / 2.0
    F = log_snr_antiderivative
    return float(link.B * LOG2E * (F(half, link) - F(-half, link)) / V)


def straight_flight_throughput_limit(V: float, link: LinkParams) -> float:
    """Limit of the straight-pass throughput as ``T -> inf``; finite, so the efficiency vanishes."""
    if V <= 0:
        raise ValueError("V must be positive")
    return 2.0 * math.pi * link.B * LOG2E / V * (math.sqrt(link.H**2 + link.gamma0) - link.H)
