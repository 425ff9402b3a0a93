"""Sequential convex optimisation of bits-per-Joule over discrete trajectories.

Each outer step rebuilds concave/linear surrogates at the current local
point (a Taylor lower bound on the rate, a linearised lower bound on the
squared speed) and solves the resulting concave-over-convex fractional
program by Dinkelbach iterations or bisection on the ratio.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from uavee import analytic, comm, propulsion
from uavee.comm import LOG2E
from uavee.convex_inner import (
    ConvexSubproblem,
    DiscreteBoundaries,
    InnerSolution,
    InnerSolver,
    InnerSolverError,
    check_kkt,
)
from uavee.scenario import (
    AircraftParams,
    DesignMetrics,
    DiscreteTrajectory,
    LinkParams,
    ScenarioError,
    SolverSettings,
    TrajectoryConstraints,
    metrics,
)

log = logging.getLogger(__name__)


class SCOError(RuntimeError):
    """Inner-solver failure annotated with the outer iteration it happened in."""

    def __init__(self, message: str, iteration: int, cause: Optional[Exception] = None):
        super().__init__(f"outer iteration {iteration}: {message}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class LocalPoint:
    q: np.ndarray  # (N, 2) interior positions
    v: np.ndarray  # (N+2, 2) velocities incl. boundary slots

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        v = np.array(self.v, dtype=float)
        if q.ndim != 2 or q.shape[1] != 2 or v.shape != (len(q) + 2, 2):
            raise ValueError(f"local point shapes do not match: q {q.shape}, v {v.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise ValueError("local point has non-finite entries")
        q.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def N(self) -> int:
        return len(self.q)

    @property
    def v_interior(self) -> np.ndarray:
        return self.v[1:-1]

    @classmethod
    def from_trajectory(cls, traj: DiscreteTrajectory) -> "LocalPoint":
        return cls(q=traj.q[1:-1], v=traj.v)


@dataclass(frozen=True)
class BoundCoefficients:
    alpha: np.ndarray  # bit/s/Hz
    beta: np.ndarray  # 1/m^2 (per Hz)


@dataclass
class SCOIterate:
    iteration: int
    trajectory: DiscreteTrajectory
    tau: Optional[np.ndarray]
    objective: float
    ee_lb: float  # surrogate optimum: Taylor rate bound over upper-bounded energy
    ee_energy_ub: float  # exact rate over upper-bounded energy
    ee_exact: float
    kkt_residual: float
    inner_iters: int
    wall_time: float
    metrics: DesignMetrics

    def log_record(self) -> dict:
        return {
            "iter": self.iteration,
            "objective": self.objective,
            "ee_lb": self.ee_lb,
            "ee_energy_ub": self.ee_energy_ub,
            "ee_exact": self.ee_exact,
            "kkt_residual": self.kkt_residual,
            "inner_iters": self.inner_iters,
            "wall_time": self.wall_time,
        }


@dataclass
class SCOResult:
    mode: str
    iterates: list = field(default_factory=list)
    converged: bool = False
    bounds: Optional[DiscreteBoundaries] = None

    @property
    def final(self) -> SCOIterate:
        return self.iterates[-1]


# --- discretisation and surrogates -----------------------------------------


def discretize_constraints(c: TrajectoryConstraints, dt: float, m: float = 0.0) -> DiscreteBoundaries:
    """Map continuous constraints to slots ``0..N+1`` with ``N = round(T/dt) - 1``.

    The kinetic-energy change is a constant only when both boundary
    velocities are fixed; otherwise it is left out (``delta_k = 0``).
    """
    if dt <= 0:
        raise ScenarioError("dt must be positive")
    N = int(round(c.T / dt)) - 1
    if N < 1:
        raise ScenarioError(f"T={c.T} with dt={dt} leaves N={N} interior slots")
    delta_k = 0.0
    if c.kinetic_fixed:
        delta_k = 0.5 * m * (float(c.vF @ c.vF) - float(c.v0 @ c.v0))
    return DiscreteBoundaries(
        N=N, dt=dt, q0=c.q0, qF=c.qF, v0=c.v0, vF=c.vF, Vmax=c.Vmax, amax=c.amax, delta_k=delta_k
    )


def step_state(q, v, a, dt: float):
    """One slot of the discrete double integrator."""
    q, v, a = (np.asarray(x, dtype=float) for x in (q, v, a))
    return q + v * dt + 0.5 * a * dt**2, v + a * dt


def bound_coefficients(q_j: np.ndarray, link: LinkParams) -> BoundCoefficients:
    d_sq = link.H**2 + np.sum(np.asarray(q_j) ** 2, axis=1)
    alpha = LOG2E * np.log1p(link.gamma0 / d_sq)
    beta = LOG2E * link.gamma0 / ((d_sq + link.gamma0) * d_sq)
    return BoundCoefficients(alpha=alpha, beta=beta)


def rate_lower_bound(q: np.ndarray, lp: LocalPoint, link: LinkParams) -> tuple[float, BoundCoefficients]:
    """Concave Taylor minorant of the slot-summed rate (bit/s), tight at ``lp``."""
    coef = bound_coefficients(lp.q, link)
    q = np.asarray(q, dtype=float)
    val = np.sum(coef.alpha - coef.beta * (np.sum(q**2, axis=1) - np.sum(lp.q**2, axis=1)))
    return link.B * float(val), coef


def rate_lower_bound_gradient(q: np.ndarray, lp: LocalPoint, link: LinkParams) -> np.ndarray:
    coef = bound_coefficients(lp.q, link)
    return -2.0 * link.B * coef.beta[:, None] * np.asarray(q, dtype=float)


def slot_rate_sum(q: np.ndarray, link: LinkParams) -> float:
    """Exact ``B sum_n log2(1 + gamma0/(H^2+|q_n|^2))`` over the given positions."""
    return float(np.sum(comm.instantaneous_rate(q, link)))


def speed_lower_bound(v, v_j):
    """Linear minorant of ``|v|^2`` about ``v_j``."""
    v = np.asarray(v, dtype=float)
    v_j = np.asarray(v_j, dtype=float)
    return np.sum(v_j * v_j, axis=-1) + 2.0 * np.sum(v_j * (v - v_j), axis=-1)


# --- fractional subproblem ---------------------------------------------------


@dataclass
class FractionalResult:
    solution: InnerSolution
    ratio: float  # bit/J/Hz
    inner_iters: int
    probes: int
    certificate: float
    lam: float  # weight of the final inner solve


def _subproblem(lp, bounds, link, ac, mode, lam, speed_floor) -> ConvexSubproblem:
    coef = bound_coefficients(lp.q, link)
    return ConvexSubproblem(
        bounds=bounds, ac=ac, q_j=lp.q, v_j=lp.v_interior, alpha=coef.alpha, beta=coef.beta,
        lam=max(float(lam), 0.0), mode=mode, speed_floor=speed_floor,
    )


def _dinkelbach(solver, make_sub, lam0, tol, inner_tol, max_iter) -> FractionalResult:
    lam = max(lam0, 0.0)
    inner = 0
    for k in range(1, max_iter + 1):
        sol = solver.solve(make_sub(lam), tol=inner_tol, check=False)
        inner += sol.iterations
        gap = sol.num - lam * sol.den
        cert = abs(gap) / max(abs(sol.num), 1e-300)
        if cert <= tol:
            break
        if k < max_iter:
            lam = max(sol.ratio, 0.0)
    else:
        log.warning("Dinkelbach stopped at %d iterations (certificate %.3g)", max_iter, cert)
    return FractionalResult(sol, sol.ratio, inner, k, cert, lam)


def _ratio_upper_bound(make_sub, bounds, ac) -> float:
    sub = make_sub(0.0)
    # |v| >= tau and c1 tau^3 + c2/tau >= P_min bound every slot's power below
    den_min = bounds.N * analytic.min_power(ac) + bounds.delta_k / bounds.dt
    return max(sub.numerator_constant, 0.0) / den_min if den_min > 0 else math.inf


def _bisection(solver, make_sub, bounds, ac, tol, inner_tol, max_iter) -> FractionalResult:
    lo, hi = 0.0, _ratio_upper_bound(make_sub, bounds, ac)
    if not math.isfinite(hi):
        raise InnerSolverError("no finite bracket for bisection (non-positive denominator bound)")
    best, best_lam = None, 0.0
    inner = probes = 0
    while hi - lo > tol * hi and probes < max_iter:
        mid = 0.5 * (lo + hi)
        sol = solver.solve(make_sub(mid), tol=inner_tol, check=False)
        inner += sol.iterations
        probes += 1
        if sol.num - mid * sol.den >= 0.0:
            # any feasible point's ratio is also a valid lower bound
            lo = max(mid, sol.ratio)
            best, best_lam = sol, mid
        else:
            hi = mid
    if best is None:
        best = solver.solve(make_sub(lo), tol=inner_tol, check=False)
        best_lam = lo
        probes += 1
    return FractionalResult(best, best.ratio, inner, probes, (hi - lo) / max(hi, 1e-300), best_lam)


def solve_p22(
    lp: LocalPoint,
    bounds: DiscreteBoundaries,
    link: LinkParams,
    ac: AircraftParams,
    method: str = "dinkelbach",
    tol: float = 1e-7,
    inner_tol: float = 1e-8,
    lam0: Optional[float] = None,
    speed_floor: float = 0.1,
    solver: Optional[InnerSolver] = None,
    max_iter: int = 60,
) -> FractionalResult:
    """Maximise the surrogate ratio at local point ``lp``.

    ``lam0`` (bit/J/Hz) seeds Dinkelbach; by default it is the surrogate
    ratio of the local point itself.
    """
    if solver is None:
        solver = InnerSolver(bounds, ac, "ee", speed_floor)

    def make_sub(lam):
        return _subproblem(lp, bounds, link, ac, "ee", lam, speed_floor)

    if method == "dinkelbach":
        if lam0 is None:
            lam0 = local_point_ratio(lp, bounds, link, ac)
        res = _dinkelbach(solver, make_sub, lam0, tol, inner_tol, max_iter)
    elif method == "bisection":
        res = _bisection(solver, make_sub, bounds, ac, tol, inner_tol, max_iter)
    else:
        raise ValueError(f"unknown fractional method {method!r}")
    res.solution.kkt = check_kkt(res.solution, make_sub(res.lam))
    return res


def local_point_ratio(lp: LocalPoint, bounds: DiscreteBoundaries, link: LinkParams, ac: AircraftParams) -> float:
    """Ratio per Hz of the local point: exact slot rates over the bound energy with ``tau = |v|``.

    Accelerations are taken as velocity differences. For a dynamics-consistent
    local point this is the lower bound actually attained by that trajectory.
    """
    v = lp.v
    a = (v[2:] - v[1:-1]) / bounds.dt
    speed = np.linalg.norm(lp.v_interior, axis=1)
    if np.any(speed < 1e-6):
        return 0.0
    num = slot_rate_sum(lp.q, link) / link.B if link.B > 0 else float(np.sum(bound_coefficients(lp.q, link).alpha))
    den = float(
        np.sum(ac.c1 * speed**3 + ac.c2 / speed * (1.0 + np.sum(a**2, axis=1) / ac.g**2))
        + bounds.delta_k / bounds.dt
    )
    return num / den


# --- outer loop --------------------------------------------------------------


def _evaluate(sol: InnerSolution, bounds, link, ac, include_kinetic) -> tuple[DiscreteTrajectory, DesignMetrics, float, float]:
    traj = sol.trajectory(bounds.dt)
    m = metrics(traj, link, ac, include_kinetic=include_kinetic)
    if m.power_divergent:
        return traj, m, 0.0, 0.0
    e_ub = propulsion.trajectory_energy_ub(traj, ac, include_kinetic=include_kinetic)
    ee_ub = m.total_bits / e_ub
    return traj, m, ee_ub, m.energy_efficiency


def run_algorithm1(
    init: LocalPoint,
    bounds: DiscreteBoundaries,
    link: LinkParams,
    ac: AircraftParams,
    settings: SolverSettings = SolverSettings(),
    mode: str = "ee",
    include_kinetic: Optional[bool] = None,
    callback: Optional[Callable[[SCOIterate], None]] = None,
) -> SCOResult:
    """Iterate surrogate solves from ``init`` until the objective stalls.

    ``mode`` selects bits-per-Joule (``"ee"``), throughput (``"rate"``) or
    energy (``"energy"``). Stops when the relative objective change between
    outer iterations drops below ``settings.outer_tol`` or after
    ``settings.max_iters``.
    """
    if init.N != bounds.N:
        raise ValueError(f"init has N={init.N}, boundaries have N={bounds.N}")
    if include_kinetic is None:
        include_kinetic = bounds.v0 is not None and bounds.vF is not None
    solver = InnerSolver(bounds, ac, mode, settings.speed_floor)
    result = SCOResult(mode=mode, bounds=bounds)
    lp = init
    lam = None
    prev = None
    for j in range(1, settings.max_iters + 1):
        t0 = time.perf_counter()
        try:
            if mode == "ee":
                fr = solve_p22(
                    lp, bounds, link, ac, method=settings.method, tol=settings.fractional_tol,
                    inner_tol=settings.inner_tol, lam0=lam, speed_floor=settings.speed_floor,
                    solver=solver, max_iter=settings.max_fractional_iters,
                )
                sol, inner_iters = fr.solution, fr.inner_iters
                lam = fr.ratio
                objective = link.B * fr.ratio
            else:
                sub = _subproblem(lp, bounds, link, ac, mode, 0.0, settings.speed_floor)
                sol = solver.solve(sub, tol=settings.inner_tol)
                inner_iters = sol.iterations
                objective = link.B * sol.num * bounds.dt if mode == "rate" else sol.den * bounds.dt
        except InnerSolverError as exc:
            raise SCOError(str(exc), j, exc) from exc
        traj, m, ee_ub, ee_exact = _evaluate(sol, bounds, link, ac, include_kinetic)
        if sol.tau is not None:
            ee_lb = link.B * sol.num / sol.den
        else:
            # no slack speeds in rate mode: pair the rate bound with the exact-speed energy bound
            ee_lb = ee_ub * sol.num * link.B * bounds.dt / m.total_bits if m.total_bits > 0 else 0.0
        it = SCOIterate(
            iteration=j, trajectory=traj, tau=sol.tau, objective=objective, ee_lb=ee_lb, ee_energy_ub=ee_ub,
            ee_exact=ee_exact, kkt_residual=sol.kkt.max if sol.kkt else float("nan"), inner_iters=inner_iters,
            wall_time=time.perf_counter() - t0, metrics=m,
        )
        result.iterates.append(it)
        log.info("iter %d: objective %.8g ee_lb %.6g ee_exact %.6g", j, objective, ee_lb, ee_exact)
        if callback is not None:
            callback(it)
        lp = LocalPoint(q=sol.q[1:-1], v=sol.v)
        if prev is not None and abs(objective - prev) <= settings.outer_tol * abs(prev):
            result.converged = True
            break
        prev = objective
    return result


def run_constrained_ratemax(init, bounds, link, ac, settings=SolverSettings(), **kw) -> SCOResult:
    return run_algorithm1(init, bounds, link, ac, settings, mode="rate", **kw)


def run_constrained_energymin(init, bounds, link, ac, settings=SolverSettings(), **kw) -> SCOResult:
    return run_algorithm1(init, bounds, link, ac, settings, mode="energy", **kw)


# --- initialisations ---------------------------------------------------------


def circular_init(bounds: DiscreteBoundaries, link: LinkParams, ac: AircraftParams) -> DiscreteTrajectory:
    design = analytic.circular_ee_optimize(link, ac)
    return analytic.materialize_circle(design.r, design.V, bounds.dt, bounds.N)


def direct_init(bounds: DiscreteBoundaries, lateral: float = 0.0) -> LocalPoint:
    """Constant-velocity straight line from ``q0`` to ``qF`` over the horizon.

    ``lateral`` adds a half-sine sideways bump of that many metres.  A perfectly
    straight, constant-speed local point is a saddle of the energy objective
    (speed is only second order in sideways motion), so energy minimisation
    from it stalls until round-off breaks the symmetry; a small bump breaks it
    deterministically.
    """
    if bounds.q0 is None or bounds.qF is None:
        raise ScenarioError("direct initialisation needs both q0 and qF")
    N, dt = bounds.N, bounds.dt
    T = (N + 1) * dt
    frac = np.arange(N + 2)[:, None] / (N + 1)
    span = bounds.qF - bounds.q0
    q = bounds.q0 + frac * span
    v = np.tile(span / T, (N + 2, 1))
    if lateral:
        length = float(np.linalg.norm(span))
        normal = np.array([-span[1], span[0]]) / length if length > 0 else np.array([0.0, 1.0])
        phase = np.pi * frac
        q = q + lateral * np.sin(phase) * normal
        v = v + lateral * np.pi / T * np.cos(phase) * normal
    if bounds.v0 is not None:
        v[0] = bounds.v0
    if bounds.vF is not None:
        v[-1] = bounds.vF
    return LocalPoint(q=q[1:-1], v=v)


def random_init(
    bounds: DiscreteBoundaries,
    seed: int,
    vmin: float = 5.0,
    vmax: Optional[float] = None,
    n_waypoints: int = 6,
    extent: float = 400.0,
) -> LocalPoint:
    """Cubic spline through seeded random waypoints; speeds clipped to ``[vmin, vmax]``."""
    rng = np.random.default_rng(seed)
    vmax = bounds.Vmax if vmax is None and bounds.Vmax is not None else (vmax or 100.0)
    N, dt = bounds.N, bounds.dt
    T = (N + 1) * dt
    knots_t = np.linspace(0.0, T, n_waypoints)
    pts = rng.uniform(-extent, extent, size=(n_waypoints, 2))
    if bounds.q0 is not None:
        pts[0] = bounds.q0
    if bounds.qF is not None:
        pts[-1] = bounds.qF
    spline = CubicSpline(knots_t, pts, axis=0)
    t = dt * np.arange(N + 2)
    q = spline(t)
    v = spline(t, 1)
    speed = np.linalg.norm(v, axis=1, keepdims=True)
    v = v / np.maximum(speed, 1e-12) * np.clip(speed, vmin, vmax)
    return LocalPoint(q=q[1:-1], v=v)
