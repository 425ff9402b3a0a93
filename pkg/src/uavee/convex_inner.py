"""Parametric convex subproblem behind the fractional solvers.

For a local point and a weight ``lam`` this maximises

    sum_n [alpha_n - beta_n (|q_n|^2 - |q_j,n|^2)]
        - lam * (sum_n [c1 |v_n|^3 + c2 / tau_n + c2 |a_n|^2 / (g^2 tau_n)] + dK / dt)

over the discrete double-integrator trajectory, subject to boundary states,
speed/acceleration caps, ``tau_n >= floor`` and the linearised speed
constraint ``tau_n^2 <= 2 v_j,n . v_n - |v_j,n|^2``.  The numerator is kept in
bit/s/Hz so ``lam`` is in bit/J/Hz.  The problem is modelled with cvxpy and
solved by Clarabel; ``check_kkt`` certifies a candidate against the natural
(un-lifted) form of the problem independently of the backend.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import cvxpy as cp
import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear
from scipy.sparse.linalg import splu

from uavee.scenario import AircraftParams, DiscreteTrajectory

log = logging.getLogger(__name__)

MODES = ("ee", "rate", "energy")
_NATURAL_FAMILIES = ("vmax", "amax", "floor", "psi")


class InnerSolverError(RuntimeError):
    def __init__(self, message: str, status: str = "", report: Optional["KKTReport"] = None):
        super().__init__(message)
        self.status = status
        self.report = report


class InfeasibleSubproblemError(InnerSolverError):
    pass


@dataclass(frozen=True)
class DiscreteBoundaries:
    """Slot-level boundary data: slots 0 and N+1 carry the boundary states."""

    N: int
    dt: float
    q0: Optional[np.ndarray] = None
    qF: Optional[np.ndarray] = None
    v0: Optional[np.ndarray] = None
    vF: Optional[np.ndarray] = None
    Vmax: Optional[float] = None
    amax: Optional[float] = None
    delta_k: float = 0.0

    @property
    def pin_initial_accel(self) -> bool:
        # with a free initial state a[0] never reaches the objective; pin it
        return self.q0 is None and self.v0 is None


@dataclass(frozen=True)
class ConvexSubproblem:
    bounds: DiscreteBoundaries
    ac: AircraftParams
    q_j: np.ndarray  # (N, 2) interior positions of the local point
    v_j: np.ndarray  # (N, 2) interior velocities of the local point
    alpha: np.ndarray
    beta: np.ndarray
    lam: float = 0.0
    mode: str = "ee"
    speed_floor: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    @property
    def uses_tau(self) -> bool:
        return self.mode != "rate"

    @property
    def numerator_constant(self) -> float:
        return float(np.sum(self.alpha + self.beta * np.sum(self.q_j**2, axis=1)))

    def numerator(self, q_int: np.ndarray) -> float:
        return self.numerator_constant - float(np.sum(self.beta * np.sum(q_int**2, axis=1)))

    def denominator(self, v_int: np.ndarray, a_int: np.ndarray, tau: np.ndarray) -> float:
        ac, b = self.ac, self.bounds
        speed = np.linalg.norm(v_int, axis=1)
        a_sq = np.sum(a_int**2, axis=1)
        return float(
            np.sum(ac.c1 * speed**3 + ac.c2 / tau + ac.c2 * a_sq / (ac.g**2 * tau)) + b.delta_k / b.dt
        )


@dataclass
class InnerSolution:
    q: np.ndarray
    v: np.ndarray
    a: np.ndarray  # (N+1, 2): a[0..N]
    tau: Optional[np.ndarray]
    num: float
    den: float
    objective: float
    status: str = "optimal"
    iterations: int = 0
    solve_time: float = 0.0
    duals: Optional[dict] = None
    kkt: Optional["KKTReport"] = None

    def trajectory(self, dt: float) -> DiscreteTrajectory:
        a_full = np.vstack([self.a, np.zeros((1, 2))])
        return DiscreteTrajectory(dt=dt, q=self.q, v=self.v, a=a_full)

    @property
    def ratio(self) -> float:
        return self.num / self.den


@dataclass(frozen=True)
class KKTReport:
    primal: float
    dual: float
    complementarity: float
    stationarity: float
    details: dict = field(default_factory=dict)

    @property
    def max(self) -> float:
        return max(self.primal, self.dual, self.complementarity, self.stationarity)


class InnerSolver:
    """Compiled cvxpy model for one boundary/cap structure; parameters are
    swapped between solves so the model is canonicalised once.

    Variables are scaled to order one before modelling (``q = L q~``,
    ``v = S v~``, ``a = A a~``); without this Clarabel's scaled stopping test
    can accept points whose unscaled objective is visibly suboptimal.  The
    scales default to values taken from the first subproblem solved.
    """

    def __init__(
        self,
        bounds: DiscreteBoundaries,
        ac: AircraftParams,
        mode: str = "ee",
        speed_floor: float = 0.1,
        scales: Optional[tuple[float, float, float]] = None,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.bounds, self.ac, self.mode, self.speed_floor = bounds, ac, mode, speed_floor
        self.scales = None
        self.problem = None
        self.polish = True
        if scales is not None:
            self._build(*scales)

    @staticmethod
    def default_scales(sub: ConvexSubproblem) -> tuple[float, float, float]:
        b = sub.bounds
        pts = [np.abs(np.asarray(sub.q_j)).max(initial=0.0)]
        pts += [np.abs(x).max() for x in (b.q0, b.qF) if x is not None]
        speeds = [float(np.sqrt(np.mean(np.sum(np.asarray(sub.v_j) ** 2, axis=1)))), 1.0]
        speeds += [float(np.linalg.norm(x)) for x in (b.v0, b.vF) if x is not None]
        S = max(speeds)
        L = max(max(pts), S * b.dt, 1.0)
        # a poor local point can give a tiny centripetal scale; g bounds it below
        return L, S, max(S**2 / L, 0.1 * sub.ac.g)

    def _build(self, L: float, S: float, A: float):
        self.scales = (L, S, A)
        bounds, ac, mode, speed_floor = self.bounds, self.ac, self.mode, self.speed_floor
        N, dt = bounds.N, bounds.dt
        self.q = q = cp.Variable((N + 2, 2), name="q")
        self.v = v = cp.Variable((N + 2, 2), name="v")
        self.a = a = cp.Variable((N + 1, 2), name="a")
        self.beta = cp.Parameter(N, nonneg=True, name="beta")
        self.lam = cp.Parameter(nonneg=True, name="lam")
        self.vj = cp.Parameter((N, 2), name="vj")
        self.vj_sq = cp.Parameter(N, name="vj_sq")

        c = self.constraints = {}
        c["dyn_q"] = q[1:] == q[:-1] + (dt * S / L) * v[:-1] + (0.5 * dt**2 * A / L) * a
        c["dyn_v"] = v[1:] == v[:-1] + (dt * A / S) * a
        for name, var, row, unit in (("q0", q, 0, L), ("qF", q, N + 1, L), ("v0", v, 0, S), ("vF", v, N + 1, S)):
            val = getattr(bounds, name)
            if val is not None:
                c[name] = var[row] == np.asarray(val) / unit
        if bounds.pin_initial_accel:
            c["a_pin"] = a[0] == 0
        v_int, a_int, q_int = v[1 : N + 1], a[1:], q[1 : N + 1]
        if bounds.Vmax is not None:
            c["vmax"] = cp.sum(cp.square(v_int), axis=1) <= (bounds.Vmax / S) ** 2
        if bounds.amax is not None:
            c["amax"] = cp.sum(cp.square(a), axis=1) <= (bounds.amax / A) ** 2

        # beta is passed pre-multiplied by L^2, vj divided by S
        num_var = -cp.sum(cp.multiply(self.beta, cp.sum(cp.square(q_int), axis=1)))
        self.tau = None
        if mode != "rate":
            self.tau = tau = cp.Variable(N, name="tau")
            s = cp.Variable(N, name="s")  # epigraph of |a~|^2 / tau~
            c["floor"] = tau >= speed_floor / S
            c["psi"] = cp.square(tau) <= 2 * cp.sum(cp.multiply(self.vj, v_int), axis=1) - self.vj_sq
            c["quad_over_lin"] = cp.SOC(s + tau, cp.vstack([2 * a_int.T, cp.reshape(s - tau, (1, N), order="F")]), axis=0)
            den_var = (
                ac.c1 * S**3 * cp.sum(cp.power(cp.norm(v_int, 2, axis=1), 3))
                + ac.c2 / S * cp.sum(cp.inv_pos(tau))
                + ac.c2 * A**2 / (S * ac.g**2) * cp.sum(s)
                + bounds.delta_k / dt
            )
        if mode == "ee":
            obj = cp.Maximize((num_var - self.lam * den_var) / N)
        elif mode == "rate":
            obj = cp.Maximize(num_var / N)
        else:
            obj = cp.Minimize(den_var / N)
        self.problem = cp.Problem(obj, list(c.values()))

    def solve(self, sub: ConvexSubproblem, tol: float = 1e-8, max_iter: int = 200, check: bool = True) -> InnerSolution:
        b = self.bounds
        if sub.mode != self.mode or sub.bounds is not b and sub.bounds != b:
            raise ValueError("subproblem structure does not match this solver")
        if self.problem is None:
            self._build(*self.default_scales(sub))
        L, S, A = self.scales
        self.beta.value = np.asarray(sub.beta, dtype=float) * L**2
        self.lam.value = float(sub.lam)
        self.vj.value = np.asarray(sub.v_j, dtype=float) / S
        self.vj_sq.value = np.sum(np.asarray(sub.v_j) ** 2, axis=1) / S**2
        t0 = time.perf_counter()
        try:
            self.problem.solve(
                solver=cp.CLARABEL,
                tol_gap_abs=tol,
                tol_gap_rel=tol,
                tol_feas=tol,
                tol_ktratio=tol * 1e-2,
                max_iter=max_iter,
            )
        except cp.SolverError as exc:
            raise InnerSolverError(f"inner solver failed: {exc}", status="solver_error") from exc
        elapsed = time.perf_counter() - t0
        status = self.problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleSubproblemError("subproblem is infeasible for these boundaries/caps", status=status)
        if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE) or self.q.value is None:
            raise InnerSolverError(f"inner solver returned status {status}", status=status)
        q, v, a = self.q.value * L, self.v.value * S, self.a.value * A
        tau = None if self.tau is None else self.tau.value * S
        # multipliers of the scaled constraints, mapped back to natural units
        unit = {"vmax": S**2, "amax": A**2, "floor": S, "psi": S**2}
        duals = {
            k: None if con.dual_value is None else np.array(con.dual_value, dtype=float) / unit[k]
            for k, con in self.constraints.items()
            if k in _NATURAL_FAMILIES
        }
        stats = self.problem.solver_stats
        sol = _finish(
            InnerSolution(
                q=q, v=v, a=a, tau=tau, num=0.0, den=0.0, objective=0.0, status=status,
                iterations=int(stats.num_iters or 0), solve_time=elapsed, duals=duals,
            ),
            sub,
        )
        if self.polish:
            sol = polish(sol, sub)
        if check and sol.kkt is None:
            sol.kkt = check_kkt(sol, sub)
        if status == cp.OPTIMAL_INACCURATE:
            log.warning("inner solve inaccurate; KKT residual %.3g", sol.kkt.max if sol.kkt else float("nan"))
        return sol


def _finish(sol: InnerSolution, sub: ConvexSubproblem) -> InnerSolution:
    """Fill numerator, denominator and objective from the primal values."""
    N = sub.bounds.N
    v_int, a_int = sol.v[1 : N + 1], sol.a[1:]
    sol.num = sub.numerator(sol.q[1 : N + 1])
    if sol.tau is not None:
        sol.den = sub.denominator(v_int, a_int, sol.tau)
    else:
        speed = np.linalg.norm(v_int, axis=1)
        sol.den = sub.denominator(v_int, a_int, speed) if np.all(speed > 1e-6) else np.inf
    sol.objective = {"ee": sol.num - sub.lam * sol.den, "rate": sol.num, "energy": sol.den}[sub.mode]
    return sol


def solve(sub: ConvexSubproblem, tol: float = 1e-8, solver: Optional[InnerSolver] = None) -> InnerSolution:
    """Solve one parametric subproblem; pass ``solver`` to reuse a compiled model."""
    if solver is None:
        solver = InnerSolver(sub.bounds, sub.ac, sub.mode, sub.speed_floor)
    return solver.solve(sub, tol=tol)


# --- KKT certificate on the natural problem form ---------------------------


class _Layout:
    def __init__(self, N: int, with_tau: bool):
        self.N = N
        self.nq = 2 * (N + 2)
        self.na = 2 * (N + 1)
        self.q0 = 0
        self.v0 = self.nq
        self.a0 = 2 * self.nq
        self.t0 = 2 * self.nq + self.na
        self.n = self.t0 + (N if with_tau else 0)

    def q(self, n, k):
        return self.q0 + 2 * n + k

    def v(self, n, k):
        return self.v0 + 2 * n + k

    def a(self, n, k):
        return self.a0 + 2 * n + k

    def tau(self, n):  # n = 1..N
        return self.t0 + n - 1


def _equalities(sub: ConvexSubproblem, L: _Layout):
    b = sub.bounds
    N, dt = b.N, b.dt
    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for n in range(N + 1):
        for k in range(2):
            for col, val in ((L.q(n + 1, k), 1.0), (L.q(n, k), -1.0), (L.v(n, k), -dt), (L.a(n, k), -0.5 * dt**2)):
                rows.append(r), cols.append(col), vals.append(val)
            rhs.append(0.0)
            r += 1
            for col, val in ((L.v(n + 1, k), 1.0), (L.v(n, k), -1.0), (L.a(n, k), -dt)):
                rows.append(r), cols.append(col), vals.append(val)
            rhs.append(0.0)
            r += 1
    fixes = [("q0", L.q, 0), ("qF", L.q, N + 1), ("v0", L.v, 0), ("vF", L.v, N + 1)]
    for name, idx, slot in fixes:
        val = getattr(b, name)
        if val is None:
            continue
        for k in range(2):
            rows.append(r), cols.append(idx(slot, k)), vals.append(1.0)
            rhs.append(float(val[k]))
            r += 1
    if b.pin_initial_accel:
        for k in range(2):
            rows.append(r), cols.append(L.a(0, k)), vals.append(1.0)
            rhs.append(0.0)
            r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, L.n))
    return A, np.array(rhs)


def _pack(sol: InnerSolution, L: _Layout) -> np.ndarray:
    x = np.zeros(L.n)
    x[L.q0 : L.q0 + L.nq] = sol.q.ravel()
    x[L.v0 : L.v0 + L.nq] = sol.v.ravel()
    x[L.a0 : L.a0 + L.na] = sol.a.ravel()
    if L.n > L.t0:
        x[L.t0 :] = sol.tau
    return x


def _objective_gradient(sol: InnerSolution, sub: ConvexSubproblem, L: _Layout):
    """Gradient of the maximised objective and the magnitude of its parts."""
    ac, N = sub.ac, sub.bounds.N
    grad = np.zeros(L.n)
    q_int, v_int, a_int = sol.q[1 : N + 1], sol.v[1 : N + 1], sol.a[1:]
    w_num = 1.0 if sub.mode in ("ee", "rate") else 0.0
    w_den = {"ee": sub.lam, "rate": 0.0, "energy": 1.0}[sub.mode]
    g_q = -2.0 * w_num * sub.beta[:, None] * q_int
    speed = np.linalg.norm(v_int, axis=1)
    g_v = -w_den * 3.0 * ac.c1 * speed[:, None] * v_int
    grad[L.q(1, 0) : L.q(N, 1) + 1] = g_q.ravel() / N
    grad[L.v(1, 0) : L.v(N, 1) + 1] = g_v.ravel() / N
    scale = abs(sub.numerator(q_int)) * w_num
    if sub.uses_tau:
        tau = sol.tau
        a_sq = np.sum(a_int**2, axis=1)
        g_a = -w_den * 2.0 * ac.c2 / ac.g**2 * a_int / tau[:, None]
        g_t = w_den * ac.c2 * (1.0 + a_sq / ac.g**2) / tau**2
        grad[L.a(1, 0) : L.a(N, 1) + 1] = g_a.ravel() / N
        grad[L.t0 :] = g_t / N
        scale = max(scale, w_den * abs(sub.denominator(v_int, a_int, tau)))
    return grad, scale / N


def _inequalities(sol: InnerSolution, sub: ConvexSubproblem, L: _Layout):
    """Natural-form inequality families: name -> (g values, sparse Jacobian, rhs scale)."""
    b, N = sub.bounds, sub.bounds.N
    fam = {}

    def jac(entries, m):
        rows, cols, vals = zip(*entries) if entries else ((), (), ())
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, L.n))

    if b.Vmax is not None:
        v_int = sol.v[1 : N + 1]
        g = np.sum(v_int**2, axis=1) - b.Vmax**2
        ent = [(i, L.v(i + 1, k), 2 * v_int[i, k]) for i in range(N) for k in range(2)]
        fam["vmax"] = (g, jac(ent, N), b.Vmax**2)
    if b.amax is not None:
        g = np.sum(sol.a**2, axis=1) - b.amax**2
        ent = [(i, L.a(i, k), 2 * sol.a[i, k]) for i in range(N + 1) for k in range(2)]
        fam["amax"] = (g, jac(ent, N + 1), b.amax**2)
    if sub.uses_tau:
        tau = sol.tau
        g = sub.speed_floor - tau
        fam["floor"] = (g, jac([(i, L.tau(i + 1), -1.0) for i in range(N)], N), sub.speed_floor)
        vj = np.asarray(sub.v_j)
        v_int = sol.v[1 : N + 1]
        vj_sq = np.sum(vj**2, axis=1)
        g = tau**2 - 2 * np.sum(vj * v_int, axis=1) + vj_sq
        ent = [(i, L.tau(i + 1), 2 * tau[i]) for i in range(N)]
        ent += [(i, L.v(i + 1, k), -2 * vj[i, k]) for i in range(N) for k in range(2)]
        fam["psi"] = (g, jac(ent, N), np.maximum(vj_sq, 1.0))
    return fam


def check_kkt(sol: InnerSolution, sub: ConvexSubproblem, active_tol: float = 1e-6) -> KKTReport:
    """Primal/dual feasibility, complementarity and stationarity residuals.

    Inequality multipliers are taken from ``sol.duals`` when present, otherwise
    fitted by bounded least squares over the (nearly) active constraints.
    Equality multipliers are always refitted by least squares, so the
    stationarity number is the smallest residual any multiplier could give.
    """
    N = sub.bounds.N
    L = _Layout(N, sub.uses_tau)
    x = _pack(sol, L)
    A, rhs = _equalities(sub, L)
    grad, obj_scale = _objective_gradient(sol, sub, L)
    fam = _inequalities(sol, sub, L)

    eq_res = np.abs(A @ x - rhs) / (1.0 + np.abs(rhs))
    primal = float(eq_res.max(initial=0.0))
    for g, _, s in fam.values():
        primal = max(primal, float(np.max(np.maximum(g, 0.0) / (1.0 + s), initial=0.0)))

    names = list(fam)
    duals = sol.duals
    have_duals = duals is not None and all(duals.get(k) is not None for k in names)
    if have_duals:
        mus = {k: np.asarray(duals[k], dtype=float).ravel() for k in names}
    else:
        mus = _fit_multipliers(grad, A, fam, active_tol)

    J_mu = np.zeros(L.n)
    dual = 0.0
    comp = 0.0
    for k in names:
        g, J, s = fam[k]
        mu = mus[k]
        J_mu += J.T @ mu
        dual = max(dual, float(np.max(np.maximum(-mu, 0.0), initial=0.0)))
        comp = max(comp, float(np.max(np.abs(mu * g), initial=0.0)))
    r0 = grad - J_mu
    AAt = (A @ A.T).tocsc()
    nu = splu(AAt).solve(A @ r0)
    r = r0 - A.T @ nu
    scale = max(float(np.max(np.abs(grad))), float(np.max(np.abs(J_mu), initial=0.0)))
    if scale < 1e-14:
        scale = 1.0
    stationarity = float(np.max(np.abs(r))) / scale
    comp = comp / max(obj_scale, 1e-14)
    dual = dual / scale
    return KKTReport(
        primal=primal,
        dual=dual,
        complementarity=comp,
        stationarity=stationarity,
        details={"multipliers": mus, "fitted": not have_duals},
    )


def _fit_multipliers(grad, A, fam, active_tol):
    blocks, spans, start = [], {}, 0
    for k, (g, J, s) in fam.items():
        active = np.flatnonzero(g >= -active_tol * (1.0 + np.asarray(s) * np.ones_like(g)))
        blocks.append(J[active].T)
        spans[k] = (active, start, start + active.size, g.size)
        start += active.size
    n_mu = start
    M = sp.hstack(blocks + [A.T]).tocsr() if blocks else A.T.tocsr()
    lb = np.concatenate([np.zeros(n_mu), np.full(A.shape[0], -np.inf)])
    ub = np.full(M.shape[1], np.inf)
    if M.shape[0] * M.shape[1] <= 4_000_000:
        res = lsq_linear(M.toarray(), grad, bounds=(lb, ub), method="bvls", tol=1e-14)
    else:
        res = lsq_linear(M, grad, bounds=(lb, ub), tol=1e-14, lsmr_tol=1e-14, max_iter=5000)
    mus = {}
    for k, (active, s0, s1, m) in spans.items():
        mu = np.zeros(m)
        mu[active] = res.x[s0:s1]
        mus[k] = mu
    return mus


# --- active-set Newton polish ----------------------------------------------


def _unpack(x: np.ndarray, L: _Layout) -> tuple:
    N = L.N
    q = x[L.q0 : L.q0 + L.nq].reshape(N + 2, 2)
    v = x[L.v0 : L.v0 + L.nq].reshape(N + 2, 2)
    a = x[L.a0 : L.a0 + L.na].reshape(N + 1, 2)
    tau = x[L.t0 :].copy() if L.n > L.t0 else None
    return q.copy(), v.copy(), a.copy(), tau


def _objective_hessian(sol: InnerSolution, sub: ConvexSubproblem, L: _Layout) -> sp.csr_matrix:
    ac, N = sub.ac, sub.bounds.N
    w_num = 1.0 if sub.mode in ("ee", "rate") else 0.0
    w_den = {"ee": sub.lam, "rate": 0.0, "energy": 1.0}[sub.mode]
    rows, cols, vals = [], [], []

    def put(i, j, val):
        rows.append(i), cols.append(j), vals.append(val / N)

    g2 = ac.g**2
    for n in range(1, N + 1):
        for k in range(2):
            put(L.q(n, k), L.q(n, k), -2.0 * w_num * sub.beta[n - 1])
        vn = sol.v[n]
        speed = max(float(np.linalg.norm(vn)), 1e-12)
        for k in range(2):
            for l in range(2):
                put(L.v(n, k), L.v(n, l), -w_den * 3.0 * ac.c1 * (speed * (k == l) + vn[k] * vn[l] / speed))
        if sub.uses_tau:
            t, an = sol.tau[n - 1], sol.a[n]
            it = L.tau(n)
            for k in range(2):
                put(L.a(n, k), L.a(n, k), -w_den * 2.0 * ac.c2 / (g2 * t))
                put(L.a(n, k), it, w_den * 2.0 * ac.c2 * an[k] / (g2 * t**2))
                put(it, L.a(n, k), w_den * 2.0 * ac.c2 * an[k] / (g2 * t**2))
            put(it, it, -w_den * 2.0 * ac.c2 * (1.0 + float(an @ an) / g2) / t**3)
    return sp.csr_matrix((vals, (rows, cols)), shape=(L.n, L.n))


def _constraint_hessian(mus: dict, sub: ConvexSubproblem, L: _Layout) -> sp.csr_matrix:
    """``sum_i mu_i * Hessian(g_i)`` for the quadratic inequality families."""
    N = sub.bounds.N
    d = np.zeros(L.n)
    if "vmax" in mus:
        for n in range(1, N + 1):
            d[[L.v(n, 0), L.v(n, 1)]] += 2.0 * mus["vmax"][n - 1]
    if "amax" in mus:
        for n in range(N + 1):
            d[[L.a(n, 0), L.a(n, 1)]] += 2.0 * mus["amax"][n]
    if "psi" in mus:
        d[L.t0 :] += 2.0 * mus["psi"]
    return sp.diags(d).tocsr()


def polish(sol: InnerSolution, sub: ConvexSubproblem, max_steps: int = 6) -> InnerSolution:
    """Refine an interior-point solution by Newton steps on the KKT system of
    its active set.  The refined point is kept only if it stays feasible,
    keeps non-negative multipliers and lowers the KKT residual."""
    if not sol.duals or any(val is None for val in sol.duals.values()):
        return sol
    N = sub.bounds.N
    L = _Layout(N, sub.uses_tau)
    A, rhs = _equalities(sub, L)
    grad, _ = _objective_gradient(sol, sub, L)
    gscale = max(float(np.max(np.abs(grad))), 1e-300)
    fam = _inequalities(sol, sub, L)
    active = {}
    for k, (g, _, s) in fam.items():
        mu = np.asarray(sol.duals[k], dtype=float).ravel()
        gn = g / (1.0 + s)
        active[k] = np.flatnonzero(mu * (1.0 + s) / gscale > -gn)
    if sol.kkt is None:
        sol.kkt = check_kkt(sol, sub)
    x = _pack(sol, L)
    mus = {k: np.asarray(sol.duals[k], dtype=float).ravel() * 0.0 for k in fam}
    for k in fam:
        mus[k][active[k]] = np.asarray(sol.duals[k], dtype=float).ravel()[active[k]]
    cur = sol
    try:
        J_act = sp.vstack([fam[k][1][active[k]] for k in fam] + [A]).tocsr() if fam else A
        r0 = grad - sum((fam[k][1].T @ mus[k] for k in fam), np.zeros(L.n))
        nu = splu((A @ A.T).tocsc()).solve(A @ r0)
        y = np.concatenate([mus[k][active[k]] for k in fam] + [nu])
        for _ in range(max_steps):
            grad, _ = _objective_gradient(cur, sub, L)
            fam = _inequalities(cur, sub, L)
            J_act = sp.vstack([fam[k][1][active[k]] for k in fam] + [A]).tocsr()
            c = np.concatenate([fam[k][0][active[k]] for k in fam] + [A @ x - rhs])
            r = grad - J_act.T @ y
            H = _objective_hessian(cur, sub, L) - _constraint_hessian(mus, sub, L)
            delta = 1e-12 * max(float(np.max(np.abs(H.diagonal()))), gscale)
            H = H - delta * sp.identity(L.n)
            m = J_act.shape[0]
            K = sp.bmat([[H, -J_act.T], [J_act, None]]).tocsc()
            step = splu(K).solve(-np.concatenate([r, c]))
            if not np.all(np.isfinite(step)):
                return sol
            x = x + step[: L.n]
            y = y + step[L.n :]
            off = 0
            for k in fam:
                n_act = active[k].size
                mus[k] = np.zeros_like(mus[k])
                mus[k][active[k]] = y[off : off + n_act]
                off += n_act
            q, v, a, tau = _unpack(x, L)
            if tau is not None and np.any(tau <= 0):
                return sol
            cur = _finish(
                InnerSolution(
                    q=q, v=v, a=a, tau=tau, num=0.0, den=0.0, objective=0.0, status=sol.status,
                    iterations=sol.iterations, solve_time=sol.solve_time, duals={k: mu.copy() for k, mu in mus.items()},
                ),
                sub,
            )
            if np.max(np.abs(step[: L.n])) <= 1e-14 * max(1.0, float(np.max(np.abs(x)))):
                break
    except (RuntimeError, ValueError) as exc:  # singular KKT matrix
        log.debug("polish skipped: %s", exc)
        return sol
    for k, (g, _, s) in _inequalities(cur, sub, L).items():
        if np.any(g > 1e-12 * (1.0 + s)) or np.any(mus[k] < 0):
            return sol
    cur.kkt = check_kkt(cur, sub)
    return cur if cur.kkt.max < sol.kkt.max else sol
