"""Command-line front end: closed-form designs, trajectory optimisation and
reproduction of the reference comparison tables.

    uavee analyze   --config cfg.json --design circular
    uavee optimize  --config cfg.json --mode ee --init direct
    uavee reproduce table1 --jobs 2

Outputs go to ``--out`` (default ``$UAVEE_OUT`` or ``./uavee-out``).  Exit
codes: 0 success, 1 a reproduced value is outside its tolerance or the
optimiser failed, 2 bad input (unreadable config, invalid fields, infeasible
boundaries).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from uavee import analytic, comm, sco
from uavee.convex_inner import InfeasibleSubproblemError
from uavee.scenario import (
    SPEED_GUARD,
    AircraftParams,
    DesignMetrics,
    DiscreteTrajectory,
    LinkParams,
    ScenarioError,
    SolverSettings,
    TrajectoryConstraints,
    load_scenario,
    load_scenario_file,
    metrics,
)

log = logging.getLogger("uavee")

OUT_ENV = "UAVEE_OUT"
EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT = 0, 1, 2

TRAJECTORY_COLUMNS = ["n", "t_s", "x_m", "y_m", "vx_mps", "vy_mps", "ax_mps2", "ay_mps2", "rate_bps", "power_w"]
ITERATION_COLUMNS = ["iter", "ee_lb", "ee_energy_ub", "ee_exact", "objective", "kkt_residual", "inner_iters", "wall_time"]


class InputError(Exception):
    pass


# --- artifacts ---------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def slot_drag_power(traj: DiscreteTrajectory, ac: AircraftParams) -> np.ndarray:
    """Drag power for every slot ``0..N+1``; ``inf`` where the speed guard trips."""
    speed = np.linalg.norm(traj.v, axis=1)
    a_sq = np.sum(traj.a**2, axis=1)
    safe = np.maximum(speed, SPEED_GUARD)
    a_par = np.sum(traj.a * traj.v, axis=1) / safe
    lateral_sq = np.maximum(0.0, a_sq - a_par**2)
    power = ac.c1 * speed**3 + ac.c2 / safe * (1.0 + lateral_sq / ac.g**2)
    return np.where(speed < SPEED_GUARD, np.inf, power)


def write_trajectory_csv(path, traj: DiscreteTrajectory, link: LinkParams, ac: AircraftParams) -> Path:
    path = Path(path)
    rate = comm.instantaneous_rate(traj.q, link)
    power = slot_drag_power(traj, ac)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for n in range(traj.N + 2):
            w.writerow(
                [n, _fmt(n * traj.dt), *map(_fmt, traj.q[n]), *map(_fmt, traj.v[n]), *map(_fmt, traj.a[n]),
                 _fmt(rate[n]), _fmt(power[n])]
            )
    return path


def read_trajectory_csv(path, tol: float = 1e-6) -> DiscreteTrajectory:
    """Load a trajectory CSV; raises ``ScenarioError`` unless it is dynamics-consistent."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRAJECTORY_COLUMNS:
        raise ScenarioError(f"{path}: header must be {','.join(TRAJECTORY_COLUMNS)}")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    if data.shape[0] < 3:
        raise ScenarioError(f"{path}: need at least 3 slots")
    dt = float(data[1, 1] - data[0, 1])
    traj = DiscreteTrajectory(dt=dt, q=data[:, 2:4], v=data[:, 4:6], a=data[:, 6:8], tol=tol)
    if not traj.is_dynamics_consistent():
        raise ScenarioError(f"{path}: trajectory is not dynamics-consistent (residuals %.3g, %.3g)" % traj.dynamics_residuals())
    return traj


def write_iterations_csv(path, result: sco.SCOResult) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ITERATION_COLUMNS)
        for it in result.iterates:
            w.writerow(
                [it.iteration, _fmt(it.ee_lb), _fmt(it.ee_energy_ub), _fmt(it.ee_exact), _fmt(it.objective),
                 _fmt(it.kkt_residual), it.inner_iters, _fmt(it.wall_time)]
            )
    return path


def _json_safe(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def format_metrics(m: DesignMetrics) -> str:
    power = "divergent (hovering)" if m.power_divergent else f"{m.avg_power:.2f} W"
    lines = [
        f"  avg speed     {m.avg_speed:10.3f} m/s",
        f"  avg accel     {m.avg_accel:10.3f} m/s^2",
        f"  avg rate      {m.avg_rate / 1e6:10.4f} Mbps",
        f"  avg power     {power:>10}",
        f"  efficiency    {m.energy_efficiency / 1e3:10.3f} kbit/J",
    ]
    if m.thrust_reversal:
        lines.append("  note: thrust reversal in at least one slot (power model outside its validity range)")
    return "\n".join(lines)


# --- scenario helpers ----------------------------------------------------------


def bundled_config(name: str) -> str:
    return resources.files("uavee").joinpath("configs", f"{name}.json").read_text()


def _load(path: str):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    try:
        return load_scenario_file(p)
    except ScenarioError as exc:
        raise InputError(f"{p}: {exc}") from None


def _out_dir(arg: Optional[str]) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV) or "uavee-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _slots(cons: TrajectoryConstraints, dt: float) -> int:
    N = int(round(cons.T / dt)) - 1
    if N < 1:
        raise InputError(f"T={cons.T} with dt={dt} leaves no interior slots")
    return N


# --- designs -------------------------------------------------------------------


def analyze(design: str, ac, link, cons, dt: float):
    """Closed-form metrics and a materialised trajectory for one benchmark design."""
    T = cons.T
    if design == "hover":
        m = analytic.hover_design(link, T)
        return m, analytic.materialize_hover(T, dt), {}
    if design == "straight":
        m = analytic.straight_em_design(link, ac, T)
        traj = analytic.materialize_straight(analytic.energy_min_speed(ac), T, dt)
        quad_bits = comm.trajectory_throughput(traj, link)
        return m, traj, {"quadrature_bits": quad_bits, "closed_form_bits": m.total_bits}
    if design == "circular":
        d = analytic.circular_ee_optimize(link, ac)
        traj = analytic.materialize_circle(d.r, d.V, dt, _slots(cons, dt))
        return d.metrics(), traj, {"radius_m": d.r}
    raise InputError(f"unknown design {design!r}")


def choose_init(name: Optional[str], bounds, link, ac, settings: SolverSettings) -> sco.LocalPoint:
    if name is None:
        name = "circular" if bounds.q0 is None and bounds.qF is None else "direct"
    if name == "circular":
        return sco.LocalPoint.from_trajectory(sco.circular_init(bounds, link, ac))
    if name == "direct":
        try:
            return sco.direct_init(bounds, lateral=settings.init_lateral)
        except ScenarioError as exc:
            raise InputError(str(exc)) from None
    if name == "random":
        return sco.random_init(bounds, seed=settings.seed)
    raise InputError(f"unknown init {name!r}")


def optimize(mode: str, ac, link, cons, settings: SolverSettings, init: Optional[str] = None) -> sco.SCOResult:
    bounds = sco.discretize_constraints(cons, settings.dt, m=ac.m)
    lp = choose_init(init or settings.init, bounds, link, ac, settings)
    return sco.run_algorithm1(lp, bounds, link, ac, settings, mode=mode)


# --- reproduction tables -------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    row: str
    quantity: str
    computed: float
    reference: float
    rel_tol: Optional[float] = None  # None: reported, not checked
    abs_tol: Optional[float] = None

    @property
    def delta(self) -> float:
        if math.isinf(self.reference) and math.isinf(self.computed):
            return 0.0
        if self.reference == 0:
            return abs(self.computed)
        return (self.computed - self.reference) / abs(self.reference)

    @property
    def checked(self) -> bool:
        return self.rel_tol is not None or self.abs_tol is not None

    @property
    def ok(self) -> bool:
        if self.abs_tol is not None and abs(self.computed - self.reference) > self.abs_tol:
            return False
        if self.rel_tol is not None and not (abs(self.delta) <= self.rel_tol):
            return False
        return True


# Reference rows: (speed m/s, accel m/s^2, rate Mbps, power W, EE kbit/J)
TABLE1_REFERENCE = {
    "rate-max (hover)": (0.0, 0.0, 9.97, math.inf, 0.0),
    "energy-min (straight)": (30.0, 0.0, 6.06, 100.0, 60.6),
    "EE-max circular": (25.20, 4.02, 8.16, 119.10, 68.56),
    "EE-max optimised": (25.67, 3.24, 8.34, 116.02, 71.89),
}
TABLE2_REFERENCE = {
    "rate": (8.40, 3.74, 9.56, 585.66, 16.32),
    "energy": (29.61, 1.10, 2.01, 102.74, 19.60),
    "ee": (26.03, 3.21, 7.48, 118.57, 63.08),
}
_QUANTITIES = ("speed", "accel", "rate", "power", "EE")


def _row_cells(row: str, m: DesignMetrics, ref, tols: dict) -> list[Cell]:
    values = (m.avg_speed, m.avg_accel, m.avg_rate / 1e6, m.avg_power, m.energy_efficiency / 1e3)
    return [Cell(row, q, float(v), r, rel_tol=tols.get(q)) for q, v, r in zip(_QUANTITIES, values, ref)]


def reproduce_table1(out: Path, jobs: int = 1) -> list[Cell]:
    ac, link, cons, settings = load_scenario(bundled_config("table1"))
    T = cons.T
    hover = analytic.hover_design(link, T)
    straight = analytic.straight_em_design(link, ac, T)
    circle = analytic.circular_ee_optimize(link, ac)
    quad = analytic.materialize_straight(analytic.energy_min_speed(ac), T, min(settings.dt, 0.1))
    quad_bits = comm.trajectory_throughput(quad, link)

    res = optimize("ee", ac, link, cons, settings, init="circular")
    write_iterations_csv(out / "table1_sco_iterations.csv", res)
    write_trajectory_csv(out / "table1_sco_trajectory.csv", res.final.trajectory, link, ac)
    write_trajectory_csv(
        out / "table1_circular_trajectory.csv",
        analytic.materialize_circle(circle.r, circle.V, settings.dt, _slots(cons, settings.dt)),
        link, ac,
    )

    ref = TABLE1_REFERENCE
    cells = []
    cells += _row_cells("rate-max (hover)", hover, ref["rate-max (hover)"], {"rate": 0.005})
    cells[-1] = replace(cells[-1], abs_tol=0.0)  # EE is exactly zero
    cells += _row_cells("energy-min (straight)", straight, ref["energy-min (straight)"], {"rate": 0.01, "power": 0.001, "EE": 0.01})
    cells.append(Cell("energy-min (straight)", "quadrature/closed", quad_bits / straight.total_bits, 1.0, rel_tol=1e-4))
    cells += _row_cells(
        "EE-max circular", circle.metrics(), ref["EE-max circular"],
        {"speed": 0.005, "rate": 0.005, "power": 0.005, "EE": 0.01},
    )
    cells.append(Cell("EE-max circular", "radius", circle.r, 158.0, abs_tol=1.0))
    cells += _row_cells("EE-max optimised", res.final.metrics, ref["EE-max optimised"], {"EE": 0.05})
    lbs = [it.ee_lb for it in res.iterates]
    drops = max([lbs[i] - lbs[i + 1] for i in range(len(lbs) - 1)], default=0.0)
    cells.append(Cell("EE-max optimised", "ee_lb max drop", max(drops, 0.0), 0.0, abs_tol=10 * settings.inner_tol * max(lbs)))
    return cells


def reproduce_table2(out: Path, jobs: int = 1) -> list[Cell]:
    ac, link, cons, settings = load_scenario(bundled_config("table2"))
    modes = ("rate", "energy", "ee")
    tols = {"rate": {"rate": 0.05}, "energy": {"power": 0.05}, "ee": {"EE": 0.10}}

    def run(mode):
        res = optimize(mode, ac, link, cons, settings, init="direct")
        write_iterations_csv(out / f"table2_{mode}_iterations.csv", res)
        write_trajectory_csv(out / f"table2_{mode}_trajectory.csv", res.final.trajectory, link, ac)
        return res

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = dict(zip(modes, pool.map(run, modes)))
    cells = []
    for mode in modes:
        cells += _row_cells(f"{mode}-max" if mode != "energy" else "energy-min", results[mode].final.metrics,
                            TABLE2_REFERENCE[mode], tols[mode])
    return cells


def format_cells(cells: list[Cell]) -> str:
    lines = [f"{'design':24s} {'quantity':18s} {'computed':>12s} {'reference':>12s} {'delta':>9s}  check"]
    for c in cells:
        status = ("ok" if c.ok else "FAIL") if c.checked else "-"
        lines.append(f"{c.row:24s} {c.quantity:18s} {c.computed:12.5g} {c.reference:12.5g} {c.delta:+9.2%}  {status}")
    return "\n".join(lines)


# --- commands ------------------------------------------------------------------


def cmd_analyze(args) -> int:
    ac, link, cons, settings = _load(args.config)
    dt = args.dt or settings.dt
    m, traj, extra = analyze(args.design, ac, link, cons, dt)
    out = _out_dir(args.out)
    print(f"design: {args.design}")
    if "radius_m" in extra:
        print(f"  radius        {extra['radius_m']:10.3f} m")
    print(format_metrics(m))
    if m.power_divergent:
        print("  note: zero speed makes the propulsion power unbounded; efficiency is reported as 0")
    discrete = metrics(traj, link, ac, include_kinetic=False)
    write_trajectory_csv(out / f"{args.design}_trajectory.csv", traj, link, ac)
    write_json(
        out / f"{args.design}_metrics.json",
        {"design": args.design, "closed_form": _json_safe(m.as_dict()), "discrete": _json_safe(discrete.as_dict()),
         **extra},
    )
    return EXIT_OK


def cmd_optimize(args) -> int:
    ac, link, cons, settings = _load(args.config)
    overrides = {k: v for k, v in (("dt", args.dt), ("seed", args.seed)) if v is not None}
    try:
        settings = replace(settings, **overrides)
    except ScenarioError as exc:
        raise InputError(str(exc)) from None
    out = _out_dir(args.out)
    try:
        res = optimize(args.mode, ac, link, cons, settings, init=args.init)
    except sco.SCOError as exc:
        if isinstance(exc.cause, InfeasibleSubproblemError):
            raise InputError(f"infeasible boundaries or caps: {exc}") from None
        report = getattr(exc.cause, "report", None)
        print(f"optimisation failed at outer iteration {exc.iteration}: {exc}", file=sys.stderr)
        if report is not None:
            print(f"  last residuals: {report}", file=sys.stderr)
        return EXIT_TOLERANCE
    final = res.final
    write_iterations_csv(Path(args.log) if args.log else out / "iterations.csv", res)
    write_trajectory_csv(out / "trajectory.csv", final.trajectory, link, ac)
    write_json(
        out / "metrics.json",
        {"mode": args.mode, "converged": res.converged, "iterations": len(res.iterates),
         "metrics": _json_safe(final.metrics.as_dict()), "ee_lb": final.ee_lb, "kkt_residual": final.kkt_residual},
    )
    print(f"mode: {args.mode}  iterations: {len(res.iterates)}  converged: {res.converged}")
    print(format_metrics(final.metrics))
    if not res.converged:
        print(f"  note: stopped at the iteration cap ({settings.max_iters})")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out = _out_dir(args.out)
    fn = {"table1": reproduce_table1, "table2": reproduce_table2}[args.table]
    cells = fn(out, jobs=args.jobs)
    print(format_cells(cells))
    write_json(
        out / f"{args.table}_comparison.json",
        {"cells": [_json_safe({"row": c.row, "quantity": c.quantity, "computed": c.computed,
                               "reference": c.reference, "delta": c.delta, "checked": c.checked, "ok": c.ok})
                   for c in cells]},
    )
    failed = [c for c in cells if c.checked and not c.ok]
    if failed:
        print(f"{len(failed)} cell(s) outside tolerance", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavee", description="Energy-efficient UAV trajectory design")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./uavee-out)")

    a = sub.add_parser("analyze", help="closed-form benchmark designs")
    a.add_argument("--config", required=True)
    a.add_argument("--design", choices=("hover", "straight", "circular"), default="circular")
    a.add_argument("--dt", type=float, help="slot length for the emitted trajectory")
    common(a)
    a.set_defaults(func=cmd_analyze)

    o = sub.add_parser("optimize", help="sequential convex trajectory optimisation")
    o.add_argument("--config", required=True)
    o.add_argument("--mode", choices=("ee", "rate", "energy"), default="ee")
    o.add_argument("--init", choices=("circular", "direct", "random"))
    o.add_argument("--seed", type=int)
    o.add_argument("--dt", type=float)
    o.add_argument("--log", help="iteration CSV path (default OUT/iterations.csv)")
    common(o)
    o.set_defaults(func=cmd_optimize)

    r = sub.add_parser("reproduce", help="rerun a reference table and compare")
    r.add_argument("table", choices=("table1", "table2"))
    r.add_argument("--jobs", type=int, default=1, help="parallel optimisation runs")
    common(r)
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
