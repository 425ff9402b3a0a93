import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavee import analytic, comm, propulsion
from uavee.scenario import (
    AircraftParams,
    DiscreteTrajectory,
    LinkParams,
    ScenarioError,
    SolverSettings,
    TrajectoryConstraints,
    dump_scenario,
    load_scenario,
    metrics,
    parse_scenario,
)

BASE = {
    "aircraft": {"c1": 9.26e-4, "c2": 2250.0},
    "link": {"B_hz": 1e6, "H_m": 100.0, "beta0": 1e-5, "P_tx_w": 0.01, "sigma2_w": 1e-14},
    "constraints": {"T": 60.0},
}


def _cfg(**sections):
    cfg = json.loads(json.dumps(BASE))
    for name, upd in sections.items():
        cfg.setdefault(name, {}).update(upd)
    return cfg


def test_triplet_gives_reference_snr():
    _, link, _, _ = parse_scenario(_cfg())
    assert link.gamma0 == 1e-5 * 0.01 / 1e-14
    assert link.gamma0 == pytest.approx(1e7, rel=1e-12)


def test_db_units_convert_in_loader():
    cfg = _cfg()
    cfg["link"] = {"B_hz": 1e6, "H_m": 100.0, "beta0_db": -50, "P_tx_dbm": 10, "N0_dbm_hz": -170}
    _, link, _, _ = parse_scenario(cfg)
    assert link.gamma0 == pytest.approx(1e7, rel=1e-12)


def test_direct_gamma0_accepted():
    cfg = _cfg()
    cfg["link"] = {"B_hz": 1e6, "H_m": 100.0, "gamma0": 2.5e6}
    assert parse_scenario(cfg)[1].gamma0 == 2.5e6


def test_reference_aero_constants_accepted():
    ac, _, cons, solver = parse_scenario(_cfg())
    assert (ac.c1, ac.c2) == (9.26e-4, 2250.0)
    assert cons.unconstrained
    assert solver == SolverSettings()


@pytest.mark.parametrize("field", ["c1", "c2"])
def test_zero_coefficient_rejected_by_name(field):
    with pytest.raises(ScenarioError, match=field):
        parse_scenario(_cfg(aircraft={field: 0.0}))


def test_missing_field_named():
    cfg = _cfg()
    del cfg["link"]["H_m"]
    with pytest.raises(ScenarioError, match="link.H_m"):
        parse_scenario(cfg)


def test_parse_error_reported():
    with pytest.raises(ScenarioError, match="parse"):
        load_scenario("{not json")


def test_unknown_constraint_key_rejected():
    with pytest.raises(ScenarioError, match="Vmx"):
        parse_scenario(_cfg(constraints={"Vmx": 3}))


def test_unreachable_endpoint_rejected():
    with pytest.raises(ScenarioError, match="unreachable"):
        TrajectoryConstraints(T=10.0, q0=[0, 0], qF=[1001, 0], Vmax=100.0)


def test_boundary_speed_above_cap_rejected():
    with pytest.raises(ScenarioError, match="v0"):
        TrajectoryConstraints(T=10.0, v0=[30, 0], Vmax=20.0)


def test_solver_tolerances_section():
    s = parse_scenario(_cfg(solver={"dt": 0.25, "tolerances": {"inner": 1e-9}, "max_iters": 5, "seed": 3}))[3]
    assert (s.dt, s.inner_tol, s.max_iters, s.seed) == (0.25, 1e-9, 5, 3)
    with pytest.raises(ScenarioError, match="bogus"):
        parse_scenario(_cfg(solver={"bogus": 1}))


def test_zero_bandwidth_type_allowed_loader_refuses():
    assert LinkParams(B=0.0, gamma0=1.0, H=1.0).B == 0.0
    with pytest.raises(ScenarioError, match="B_hz"):
        parse_scenario(_cfg(link={"B_hz": 0.0}))


finite = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False, allow_infinity=False)
coord = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(c1=finite, c2=finite, m=finite, B=finite, g0=finite, H=finite, T=finite,
       q0=st.tuples(coord, coord), v0=st.tuples(coord, coord))
def test_dump_load_round_trip(c1, c2, m, B, g0, H, T, q0, v0):
    ac = AircraftParams(c1=c1, c2=c2, m=m)
    link = LinkParams(B=B, gamma0=g0, H=H)
    cons = TrajectoryConstraints(T=T, q0=q0, v0=v0)
    solver = SolverSettings(dt=0.1, inner_tol=1e-9, seed=7)
    ac2, link2, cons2, solver2 = load_scenario(dump_scenario(ac, link, cons, solver))
    assert ac2 == ac and link2 == link and solver2 == solver
    assert cons2.T == cons.T and np.array_equal(cons2.q0, cons.q0) and np.array_equal(cons2.v0, cons.v0)
    assert cons2.qF is None and cons2.Vmax is None


def test_trajectory_shape_checks():
    z = np.zeros((3, 2))
    with pytest.raises(ScenarioError):
        DiscreteTrajectory(dt=1.0, q=z, v=z, a=np.zeros((4, 2)))
    with pytest.raises(ScenarioError):
        DiscreteTrajectory(dt=1.0, q=z[:2], v=z[:2], a=z[:2])
    with pytest.raises(ScenarioError):
        DiscreteTrajectory(dt=0.0, q=z, v=z, a=z)
    t = DiscreteTrajectory(dt=1.0, q=z, v=z, a=z)
    assert t.N == 1
    with pytest.raises(ValueError):
        t.q[0, 0] = 1.0


def test_from_accelerations_is_consistent(rng):
    a = rng.normal(size=(12, 2))
    t = DiscreteTrajectory.from_accelerations(0.3, [1.0, 2.0], [3.0, -1.0], a)
    assert t.is_dynamics_consistent(tol=1e-12)
    bumped = DiscreteTrajectory(dt=t.dt, q=t.q + np.eye(12, 2) * 1e-3, v=t.v, a=t.a)
    assert not bumped.is_dynamics_consistent()


def test_metrics_refuses_inconsistent(ac, link):
    q = np.array([[0.0, 0], [5, 0], [0, 0]])
    v = np.ones((3, 2))
    with pytest.raises(ScenarioError, match="dynamics"):
        metrics(DiscreteTrajectory(dt=1.0, q=q, v=v, a=np.zeros((3, 2))), link, ac)


def test_hover_metrics_flag_divergence(ac, link):
    m = metrics(analytic.materialize_hover(60.0, 0.5), link, ac)
    assert m.power_divergent and m.energy_efficiency == 0.0 and math.isinf(m.avg_power)
    assert m.avg_rate == pytest.approx(1e6 * math.log2(1001.0), rel=1e-12)


def test_straight_metrics(ac, link):
    traj = analytic.materialize_straight(30.0, 60.0, 0.05)
    m = metrics(traj, link, ac)
    assert m.avg_rate / 1e6 == pytest.approx(6.06, rel=1e-2)
    assert m.avg_power == pytest.approx(100.0, rel=1e-3)
    assert m.energy_efficiency / 1e3 == pytest.approx(60.6, rel=1e-2)


def test_circle_metrics_power(ac, link):
    traj = analytic.materialize_circle(158.0, 25.20, 0.1, 599)
    m = metrics(traj, link, ac, include_kinetic=False)
    assert m.avg_power == pytest.approx(119.1, rel=2e-3)
    assert m.avg_speed == pytest.approx(25.20, rel=1e-12)


def test_efficiency_is_bits_over_energy(ac, link, rng):
    for _ in range(20):
        a = rng.normal(scale=0.5, size=(40, 2))
        t = DiscreteTrajectory.from_accelerations(0.5, rng.normal(scale=100, size=2), [20.0, 5.0], a)
        m = metrics(t, link, ac)
        bits = t.dt * np.sum(comm.instantaneous_rate(t.q[1:-1], link))
        energy = propulsion.trajectory_energy(t, ac)
        assert m.energy_efficiency == pytest.approx(bits / energy, rel=1e-12)
        assert m.energy_efficiency == pytest.approx(m.avg_rate / m.avg_power, rel=1e-12)
