import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from uavee import analytic
from uavee.comm import (
    instantaneous_rate,
    log_snr_antiderivative,
    straight_flight_throughput_closed,
    straight_flight_throughput_limit,
    trajectory_throughput,
)
from uavee.scenario import LinkParams


def test_rate_above_terminal(link):
    assert instantaneous_rate([0.0, 0.0], link) == pytest.approx(1e6 * math.log2(1001.0), rel=1e-14)
    assert instantaneous_rate([0.0, 0.0], link) / 1e6 == pytest.approx(9.97, abs=5e-3)


def test_rate_at_circle_radius(link):
    r = instantaneous_rate([158.0, 0.0], link)
    assert r == pytest.approx(1e6 * math.log2(1 + 1e7 / (1e4 + 158.0**2)), rel=1e-14)
    assert r / 1e6 == pytest.approx(8.16, abs=5e-3)


def test_rate_vectorised(link, rng):
    q = rng.normal(scale=300, size=(7, 3, 2))
    r = instantaneous_rate(q, link)
    assert r.shape == (7, 3)
    assert r[2, 1] == instantaneous_rate(q[2, 1], link)


def test_rate_strictly_decreasing(link):
    d = np.geomspace(1e-2, 1e7, 400)
    r = instantaneous_rate(np.column_stack([d, 0 * d]), link)
    assert np.all(np.diff(r) < 0) and r[-1] < 1.0


def test_hover_throughput(link):
    traj = analytic.materialize_hover(60.0, 0.5)
    assert trajectory_throughput(traj, link) == pytest.approx(60 * 1e6 * math.log2(1001.0), rel=1e-12)
    assert trajectory_throughput(traj, link) == pytest.approx(5.98e8, rel=1e-3)


def test_short_horizon_throughput_vanishes(link):
    vals = [trajectory_throughput(analytic.materialize_hover(dt, dt), link) for dt in (1e-1, 1e-3, 1e-6)]
    assert vals[-1] < 1e1 and vals[0] > vals[1] > vals[2]


def _quad_oracle(V, T, link):
    f = lambda t: link.B * math.log2(1 + link.gamma0 / (link.H**2 + (V * t) ** 2))
    return quad(f, -T / 2, T / 2, epsabs=0, epsrel=1e-13, limit=200)[0]


@pytest.mark.parametrize("V,T", [(30.0, 60.0), (10.0, 5.0), (60.0, 400.0), (5.0, 1000.0)])
def test_closed_form_against_adaptive_quadrature(link, V, T):
    assert straight_flight_throughput_closed(V, T, link) == pytest.approx(_quad_oracle(V, T, link), rel=1e-10)


def test_reference_straight_pass(link):
    bits = straight_flight_throughput_closed(30.0, 60.0, link)
    assert bits == pytest.approx(3.64e8, rel=1e-3)
    assert bits / 60 / 1e6 == pytest.approx(6.06, rel=1e-3)


@pytest.mark.parametrize("dt", [0.1, 0.05])
def test_closed_form_against_slot_sum(link, dt):
    traj = analytic.materialize_straight(30.0, 60.0, dt)
    rel = trajectory_throughput(traj, link) / straight_flight_throughput_closed(30.0, 60.0, link) - 1
    assert abs(rel) <= 1e-4


def test_long_horizon_limit(link):
    lim = straight_flight_throughput_limit(30.0, link)
    assert lim == pytest.approx(9.26e8, rel=1e-3)
    assert lim == pytest.approx(2 * math.pi * 1e6 / (math.log(2) * 30) * (math.sqrt(1e4 + 1e7) - 100), rel=1e-14)
    T = np.array([60.0, 600.0, 6e3, 6e5, 6e7])
    bits = np.array([straight_flight_throughput_closed(30.0, t, link) for t in T])
    assert np.all(np.diff(bits) > 0) and np.all(bits < lim)
    assert bits[-1] == pytest.approx(lim, rel=1e-5)


def test_vanishing_snr_gives_no_bits():
    link = LinkParams(B=1e6, gamma0=1e-300, H=100.0)
    assert straight_flight_throughput_closed(30.0, 60.0, link) < 1e-280


def test_closed_form_input_checks(link):
    with pytest.raises(ValueError):
        straight_flight_throughput_closed(0.0, 1.0, link)
    with pytest.raises(ValueError):
        straight_flight_throughput_limit(-1.0, link)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e5), st.floats(1e-3, 1e5))
def test_antiderivative_span_is_positive_and_increasing(z, dz):
    link = LinkParams(B=1.0, gamma0=1e7, H=100.0)
    span = lambda x: float(log_snr_antiderivative(x, link) - log_snr_antiderivative(-x, link))
    assert float(log_snr_antiderivative(-z, link)) == pytest.approx(-float(log_snr_antiderivative(z, link)), rel=1e-12)
    assert span(z) > 0
    assert span(z + dz) >= span(z)
