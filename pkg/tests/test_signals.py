import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from monoflow import signals as sg

finite = st.floats(-50, 50, allow_nan=False)


def test_constant_values_and_integral():
    c = sg.constant(2.5)
    assert np.all(c.value(np.linspace(-3, 3, 11)) == 2.5)
    assert c.integral(-1.0, 3.0) == pytest.approx(10.0)
    assert c.breakpoints(-10, 10).size == 0


def test_step_sides_at_jump():
    s = sg.step((0.0, 0.5), (0.0, 2.0), period=1.0)
    assert s.value(0.5, side=1) == 2.0
    assert s.value(0.5, side=-1) == 0.0
    assert s.integral(0.0, 1.0) == pytest.approx(1.0)
    assert np.allclose(s.breakpoints(0.0, 2.0), [0.0, 0.5, 1.0, 1.5, 2.0])


@given(a=finite, L=st.floats(0, 10))
def test_step_integral_matches_quadrature(a, L):
    s = sg.step((0.0, 1.0), (1.0, 1.5), period=2.0)
    bps = s.breakpoints(a, a + L)
    ref = quad(lambda t: float(s.value(t)), a, a + L, points=list(bps), limit=200)[0] if L > 0 else 0.0
    assert s.integral(a, a + L) == pytest.approx(ref, abs=1e-9)


@given(a=finite, b=finite, shift=finite)
def test_translate_shifts_integral(a, b, shift):
    q = sg.quasi_periodic(1.0)
    qs = q.translate(shift)
    assert qs.integral(a, b) == pytest.approx(q.integral(a + shift, b + shift), abs=1e-9)


def test_quasi_primitive_against_quadrature():
    q = sg.QuasiPeriodicSignal(1.0, ((0.5, 1.0, 0.3), (0.5, math.sqrt(2.0), 1.1)))
    ref = quad(lambda t: float(q.value(t)), -2.0, 5.0, limit=200)[0]
    assert q.integral(-2.0, 5.0) == pytest.approx(ref, rel=1e-10)
    assert q.floor >= 0.0


def test_cell_average_preserves_cell_integrals():
    q = sg.QuasiPeriodicSignal(1.0, ((0.5, 1.0, 0.0), (0.5, math.sqrt(2.0), 0.0)))
    d = q.discretize(1.0 / 64.0)
    edges = np.arange(-64, 65) / 64.0
    assert np.allclose(d.integral(edges[:-1], edges[1:]), q.integral(edges[:-1], edges[1:]), atol=1e-13)
    mids = 0.5 * (edges[:-1] + edges[1:])
    assert np.allclose(d.value(mids) * (1 / 64.0), q.integral(edges[:-1], edges[1:]), atol=1e-13)


def test_spike_mass():
    s = sg.spike(0.0, mass=3.0, width=0.01, period=5.0)
    assert s.integral(-2.5, 2.5) == pytest.approx(3.0)
    assert s.unit_window_bound(-10, 10) == pytest.approx(3.0, rel=1e-6)


def test_reflected_signal():
    s = sg.step((0.0, 0.5), (1.0, 3.0), period=1.0)
    r = sg.ReflectedSignal(s)
    t = np.linspace(-3, 3, 37) + 0.01
    assert np.allclose(r.value(t), s.value(-t, side=-1))
    assert r.integral(0.0, 2.0) == pytest.approx(s.integral(-2.0, 0.0))


def test_unit_window_bounds():
    s = sg.step((0.0, 0.5), (0.0, 4.0), period=1.0)
    assert s.unit_window_bound(-4, 4) == pytest.approx(2.0)
    assert s.unit_window_infimum(-4, 4) == pytest.approx(2.0)


def test_signal_from_config():
    assert sg.signal_from_config(1.5).value(0.0) == 1.5
    assert sg.signal_from_config({"constant": 2.0}).value(3.0) == 2.0
    st_ = sg.signal_from_config({"kind": "step", "starts": [0, 1], "values": [1, 2], "period": 2})
    assert st_.value(1.5) == 2.0
    with pytest.raises(ValueError):
        sg.signal_from_config({"kind": "nope"})
