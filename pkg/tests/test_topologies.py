import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from monoflow import models
from monoflow.fields import VectorField, translate
from monoflow.signals import constant, step
from monoflow.topologies import (Modulus, SeminormBasis, default_basis, moduli_from_mbounds,
                                 sigma_p_distance, theta_d_distance, theta_d_seminorm, tp_distance)


def shifted(c=1.0, comp=0, dim=2):
    e = np.zeros(dim)
    e[comp] = c
    return VectorField.from_callable(lambda t, x, y: -x + y + e, dim=dim)


def test_self_distance_zero():
    f = models.preset_field("quasi")
    assert tp_distance(f, f) == 0.0 and sigma_p_distance(f, f) == 0.0
    assert theta_d_distance(f, f) == 0.0


def test_constant_difference_single_term():
    f, g = shifted(0.0), shifted(1.0)
    basis = SeminormBasis([(0.0, 1.0)], [np.zeros(4)], [1.0])
    assert tp_distance(f, g, basis) == pytest.approx(1.0)
    assert sigma_p_distance(f, g, basis) == pytest.approx(1.0)
    half = SeminormBasis([(0.0, 0.5)], [np.zeros(4)], [1.0])
    assert tp_distance(f, g, half) == pytest.approx(0.5)


def test_tp_matches_quadrature():
    f = models.preset_field("step")
    g = translate(f, 0.3)
    p = np.array([1.0, 0.5])
    basis = SeminormBasis([(-2.0, 2.0)], [p], [0.5])
    x, y = p[:1][None], p[1:][None]
    integrand = lambda t: abs(float((f.eval(np.array([t]), x, y) - g.eval(np.array([t]), x, y))[0, 0]))
    pts = np.union1d(f.breakpoints(-2, 2), g.breakpoints(-2, 2))
    ref = quad(integrand, -2.0, 2.0, points=list(pts[(pts > -2) & (pts < 2)]), limit=200)[0]
    assert tp_distance(f, g, basis) == pytest.approx(0.5 * min(1.0, ref), abs=1e-10)


@settings(max_examples=6)
@given(s=st.floats(0.01, 3.0))
def test_chain_sigma_tp_theta(s):
    f = models.preset_field("quasi")
    g = translate(f, s)
    basis = default_basis(f, seed=2)
    sp, tp, th = sigma_p_distance(f, g, basis), tp_distance(f, g, basis), theta_d_distance(f, g, basis)
    assert sp <= tp + 1e-12 <= th + 2e-12


def test_theta_seminorm_x_independent_difference():
    a = step((0.0, 0.5), (1.0, 3.0), period=1.0)
    f = VectorField(dim=1, rhs=lambda t, x, y, side: -x + a.value(t, side)[:, None], delayed=True,
                    breaks=a.breakpoints)
    g = VectorField.from_callable(lambda t, x, y: -x, dim=1)
    r = theta_d_seminorm(f, g, (0.0, 2.0), np.array([0.0]), 2.0, Modulus.linear(1.0))
    assert r["value"] == pytest.approx(a.integral(0.0, 2.0)) and r["lower_bound"]


def test_theta_zero_modulus_brute_force():
    f = VectorField.from_callable(lambda t, x, y: np.sin(3 * x) * np.cos(t), dim=1)
    g = VectorField.from_callable(lambda t, x, y: 0 * x, dim=1)
    zero = Modulus(np.array([0.0, 1.0]), np.array([0.0, 0.0]))
    r = theta_d_seminorm(f, g, (0.0, 1.0), np.array([0.0]), 1.0, zero, n_lattice=9)
    # only constants are admissible: the lattice maximum is a floor, the
    # supremum over all constants in the ball a ceiling
    w = quad(lambda t: abs(np.cos(t)), 0, 1)[0]
    lattice = max(abs(np.sin(3 * c)) * w for c in np.linspace(-1, 1, 9))
    sup = w * 1.0
    assert lattice - 1e-12 <= r["value"] <= sup + 1e-12
    assert r["provenance"]["family"] in ("constant", "random-ramp")


def test_moduli_examples():
    th = moduli_from_mbounds([constant(3.0)], (0.0, 4.0), 1.0)
    assert np.allclose(th.values, 3.0 * th.s)
    th2 = moduli_from_mbounds([constant(1.0), constant(2.0)], (0.0, 4.0), 1.0)
    assert np.allclose(th2(np.array([0.5, 1.0])), [1.0, 2.0])
    alt = step((0.0, 0.5), (0.0, 2.0), period=1.0)
    th3 = moduli_from_mbounds([alt], (0.0, 4.0), 1.0)
    assert th3(0.5) == pytest.approx(1.0)
    fld = VectorField.from_callable(lambda t, x, y: -x + y, dim=1)
    th4 = moduli_from_mbounds([fld], (0.0, 2.0), 2.0)
    assert th4(1.0) == pytest.approx(4.0)


def test_modulus_validation():
    with pytest.raises(ValueError):
        Modulus(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        SeminormBasis([(0.0, 1.0)], [np.zeros(2)], [1.5])


def test_translation_series_strictly_decreasing():
    f = models.preset_field("quasi")
    d = [tp_distance(f, translate(f, 2.0 ** -k)) for k in range(0, 13)]
    assert all(a > b for a, b in zip(d, d[1:]))
