import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.optimize import brentq

from monoflow import models
from monoflow.fields import VectorField
from monoflow.phase import constant as constant_history
from monoflow.solver import solve_dde_batch
from monoflow.linear import (DecayFailure, atilde, btilde, equilibrium_traces_from_linear, fit_decay,
                             _homogeneous_delay_field, fundamental_matrix_ode,
                             fundamental_scalar_delay)
from monoflow.signals import constant, quasi_periodic, step


def char_root(beta):
    # real root of lambda = -1 + beta e^{-lambda}
    return brentq(lambda x: x + 1 - beta * math.exp(-x), -5.0, 5.0)


def test_first_interval_closed_form():
    a = quasi_periodic(1.0)
    s = 0.3
    F = fundamental_scalar_delay(a, constant(0.7), s, 3.0)
    t = s + np.linspace(0, 1, 33)
    assert np.max(np.abs(F.value(t) - np.exp(-a.integral(s, t)))) < 1e-10
    assert F.value(s) == 1.0
    assert F.value(s - 0.5) == 0.0
    F1 = fundamental_scalar_delay(constant(1.0), constant(0.4), 0.0, 2.0)
    assert F1.value(0.5) == pytest.approx(0.60653066, abs=1e-8)


def test_pure_delay_method_of_steps():
    F = fundamental_scalar_delay(constant(0.0), constant(1.0), 0.0, 3.0)
    assert np.allclose(F.value(np.linspace(0, 1, 9)), 1.0, atol=1e-12)
    assert F.value(1.5) == pytest.approx(1.5, abs=1e-8)
    # U on [2,3]: 1 + (t-1) + (t-2)^2/2
    assert F.value(2.5) == pytest.approx(1.0 + 1.5 + 0.125, abs=1e-8)


def test_matrix_minorant_closed_form():
    Z = fundamental_matrix_ode(models.cyclic(2), 0.0, 5.0, minorant=True)
    for t in (0.0, 0.5, 2.0, 5.0):
        ref = np.array([[math.exp(-t), 0.0], [t * math.exp(-t), math.exp(-t)]])
        assert np.allclose(Z.value(t), ref, atol=1e-10)


@pytest.mark.parametrize("beta", [0.5, 1.5])
def test_matrix_matches_companion_exponential(beta):
    m = 3
    A = -np.eye(m)
    A[0, -1] = beta
    A[1, 0] = A[2, 1] = 1.0
    Z = fundamental_matrix_ode((tuple(constant(1.0) for _ in range(m)), constant(beta)), 0.0, 30.0)
    for t in (0.25, 1.0, 6.0):
        assert np.allclose(Z.value(t), expm(A * t), atol=1e-9)
    # stable iff the circulant eigenvalues -1 + beta^(1/3) w have negative real part
    stable = np.max(np.linalg.eigvals(A).real) < 0
    assert stable == (beta < 1)
    assert (fit_decay(Z).verdict == "pass") == stable


def test_strong_positivity_m3():
    Z = fundamental_matrix_ode(models.cyclic(3), 0.0, 10.0, minorant=True)
    t = np.linspace(0.1, 10.0, 100)
    col = Z.value(t)[:, :, 0]
    assert np.all(col > 0)


def test_fit_decay_exact_exponential():
    est = fit_decay(fundamental_scalar_delay(constant(1.0), constant(0.0), 0.0, 40.0))
    assert est.verdict == "pass"
    assert 0.99 <= est.delta <= 1.01 and 1.0 <= est.K <= 1.05


def test_fit_decay_tracks_characteristic_root():
    lam = char_root(0.25)
    assert lam == pytest.approx(-0.56162, abs=1e-5)
    est = fit_decay(fundamental_scalar_delay(constant(1.0), constant(0.25), 0.0, 40.0))
    assert est.verdict == "pass"
    assert est.delta == pytest.approx(-lam, rel=0.05)


def test_fit_decay_rejects_unstable():
    assert char_root(2.0) == pytest.approx(0.37482, abs=1e-5)
    est = fit_decay(fundamental_scalar_delay(constant(1.0), constant(2.0), 0.0, 40.0))
    assert est.verdict == "fail"
    with pytest.raises(DecayFailure):
        btilde(constant(1.0), constant(2.0), constant(1.0), est)


def _decay(alpha, beta):
    return fit_decay(fundamental_scalar_delay(alpha, beta, 0.0, 40.0))


def test_btilde_closed_forms():
    one, zero = constant(1.0), constant(0.0)
    assert btilde(one, zero, zero, _decay(one, zero))["value"] == 0.0
    r = btilde(one, zero, one, _decay(one, zero))
    assert r["value"] == pytest.approx(1.0, abs=1e-8)
    assert r["tail_bound"] < 1e-9


def test_btilde_against_forward_fundamental_solution():
    # constant coefficients: int_{-inf}^0 U(0,s) ds = int_0^inf U(r,0) dr
    a, b = constant(1.0), constant(0.25)
    val = btilde(a, b, constant(1.0), _decay(a, b))["value"]
    F = fundamental_scalar_delay(a, b, 0.0, 80.0)
    edges = np.arange(0.0, 81.0)
    oracle = sum(quad(lambda r: float(F.value(r)), lo, hi, limit=100, epsabs=1e-13)[0]
                 for lo, hi in zip(edges[:-1], edges[1:]))
    assert oracle == pytest.approx(4.0 / 3.0, abs=1e-6)
    assert val == pytest.approx(4.0 / 3.0, abs=1e-6)


def test_btilde_time_dependent_matches_forward():
    # U(0, s) for s in [-L, 0] read off forward solutions started at s
    a, b, g = step((0.0, 1.0), (1.0, 1.5), 2.0), constant(0.5), quasi_periodic(1.0)
    val = btilde(a, b, g, _decay(a, b), eps=1e-8)["value"]
    # forward route: one batched solve, member i started at s_i and read at time -s_i;
    # midpoint rule on the 1/64 cell grid of g
    ss = np.arange(-40.0, 0.0, 1.0 / 64.0) + 1.0 / 128.0
    f = _homogeneous_delay_field(a, b)
    seg = solve_dde_batch(f, [constant_history(0.0)] * ss.size, 40.0, offsets=ss, x0=np.ones((ss.size, 1)))
    U = np.array([seg.value(-s, member=i)[0] for i, s in enumerate(ss)])
    oracle = float(np.sum(U * g.value(ss)) / 64.0)
    assert val == pytest.approx(oracle, abs=5e-5)


def test_atilde_closed_forms():
    assert atilde(constant(1.0), constant(1.0))["value"] == pytest.approx(1.0, abs=1e-9)
    assert atilde(constant(2.0), constant(1.0))["value"] == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(DecayFailure):
        atilde(constant(0.0), constant(1.0))


def test_atilde_step_case():
    # h0 = 1 on [2k-1, 2k) so the last unit before 0 is covered
    h0 = step((0.0, 1.0), (0.0, 1.0), period=2.0)
    closed = (1 - math.exp(-1)) / (1 - math.exp(-2))
    assert closed == pytest.approx(0.7310586, abs=1e-7)
    quadrature = sum(quad(lambda s: math.exp(s) * float(h0.value(s)), -k - 1, -k)[0] for k in range(60))
    assert quadrature == pytest.approx(closed, abs=1e-10)
    assert atilde(constant(1.0), h0)["value"] == pytest.approx(closed, abs=1e-8)


def test_traces_constant_coefficients():
    m = models.get_preset("linear")
    a, b = equilibrium_traces_from_linear(m, window=(-4.0, 4.0), step=1.0)
    assert np.allclose(b.values, 4.0 / 3.0, atol=1e-9)
    assert np.allclose(a.values, atilde(m.alpha, m.h0)["value"], atol=1e-9)
    assert np.all(a.values > 0) and np.all(a.values <= b.values)


def test_b_trace_is_majorant_equilibrium():
    from monoflow.equilibria import equilibrium_residual

    m = models.get_preset("quasi")
    a, b = equilibrium_traces_from_linear(m, window=(-4.0, 8.0), step=0.5)
    assert np.all(a.values > 0) and np.all(a.values <= b.values)
    assert equilibrium_residual(b, m.majorant(), 2.0) < 1e-6
    mino = m.minorant()
    delayed_view = VectorField(dim=1, rhs=lambda t, x, y, side: mino.rhs(t, x, None, side), delayed=True,
                               breaks=mino.breaks)
    assert equilibrium_residual(a, delayed_view, 2.0) < 1e-6
