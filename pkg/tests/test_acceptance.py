"""One pass/fail test per acceptance criterion, each with its runtime limit."""
import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from monoflow import models
from monoflow.equilibria import forward_attraction, limit_equilibrium
from monoflow.fields import translate
from monoflow.linear import (atilde, btilde, equilibrium_traces_from_linear, fit_decay, fundamental_matrix_ode,
                             fundamental_scalar_delay)
from monoflow.phase import History, constant
from monoflow.semiflow import (continuity_harness, flow, monotonicity_harness, sample_pairs, sample_positive,
                               strict_order_harness, sublinearity_harness)
from monoflow.signals import constant as csig, quasi_periodic, step
from monoflow.solver import SolveOptions, solve_dde, solve_dde_batch, solve_ode
from monoflow.topologies import tp_distance

GOLD = (1 + math.sqrt(5)) / 2


class Clock:
    def __init__(self, limit):
        self.limit, self.t0 = limit, time.perf_counter()

    def check(self):
        elapsed = time.perf_counter() - self.t0
        assert elapsed < self.limit, f"runtime {elapsed:.1f}s exceeds {self.limit}s"


def test_criterion_01_monotonicity():
    clock = Clock(120)
    for name in models.COOPERATIVE:
        f = models.preset_field(name)
        res = monotonicity_harness(f, sample_pairs(100, f.dim, seed=11), T=10.0, tol=1e-6, name=name)
        assert res.passed, res.to_json()
        assert res.worst_violation <= 1e-6 + res.budget
    anti = monotonicity_harness(models.anti_field(), sample_pairs(100, seed=11) + [(constant(0.0), constant(1.0))],
                                T=10.0, budget=False)
    assert not anti.passed and anti.worst_violation >= 0.5
    clock.check()


def test_criterion_02_strict_order():
    clock = Clock(60)
    for name in ("golden", "step", "quasi", "cyclic2-golden"):
        f = models.preset_field(name)
        pairs = sample_pairs(20, f.dim, seed=5, strict_at_zero=True)
        res = strict_order_harness(f, pairs, T=5.0, tol=1e-6, name=name)
        assert res.passed, res.to_json()
        assert res.extra["min_gap"] > 0 and res.extra["floor_violation"] <= 1e-6
    clock.check()


def test_criterion_03_sublinearity_and_cone():
    clock = Clock(120)
    lambdas = tuple(np.round(np.arange(1, 10) / 10, 10))
    for name in ("golden", "step", "quasi", "cyclic2-golden"):
        f = models.preset_field(name)
        res = sublinearity_harness(f, sample_positive(50, f.dim, seed=7), lambdas=lambdas, T=10.0, tol=1e-6,
                                   name=name)
        assert res.passed, res.to_json()
        assert res.extra["cone_violation"] <= 0.0
    clock.check()


def test_criterion_04_pullback_sandwich():
    clock = Clock(180)
    for name, target in (("golden", GOLD), ("linear", 1.0 / (1.0 - 0.25))):
        m = models.get_preset(name)
        a, b = equilibrium_traces_from_linear(m, window=(-40.0, 4.0), step=0.5)
        # raises SubEquilibriumViolation if an increment has the wrong sign beyond 1e-8
        u, v, d = limit_equilibrium(m.field(), a, b, tau=2.0, max_steps=30, tol=1e-8, budget=1e-8)
        assert d.converged
        assert all(i >= 0 for i in d.increments_a + d.increments_b)
        assert np.max(np.abs(u.values - target)) < 1e-6
        assert np.max(np.abs(v.values - target)) < 1e-6
        assert np.all(u.values <= v.values + 1e-8)
    clock.check()


def test_criterion_05_uniqueness_and_attraction():
    clock = Clock(300)
    m = models.get_preset("quasi")
    f = m.field()
    a, b = equilibrium_traces_from_linear(m, window=(-40.0, 62.0), step=0.5)
    u, v, d = limit_equilibrium(f, a, b, tau=2.0, max_steps=30, tol=1e-9, budget=1e-8)
    assert np.max(np.abs(u.values - v.values)) < 1e-5
    assert u.start <= 0.0 and u.end >= 60.0
    series = forward_attraction(f, u, History(2.0 * u.at(0.0).values), 60.0)
    assert series.p[0] == pytest.approx(math.log(2.0))
    assert series.nonincreasing(1e-8)
    assert series.p[-1] < 1e-4
    assert series.bound_holds()
    clock.check()


def test_criterion_06_fundamental_solution():
    clock = Clock(60)
    alpha = quasi_periodic(1.0)
    for s in (0.0, 0.3, 7.25):
        F = fundamental_scalar_delay(alpha, csig(0.6), s, 2.0)
        t = s + np.linspace(0.0, 1.0, 65)
        assert np.max(np.abs(F.value(t) - np.exp(-alpha.integral(s, t)))) < 1e-10
    F = fundamental_scalar_delay(csig(0.0), csig(1.0), 0.0, 3.0)
    # method of steps: 1 on [0,1], t on [1,2], 1 + (t-1) + (t-2)^2/2 on [2,3]
    t = np.linspace(0.0, 3.0, 25)
    ref = np.where(t <= 1, 1.0, np.where(t <= 2, t, t + (t - 2) ** 2 / 2))
    assert np.max(np.abs(F.value(t) - ref)) < 1e-8
    root = brentq(lambda x: x + 1.0 - 0.25 * math.exp(-x), -5.0, 5.0)
    est = fit_decay(fundamental_scalar_delay(csig(1.0), csig(0.25), 0.0, 40.0))
    assert est.verdict == "pass"
    assert abs(est.delta - (-root)) <= 0.05 * abs(root)
    clock.check()


def test_criterion_07_equilibrium_integrals():
    clock = Clock(60)
    one, zero = csig(1.0), csig(0.0)
    dec0 = fit_decay(fundamental_scalar_delay(one, zero, 0.0, 40.0))
    assert btilde(one, zero, one, dec0)["value"] == pytest.approx(1.0, abs=1e-8)
    q = csig(0.25)
    val = btilde(one, q, one, fit_decay(fundamental_scalar_delay(one, q, 0.0, 40.0)))["value"]
    # long forward integration of the majorant from zero history
    maj = models.linear(1.0, 0.25, 1.0).majorant()
    oracle = solve_dde(maj, constant(0.0), 80.0).value(80.0)[0]
    assert oracle == pytest.approx(4.0 / 3.0, abs=1e-9)
    assert val == pytest.approx(oracle, abs=1e-6)
    h0 = step((0.0, 1.0), (0.0, 1.0), period=2.0)
    assert atilde(one, h0)["value"] == pytest.approx(0.7310586, abs=1e-6)
    for name in ("golden", "linear", "linear-half", "step", "quasi", "cyclic2-golden", "cyclic3"):
        a, b = equilibrium_traces_from_linear(models.get_preset(name), window=(-2.0, 2.0), step=1.0)
        assert np.all(a.values > 0) and np.all(a.values <= b.values), name
    clock.check()


def test_criterion_08_cyclic_feedback():
    clock = Clock(120)
    m = models.get_preset("cyclic2-golden")
    a, b = equilibrium_traces_from_linear(m, window=(-40.0, 4.0), step=0.5)
    u, v, d = limit_equilibrium(m.field(), a, b, tau=2.0, max_steps=30)
    assert np.max(np.abs(u.values - GOLD)) < 1e-6 and np.max(np.abs(v.values - GOLD)) < 1e-6
    for mm in (models.get_preset("cyclic2-golden"), models.get_preset("cyclic3")):
        Z = fundamental_matrix_ode(mm, 0.0, 20.0, minorant=True)
        t = Z.s + Z.ts_rel
        sel = (t >= 0.1) & (t <= 10.0)
        assert np.all(Z.values[sel][:, :, 0] > 0)
    clock.check()


def test_criterion_09_continuous_dependence():
    clock = Clock(180)
    f = models.preset_field("quasi")
    phi = constant(1.0)
    ks = list(range(1, 13))
    fields = [translate(f, 2.0 ** -k) for k in ks]
    phis = [constant(1.0 + 2.0 ** -k) for k in ks]
    rows, _ = continuity_harness(f, phi, fields, phis, T=10.0, d_field=tp_distance, ns=ks)
    tp = np.array([r.d_field for r in rows])
    err = np.array([r.sup_error for r in rows])
    clock.check()
    assert np.all(np.diff(tp) <= 0)
    assert np.all(np.diff(err) <= 0)
    assert err[-1] < 1e-4, f"sup-error at k=12 is {err[-1]:.3e}"


def test_criterion_10_integrator_self_consistency():
    clock = Clock(120)
    T = 4.0
    t = np.linspace(0.0, T, 65)
    cases = [("golden", (4, 5, 6, 7)), ("linear", (4, 5, 6, 7)), ("step", (4, 5, 6, 7)), ("quasi", (7, 8, 9, 10)),
             ("cyclic2-golden", (2, 3, 4, 5)), ("cyclic3", (2, 3, 4, 5))]
    for name, ks in cases:
        f = models.preset_field(name)
        if f.delayed:
            xs = [solve_dde(f, constant(1.0, M=16), T, SolveOptions(h=2.0 ** -k)).value(t) for k in ks]
        else:
            xs = [solve_ode(f, 0.0, np.ones(f.dim), T, SolveOptions(h=2.0 ** -k)).value(t) for k in ks]
        e = [np.max(np.abs(xs[i] - xs[i + 1])) for i in range(len(xs) - 1)]
        ratios = [e[i] / e[i + 1] for i in range(len(e) - 1)]
        assert min(ratios) >= 8.0, (name, ratios)
    # cocycle: x_{t+s}(f, phi) = x_t(f_s, x_s(f, phi))
    opts = SolveOptions()
    for name in ("golden", "step", "quasi"):
        f = models.preset_field(name)
        phi = sample_positive(1, seed=3)[0]
        g, p = flow(1.5, f, phi, opts)
        _, p2 = flow(2.5, g, p, opts)
        _, p3 = flow(4.0, f, phi, opts)
        assert np.max(np.abs(p2.values - p3.values)) <= 10 * opts.tol
    # bitwise determinism under a fixed seed
    f = models.preset_field("quasi")
    r1 = monotonicity_harness(f, sample_pairs(20, seed=9), T=3.0).to_json()
    r2 = monotonicity_harness(f, sample_pairs(20, seed=9), T=3.0).to_json()
    assert r1 == r2
    clock.check()
