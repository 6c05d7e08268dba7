"""Reproducible experiment runs writing CSV tables to an output directory.

    python3 scripts/experiments.py pullback --out results
    python3 scripts/experiments.py attraction --out results
    python3 scripts/experiments.py continuity --out results
    python3 scripts/experiments.py convergence --out results
    python3 scripts/experiments.py all --out results
"""
import argparse
import csv
import logging
import time
from pathlib import Path

import numpy as np

from monoflow import models
from monoflow.equilibria import forward_attraction, limit_equilibrium
from monoflow.fields import translate
from monoflow.linear import equilibrium_traces_from_linear
from monoflow.phase import History, constant
from monoflow.semiflow import continuity_harness
from monoflow.solver import SolveOptions, solve_dde, solve_ode
from monoflow.topologies import tp_distance

log = logging.getLogger("experiments")


def _write(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    log.info("wrote %s (%d rows)", path, len(rows))


def pullback(out: Path):
    """Sandwich increments and final gap for the scalar presets."""
    rows = []
    for name in ("golden", "linear", "step", "quasi"):
        m = models.get_preset(name)
        a, b = equilibrium_traces_from_linear(m, window=(-40.0, 4.0), step=0.5)
        u, v, d = limit_equilibrium(m.field(), a, b, tau=2.0, max_steps=30, tol=1e-8, budget=1e-8)
        for i, (ia, ib) in enumerate(zip(d.increments_a, d.increments_b)):
            rows.append([name, i + 1, ia, ib])
        log.info("%s: converged=%s gap=%.3e", name, d.converged, float(np.max(np.abs(u.values - v.values))))
    _write(out / "pullback_increments.csv", ["preset", "step", "increment_a", "increment_b"], rows)


def attraction(out: Path):
    """Part-metric distance to the equilibrium along a forward orbit (quasi preset)."""
    m = models.get_preset("quasi")
    f = m.field()
    a, b = equilibrium_traces_from_linear(m, window=(-40.0, 32.0), step=0.5)
    u, _, _ = limit_equilibrium(f, a, b, tau=2.0, max_steps=30, tol=1e-9, budget=1e-8)
    series = forward_attraction(f, u, History(2.0 * u.at(0.0).values), 30.0)
    _write(out / "attraction.csv", ["t", "part_metric"], list(zip(series.t, series.p)))


def continuity(out: Path):
    """Sup-error against T_P distance for dyadic translates (quasi preset)."""
    f = models.preset_field("quasi")
    ks = list(range(1, 13))
    fields = [translate(f, 2.0 ** -k) for k in ks]
    rows, _ = continuity_harness(f, constant(1.0), fields, [constant(1.0)] * len(ks), T=10.0,
                                 d_field=tp_distance, ns=ks)
    _write(out / "continuity.csv", ["k", "tp_distance", "sup_error"],
           [[k, r.d_field, r.sup_error] for k, r in zip(ks, rows)])


def convergence(out: Path):
    """Successive-difference ratios of the fixed-step integrator."""
    T, t = 4.0, np.linspace(0.0, 4.0, 65)
    rows = []
    for name in ("golden", "step", "quasi", "cyclic3"):
        f = models.preset_field(name)
        prev = None
        for k in range(4, 10):
            opts = SolveOptions(h=2.0 ** -k)
            if f.delayed:
                x = solve_dde(f, constant(1.0, M=16), T, opts).value(t)
            else:
                x = solve_ode(f, 0.0, np.ones(f.dim), T, opts).value(t)
            if prev is not None:
                rows.append([name, k, float(np.max(np.abs(x - prev)))])
            prev = x
    _write(out / "convergence.csv", ["preset", "k", "successive_difference"], rows)


RUNS = {"pullback": pullback, "attraction": attraction, "continuity": continuity, "convergence": convergence}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run", choices=sorted(RUNS) + ["all"])
    p.add_argument("--out", default="results")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in (sorted(RUNS) if args.run == "all" else [args.run]):
        t0 = time.perf_counter()
        RUNS[name](out)
        log.info("%s done in %.1fs", name, time.perf_counter() - t0)


if __name__ == "__main__":
    main()
