"""Command-line front end: ``monoflow {simulate,pullback,verify,distance,decay}``.

Exit codes: 0 pass, 1 verification verdict failed, 2 config error,
3 blow-up, 4 equilibrium-property violation, 5 decay failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import models
from .equilibria import SubEquilibriumViolation, limit_equilibrium
from .fields import NonlinearitySpec, Sampler, VectorField, check_condition, translate
from .linear import (DecayFailure, equilibrium_traces_from_linear, fit_decay,
                     fundamental_matrix_ode, fundamental_scalar_delay)
from .phase import History, constant as const_history
from .semiflow import monotonicity_harness, sample_pairs, sample_positive, sublinearity_harness
from .signals import signal_from_config
from .solver import SolveOptions, solve_dde, solve_ode
from .topologies import sigma_p_distance, theta_d_distance, tp_distance

log = logging.getLogger("monoflow")

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_BLOWUP, EXIT_EQUILIBRIUM, EXIT_DECAY = 0, 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


def _schema_dir() -> Path:
    here = Path(__file__).resolve()
    for cand in (here.parents[2] / "docs" / "schemas", here.parent / "schemas"):
        if cand.is_dir():
            return cand
    raise FileNotFoundError("schema directory not found")


def load_schema(name: str) -> dict:
    return json.loads((_schema_dir() / f"{name}.schema.json").read_text())


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def _write_json(out: Path, name: str, obj: dict, schema: str) -> None:
    obj = json.loads(json.dumps(obj, default=_jsonable))
    jsonschema.validate(obj, load_schema(schema))
    _dump(out / name, obj)


# ---------------------------------------------------------------- config

def _model_from_spec(spec: dict):
    sig = signal_from_config
    h = spec.get("h", {})
    hs = NonlinearitySpec(sig(h.get("base", 1.0)), sig(h.get("gain", 1.0)), h.get("shape", "sat"))
    if spec.get("kind", "scalar") == "scalar":
        return models.ScalarPopulationModel(sig(spec["alpha"]), sig(spec["beta"]), sig(spec["gamma"]), hs,
                                            spec.get("name", "inline"))
    m = int(spec.get("m", 2))
    alphas = spec.get("alphas", [spec.get("alpha", 1.0)] * m)
    return models.CyclicFeedbackModel(tuple(sig(a) for a in alphas), sig(spec["beta"]), sig(spec["gamma"]),
                                      hs, spec.get("name", "inline-cyclic"))


def resolve(cfg: dict):
    """(object, name) where object is a model or a bare VectorField."""
    if "model" in cfg:
        try:
            obj = _model_from_spec(cfg["model"])
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"bad model spec: {e}") from None
        return obj, obj.name
    name = cfg.get("preset")
    if name is None:
        raise ConfigError("config needs 'preset' or 'model'")
    try:
        return models.get_preset(name), name
    except KeyError as e:
        raise ConfigError(str(e)) from None


def _field(obj) -> VectorField:
    return obj if isinstance(obj, VectorField) else obj.field()


def _opts(cfg: dict) -> SolveOptions:
    s = cfg.get("solver", {})
    try:
        return SolveOptions(h=s.get("h", 1 / 256), method=s.get("method", "rk4-fixed"),
                            blowup_cap=s.get("blowup_cap", 1e9), tol=s.get("tol", 1e-8))
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _history(cfg: dict, dim: int) -> History:
    h = cfg.get("history", {"constant": 1.0})
    if "constant" in h:
        return const_history(h["constant"], dim)
    vals = np.asarray(h["values"], dtype=float)
    return History(vals.reshape(vals.shape[0], -1))


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg, out: Path, args) -> int:
    obj, name = resolve(cfg)
    f = _field(obj)
    opts = _opts(cfg)
    T = float(cfg.get("T", 10.0))
    if f.delayed:
        seg = solve_dde(f, _history(cfg, f.dim), T, opts)
        t_lo = -1.0
    else:
        x0 = np.asarray(cfg.get("x0", [1.0] * f.dim), dtype=float)
        seg = solve_ode(f, 0.0, x0, T, opts)
        t_lo = 0.0
    blow = seg.blowup_time[0]
    t_hi = T if np.isnan(blow) else float(blow)
    per = int(cfg.get("output_per_unit", 64))
    times = np.linspace(t_lo, t_hi, int(round((t_hi - t_lo) * per)) + 1)
    (out / "trajectory.csv").write_text(seg.to_csv(0, times))
    summary = {"command": "simulate", "preset": name, "T": T, "dimension": f.dim, "delayed": f.delayed,
               "status": seg.status(0), "blowup_time": None if np.isnan(blow) else float(blow),
               "terminal": seg.value(t_hi).tolist(), "steps": int(seg.ts.size)}
    _write_json(out, "summary.json", summary, "simulate-summary")
    if not np.isnan(blow):
        log.error("blow-up at t=%.6g", blow)
        return EXIT_BLOWUP
    return EXIT_OK


def cmd_pullback(cfg, out: Path, args) -> int:
    obj, name = resolve(cfg)
    if isinstance(obj, VectorField):
        raise ConfigError("pullback needs a model preset (scalar population or cyclic feedback)")
    p = cfg.get("pullback", {})
    opts = _opts(cfg)
    window = tuple(p.get("window", [-80.0, 10.0]))
    step = float(p.get("step", 0.5))
    a, b = equilibrium_traces_from_linear(obj, window=window, step=step, opts=opts)
    (out / "a.csv").write_text(a.to_csv())
    (out / "b.csv").write_text(b.to_csv())
    try:
        u, v, diag = limit_equilibrium(obj.field(), a, b, tau=float(p.get("tau", 2.0)),
                                       max_steps=int(p.get("max_steps", 30)),
                                       tol=args.tolerance or float(p.get("tol", 1e-8)),
                                       budget=float(p.get("budget", 1e-8)), opts=opts)
    except SubEquilibriumViolation as e:
        _write_json(out, "diagnostics.json", {"command": "pullback", "preset": name, "error": str(e)},
                    "pullback-diagnostics")
        log.error("%s", e)
        return EXIT_EQUILIBRIUM
    (out / "u.csv").write_text(u.to_csv())
    (out / "v.csv").write_text(v.to_csv())
    d = diag.to_dict()
    d.update({"command": "pullback", "preset": name, "window": [u.start, u.end],
              "u_range": [float(u.head().min()), float(u.head().max())],
              "v_range": [float(v.head().min()), float(v.head().max())],
              "u_v_gap": float(np.max(np.abs(u.values - v.values)))})
    _write_json(out, "diagnostics.json", d, "pullback-diagnostics")
    return EXIT_OK


def _kamke_suite(f: VectorField, cfg, args) -> list:
    sampler = Sampler(trials=int(cfg.get("trials", 2000)), seed=args.seed,
                      tolerance=args.tolerance or 1e-10)
    reports = []
    conds = ("Kx", "Ky", "Kxy") if f.delayed else ("K1",)
    for c in conds:
        reports.append(check_condition(f, c, sampler).to_dict())
    if f.delayed:
        pairs = sample_pairs(int(cfg.get("pairs", 20)), f.dim, seed=args.seed)
        res = monotonicity_harness(f, pairs, T=float(cfg.get("T", 5.0)), opts=_opts(cfg), budget=False,
                                   jobs=args.jobs)
        reports.append(res.to_dict())
    return reports


def cmd_verify(cfg, out: Path, args) -> int:
    obj, name = resolve(cfg)
    suite = cfg.get("suite", "kamke")
    if suite == "kamke":
        reports = _kamke_suite(_field(obj), cfg, args)
        passed = all(r["verdict"] == "pass" for r in reports)
    elif suite in ("assumptions-A", "assumptions-B"):
        if isinstance(obj, VectorField):
            raise ConfigError("assumption bundles need a model preset")
        rep = models.validate_assumptions(obj, suite[-1], seed=args.seed)
        reports, passed = rep["assumptions"], rep["passed"]
    elif suite == "sublinearity":
        f = _field(obj)
        phis = sample_positive(int(cfg.get("histories", 10)), f.dim, seed=args.seed)
        res = sublinearity_harness(f, phis, T=float(cfg.get("T", 5.0)), opts=_opts(cfg), budget=False,
                                   jobs=args.jobs)
        reports, passed = [res.to_dict()], res.passed
    else:
        raise ConfigError(f"unknown suite {suite!r}")
    _write_json(out, "report.json", {"command": "verify", "preset": name, "suite": suite,
                                     "passed": passed, "reports": reports}, "verify-report")
    return EXIT_OK if passed else EXIT_VERDICT


def cmd_distance(cfg, out: Path, args) -> int:
    obj, name = resolve(cfg)
    f = _field(obj)
    d = cfg.get("distance", {})
    metric = d.get("metric", "T_P")
    fn = {"T_P": tp_distance, "sigma_P": sigma_p_distance, "T_ThetaD": theta_d_distance}.get(metric)
    if fn is None:
        raise ConfigError(f"unknown metric {metric!r}")
    rows = []
    if "other_preset" in d:
        g = _field(resolve({"preset": d["other_preset"]})[0])
        rows.append({"label": d["other_preset"], "shift": 0.0, "value": fn(f, g)})
    for k in d.get("translations_k", []):
        s = 2.0 ** -k
        rows.append({"label": f"k={k}", "shift": s, "value": fn(f, translate(f, s))})
    for s in d.get("shifts", []):
        rows.append({"label": f"s={s}", "shift": float(s), "value": fn(f, translate(f, float(s)))})
    if not rows:
        rows.append({"label": "self", "shift": 0.0, "value": fn(f, f)})
    lines = ["label,shift,value"] + [f"{r['label']},{r['shift']:.17g},{r['value']:.17g}" for r in rows]
    (out / "distances.csv").write_text("\n".join(lines) + "\n")
    _write_json(out, "report.json", {"command": "distance", "preset": name, "metric": metric, "rows": rows},
                "distance-report")
    return EXIT_OK


def cmd_decay(cfg, out: Path, args) -> int:
    d = cfg.get("decay", {})
    horizon = float(d.get("horizon", 40.0))
    s = float(d.get("s", 0.0))
    opts = _opts(cfg)
    if "alpha" in d:
        alpha, beta = signal_from_config(d["alpha"]), signal_from_config(d.get("beta", 0.0))
        F = fundamental_scalar_delay(alpha, beta, s, horizon, opts)
        name = "inline"
    else:
        obj, name = resolve(cfg)
        if isinstance(obj, models.ScalarPopulationModel):
            F = fundamental_scalar_delay(obj.alpha, obj.beta, s, horizon, opts)
        elif isinstance(obj, models.CyclicFeedbackModel):
            F = fundamental_matrix_ode(obj, s, horizon, opts=opts)
        else:
            raise ConfigError("decay needs coefficients or a model preset")
    est = fit_decay(F)
    (out / "fundamental.csv").write_text(F.to_csv())
    rep = est.to_dict()
    for key in ("K", "delta"):
        if not np.isfinite(rep[key]):
            rep[key] = None
    rep.update({"command": "decay", "preset": name, "status": "empirically validated"
                if est.verdict == "pass" else "fail"})
    _write_json(out, "decay.json", rep, "decay-report")
    return EXIT_OK if est.verdict == "pass" else EXIT_DECAY


COMMANDS = {"simulate": cmd_simulate, "pullback": cmd_pullback, "verify": cmd_verify,
            "distance": cmd_distance, "decay": cmd_decay}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monoflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", default="out", help="output directory (env MONOFLOW_OUT overrides)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = json.loads(Path(args.config).read_text())
        jsonschema.validate(cfg, load_schema("config"))
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError) as e:
        log.error("config error: %s", getattr(e, "message", e))
        return EXIT_CONFIG
    if args.seed is None:
        args.seed = int(cfg.get("seed", 0))
    out = Path(os.environ.get("MONOFLOW_OUT") or cfg.get("out") or args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, models.AssumptionError) as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except DecayFailure as e:
        log.error("%s", e)
        return EXIT_DECAY


if __name__ == "__main__":
    sys.exit(main())
