"""Semi-equilibria sampled along a translate orbit, pullback iteration and
attraction diagnostics."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .fields import VectorField
from .phase import History, part_metric_arrays
from .solver import SolveOptions, solve_dde_batch, solve_ode


class SubEquilibriumViolation(RuntimeError):
    """Pullback increments changed sign beyond the budget."""


class WindowUnderflow(ValueError):
    pass


@dataclass(eq=False)
class EquilibriumTrace:
    """t -> a(f_t) on the grid start + k*step.

    Delayed traces store histories, ``values`` of shape (n, M+1, N) with node
    derivatives; ODE traces store states of shape (n, N).
    """

    start: float
    step: float
    values: np.ndarray
    dright: np.ndarray | None = None
    dleft: np.ndarray | None = None
    kind: str = "sub"
    delayed: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.delayed:
            if self.values.ndim != 3:
                raise ValueError("delayed trace values need shape (n, M+1, N)")
            z = np.zeros_like(self.values)
            if self.dright is None:
                # piecewise-linear node slopes
                M = self.values.shape[1] - 1
                sl = np.diff(self.values, axis=1) * M
                self.dright = np.concatenate([sl, sl[:, -1:]], axis=1)
                self.dleft = np.concatenate([sl[:, :1], sl], axis=1)
            elif self.dleft is None:
                self.dleft = z + self.dright
        elif self.values.ndim != 2:
            raise ValueError("ODE trace values need shape (n, N)")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.n)

    @property
    def end(self) -> float:
        return self.start + self.step * (self.n - 1)

    def index(self, t: float) -> int:
        k = (t - self.start) / self.step
        kr = int(round(k))
        if abs(k - kr) > 1e-9 or kr < 0 or kr >= self.n:
            raise WindowUnderflow(f"t={t} is not a trace sample in [{self.start}, {self.end}]")
        return kr

    def at(self, t: float):
        k = self.index(t)
        if self.delayed:
            return History(self.values[k], self.dright[k], self.dleft[k])
        return self.values[k].copy()

    def head(self) -> np.ndarray:
        """Value at s = 0 of each sample (the scalar trace t -> a(f_t)(0))."""
        return self.values[:, -1, :] if self.delayed else self.values

    def window(self, a: float, b: float) -> "EquilibriumTrace":
        i, j = self.index(a), self.index(b)
        sl = slice(i, j + 1)
        return EquilibriumTrace(self.start + i * self.step, self.step, self.values[sl],
                                None if self.dright is None else self.dright[sl],
                                None if self.dleft is None else self.dleft[sl],
                                self.kind, self.delayed, dict(self.meta))

    def replace_kind(self, kind: str) -> "EquilibriumTrace":
        return EquilibriumTrace(self.start, self.step, self.values, self.dright, self.dleft, kind,
                                self.delayed, dict(self.meta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = self.head()
        w.writerow(["t"] + [f"x{i + 1}" for i in range(head.shape[1])])
        for t, row in zip(self.times, head):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        return buf.getvalue()


def constant_trace(value, start: float, end: float, step: float, delayed: bool = True,
                   dim: int = 1, M: int = 64, kind: str = "sub") -> EquilibriumTrace:
    n = int(round((end - start) / step)) + 1
    v = np.broadcast_to(np.asarray(value, dtype=float), (dim,))
    if delayed:
        vals = np.broadcast_to(v, (n, M + 1, dim)).copy()
        z = np.zeros_like(vals)
        return EquilibriumTrace(start, step, vals, z, z.copy(), kind, True)
    return EquilibriumTrace(start, step, np.broadcast_to(v, (n, dim)).copy(), kind=kind, delayed=False)


def _advance(f: VectorField, tr: EquilibriumTrace, idx: np.ndarray, s: float, opts: SolveOptions):
    """x_s(., f_{t_i}, tr(t_i)) for the sample indices ``idx``."""
    offsets = tr.times[idx]
    if tr.delayed:
        seg = solve_dde_batch(f, (tr.values[idx], tr.dright[idx], tr.dleft[idx]), s, opts, offsets)
        if seg.blew_up:
            raise RuntimeError("blow-up during pullback")
        return seg.extract_values(s, tr.values.shape[1] - 1)
    seg = solve_ode(f, 0.0, tr.values[idx], s, opts, offsets)
    if seg.blew_up:
        raise RuntimeError("blow-up during pullback")
    return seg.value(s, member=None), None, None


def pullback_step(f: VectorField, a: EquilibriumTrace, tau: float,
                  opts: SolveOptions | None = None) -> EquilibriumTrace:
    """a_tau(f_t) = x_tau(., f_{t-tau}, a(f_{t-tau})) on the window shifted left by tau."""
    opts = opts or SolveOptions()
    if tau == 0:
        return a
    k = tau / a.step
    if abs(k - round(k)) > 1e-9 or tau < 0:
        raise ValueError("tau must be a nonnegative multiple of the trace step")
    k = int(round(k))
    if k >= a.n:
        raise WindowUnderflow(f"tau={tau} exceeds the trace window length {a.end - a.start}")
    v, dr, dl = _advance(f, a, np.arange(a.n - k), tau, opts)
    return EquilibriumTrace(a.start + tau, a.step, v, dr, dl, a.kind, a.delayed, dict(a.meta))


def _common(x: EquilibriumTrace, y: EquilibriumTrace):
    lo, hi = max(x.start, y.start), min(x.end, y.end)
    return x.window(lo, hi), y.window(lo, hi)


@dataclass
class PullbackDiagnostics:
    increments_a: list
    increments_b: list
    steps_a: int
    steps_b: int
    sandwich_residual: float
    converged: bool

    def to_dict(self):
        return {"increments_a": self.increments_a, "increments_b": self.increments_b,
                "steps_a": self.steps_a, "steps_b": self.steps_b,
                "sandwich_residual": self.sandwich_residual, "converged": self.converged}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _iterate(f, tr, tau, max_steps, tol, budget, sign, opts):
    incs = []
    cur = tr
    done = max_steps == 0
    for _ in range(max_steps):
        nxt = pullback_step(f, cur, tau, opts)
        old, new = _common(cur, nxt)
        d = sign * (new.values - old.values)
        if np.min(d) < -budget:
            which = "sub" if sign > 0 else "super"
            raise SubEquilibriumViolation(
                f"{which}-equilibrium property violated: increment {np.min(d):.3e} below -{budget:g}")
        inc = float(np.max(np.abs(d)))
        incs.append(inc)
        cur = nxt
        if inc < tol:
            done = True
            break
    return cur, incs, done


def limit_equilibrium(f: VectorField, a: EquilibriumTrace, b: EquilibriumTrace, tau: float = 2.0,
                      max_steps: int = 30, tol: float = 1e-8, budget: float = 1e-8,
                      opts: SolveOptions | None = None):
    """Monotone pullback limits u (from the sub trace a) and v (from the super trace b)."""
    opts = opts or SolveOptions()
    aa, bb = _common(a, b)
    if np.any(aa.values > bb.values + budget):
        raise SubEquilibriumViolation("sandwich precondition a <= b fails")
    u, inc_a, ok_a = _iterate(f, a, tau, max_steps, tol, budget, +1, opts)
    v, inc_b, ok_b = _iterate(f, b, tau, max_steps, tol, budget, -1, opts)
    u, v = _common(u, v)
    u, v = u.replace_kind("equilibrium-candidate"), v.replace_kind("equilibrium-candidate")
    res = float(max(0.0, np.max(u.values - v.values)))
    return u, v, PullbackDiagnostics(inc_a, inc_b, len(inc_a), len(inc_b), res, ok_a and ok_b)


def equilibrium_residual(u: EquilibriumTrace, f: VectorField, s: float,
                         opts: SolveOptions | None = None) -> float:
    """max_t || u(f_{t+s}) - x_s(., f_t, u(f_t)) ||."""
    opts = opts or SolveOptions()
    k = int(round(s / u.step))
    if abs(s / u.step - k) > 1e-9 or k <= 0:
        raise ValueError("s must be a positive multiple of the trace step")
    if k >= u.n:
        raise WindowUnderflow("horizon exceeds the trace window")
    idx = np.arange(u.n - k)
    v, _, _ = _advance(f, u, idx, s, opts)
    return float(np.max(np.abs(v - u.values[idx + k])))


@dataclass
class AttractionSeries:
    t: np.ndarray
    p: np.ndarray
    norm: np.ndarray
    bound: np.ndarray

    def to_csv(self) -> str:
        lines = ["t,part_metric,norm_distance,norm_bound"]
        lines += [f"{a:.17g},{b:.17g},{c:.17g},{d:.17g}" for a, b, c, d in
                  zip(self.t, self.p, self.norm, self.bound)]
        return "\n".join(lines) + "\n"

    def nonincreasing(self, budget: float = 1e-8) -> bool:
        return bool(np.all(np.diff(self.p) <= budget))

    def bound_holds(self) -> bool:
        return bool(np.all(self.norm <= self.bound + 1e-12))


def forward_attraction(f: VectorField, u: EquilibriumTrace, phi, T: float,
                       opts: SolveOptions | None = None) -> AttractionSeries:
    """p(t) = part_metric(u(f_t), x_t(., f, phi)) at trace samples in [0, T]."""
    opts = opts or SolveOptions()
    ts = u.times[(u.times >= -1e-12) & (u.times <= T + 1e-12)]
    if ts.size == 0 or abs(ts[0]) > 1e-12 or abs(ts[-1] - T) > 1e-9:
        raise WindowUnderflow("trace window must contain [0, T] on its grid")
    if u.delayed:
        seg = solve_dde_batch(f, [phi], T, opts)
        xs = np.stack([seg.extract_values(t, u.values.shape[1] - 1)[0][0] for t in ts])
        us = np.stack([u.values[u.index(t)] for t in ts])
        axes = (1, 2)
    else:
        seg = solve_ode(f, 0.0, phi, T, opts)
        xs = seg.value(ts)
        us = np.stack([u.values[u.index(t)] for t in ts])
        axes = (1,)
    if np.any(xs <= 0):
        raise ValueError("trajectory left the interior of the cone")
    p = part_metric_arrays(us, xs, axis=axes)
    norm = np.max(np.abs(us - xs), axis=axes)
    un, xn = np.max(np.abs(us), axis=axes), np.max(np.abs(xs), axis=axes)
    bound = (2 * np.exp(p) - np.exp(-p) - 1) * np.minimum(un, xn)
    return AttractionSeries(ts, p, norm, bound)
