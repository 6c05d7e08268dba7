"""The skew-product semiflow (t, f, phi) -> (f_t, x_t(., f, phi)) and
empirical harnesses for order, sublinearity and continuous dependence."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import VectorField, translate
from .phase import History
from .solver import SolveOptions, _linear_slopes, integrator_budget, solve_dde, solve_dde_batch, solve_ode

CHUNK = 256


@dataclass
class HarnessResult:
    property: str
    trials: int
    worst_violation: float
    witness: dict | None
    verdict: str
    tolerance: float = 0.0
    budget: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {"property": self.property, "trials": self.trials,
                "worst_violation": self.worst_violation, "witness": self.witness,
                "verdict": self.verdict, "tolerance": self.tolerance, "budget": self.budget,
                **({"extra": self.extra} if self.extra else {})}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=float)


def flow(t: float, f: VectorField, phi, opts: SolveOptions | None = None):
    """Phi(t, f, phi) = (f_t, x_t(., f, phi)); ODE fields take a state vector."""
    if t < 0:
        raise ValueError("flow is defined for t >= 0")
    if t == 0:
        return f, phi
    if not f.delayed:
        seg = solve_ode(f, 0.0, phi, t, opts)
        seg.value(t)  # raises on blow-up
        return translate(f, t), seg.value(t)
    seg = solve_dde(f, phi, t, opts)
    return translate(f, t), seg.extract_history(t)


# ---------------------------------------------------------------- samplers

def _smooth_history(rng, dim, M, low=0.5, high=2.0):
    """Positive random trigonometric history with analytic derivative."""
    s = np.linspace(-1.0, 0.0, M + 1)
    c = rng.uniform(low, high, size=dim)
    amp = rng.uniform(0.0, 0.3, size=(3, dim)) * c
    freq = np.array([1.0, 2.0, 3.0])[:, None] * np.pi
    ph = rng.uniform(0, 2 * np.pi, size=(3, dim))
    arg = freq[None] * s[:, None, None] + ph[None]
    v = c + np.sum(amp[None] * np.sin(arg), axis=1)
    d = np.sum(amp[None] * freq[None] * np.cos(arg), axis=1)
    v = np.maximum(v, 0.05 * c)
    return v, d


def _bump(rng, dim, M, scale=1.0):
    """Nonnegative C^1 bump a*cos^2(pi(s-c)/(2w)) on |s-c|<w, per component."""
    s = np.linspace(-1.0, 0.0, M + 1)[:, None]
    c = rng.uniform(-1.0, 0.0, size=dim)
    w = rng.uniform(0.1, 0.6, size=dim)
    a = rng.uniform(0.0, scale, size=dim) * (rng.random(dim) < 0.8)
    z = np.pi * (s - c) / (2 * w)
    inside = np.abs(s - c) < w
    v = np.where(inside, a * np.cos(z) ** 2, 0.0)
    d = np.where(inside, -a * np.pi / w * np.cos(z) * np.sin(z), 0.0)
    # |d| <= 3v/cell keeps the cubic Hermite interpolant of the bump nonnegative,
    # so the pair is ordered between nodes too
    lim = 3.0 * v * M
    return v, np.clip(d, -lim, lim)


def sample_pairs(n: int, dim: int = 1, seed: int = 0, M: int = 64, scale: float = 1.0,
                 strict_at_zero: bool = False):
    """Ordered pairs phi <= psi with psi = phi + nonnegative bump.

    With ``strict_at_zero`` a ramp c(1+s), c > 0, is added as well so that
    phi(0) < psi(0) in every component."""
    rng = np.random.default_rng(seed)
    s = np.linspace(-1.0, 0.0, M + 1)[:, None]
    out = []
    for _ in range(n):
        v, d = _smooth_history(rng, dim, M)
        bv, bd = _bump(rng, dim, M, scale)
        if strict_at_zero:
            c = rng.uniform(0.05, 0.5, size=dim) * scale
            bv, bd = bv + c * (1.0 + s), bd + c
        out.append((History(v, d, d), History(v + bv, d + bd, d + bd)))
    return out


def sample_positive(n: int, dim: int = 1, seed: int = 0, M: int = 64):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        v, d = _smooth_history(rng, dim, M)
        out.append(History(v, d, d))
    return out


# ---------------------------------------------------------------- helpers

def _stack(hs: Sequence[History]):
    slopes = [(h.dright, h.dleft) if h.hermite else _linear_slopes(h.values) for h in hs]
    return (np.stack([h.values for h in hs]), np.stack([d[0] for d in slopes]),
            np.stack([d[1] for d in slopes]))


def _solve_many(f: VectorField, hs: Sequence[History], T: float, opts, times, jobs: int = 1):
    """Values at ``times`` for every history, shape (len(times), B, N).

    Chunks have a fixed size, so results do not depend on ``jobs``.
    """
    chunks = [hs[i:i + CHUNK] for i in range(0, len(hs), CHUNK)]

    def run(chunk):
        if f.delayed:
            seg = solve_dde_batch(f, _stack(chunk), T, opts)
        else:
            # ODE fields start from the history's value at 0
            seg = solve_ode(f, 0.0, np.stack([h.values[-1] for h in chunk]), T, opts)
        if seg.blew_up:
            k = int(np.nanargmin(seg.blowup_time))
            raise RuntimeError(f"blow-up of member {k} at t={seg.blowup_time[k]:.6g}")
        return seg.value(times, member=None)

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts, axis=1)


def _budget(f, phi, T, opts, enabled):
    if not enabled:
        return 0.0
    if f.delayed:
        return integrator_budget(f, phi, T, opts)
    t = _times(T)
    coarse = solve_ode(f, 0.0, phi.values[-1], T, opts).value(t)
    fine = solve_ode(f, 0.0, phi.values[-1], T, opts.halved()).value(t)
    return 16.0 / 15.0 * float(np.max(np.abs(coarse - fine))) + 1e-13


def _times(T, per_unit=64):
    return np.linspace(0.0, T, int(round(T * per_unit)) + 1)


# ---------------------------------------------------------------- harnesses

def monotonicity_harness(f: VectorField, pairs, T: float = 10.0, opts: SolveOptions | None = None,
                         tol: float = 1e-6, budget: bool = True, jobs: int = 1,
                         name: str = "") -> HarnessResult:
    """max over t, components of x(t, f, phi) - x(t, f, psi) for phi <= psi."""
    opts = opts or SolveOptions()
    pairs = list(pairs)
    t = _times(T)
    hs = [p for pair in pairs for p in pair]
    X = _solve_many(f, hs, T, opts, t, jobs)
    diff = X[:, 0::2] - X[:, 1::2]  # (T, n, N)
    viol = diff.max(axis=(0, 2))
    k = int(np.argmax(viol))
    ti = int(np.argmax(diff[:, k].max(axis=1)))
    worst = float(viol[k])
    b = _budget(f, pairs[k][1], T, opts, budget)
    verdict = "fail" if worst > tol + b else "pass"
    wit = {"preset": name or f.name, "pair": k, "t": float(t[ti]),
           "x_phi": X[ti, 2 * k].tolist(), "x_psi": X[ti, 2 * k + 1].tolist()}
    return HarnessResult("monotonicity", len(pairs), worst, wit, verdict, tol, b)


def strict_order_harness(f: VectorField, pairs, T: float = 5.0, opts: SolveOptions | None = None,
                         tol: float = 1e-6, lipschitz: Callable | None = None,
                         name: str = "") -> HarnessResult:
    """Componentwise gap x_k(t, psi) - x_k(t, phi) on (0, T] for components with
    phi_k(0) < psi_k(0): must stay positive and above gap(0) exp(-int_0^t l)."""
    opts = opts or SolveOptions()
    pairs = list(pairs)
    for phi, psi in pairs:
        if not np.any(psi.values[-1] > phi.values[-1]):
            raise ValueError("strict-order pairs need phi_k(0) < psi_k(0) for some k")
    t = _times(T)
    X = _solve_many(f, [p for pair in pairs for p in pair], T, opts, t)
    gap = X[:, 1::2] - X[:, 0::2]  # (T, n, N)
    g0 = np.stack([psi.values[-1] - phi.values[-1] for phi, psi in pairs])  # (n, N)
    active = g0 > 0
    lip = lipschitz or f.lipschitz_x
    if lip is None:
        raise ValueError("strict-order floor needs an l-bound signal")
    # int_0^t l along each member's translate
    L = lip.integral(f.shift + 0.0, f.shift + t)
    floor = g0[None] * np.exp(-L)[:, None, None]
    pos = t > 0
    g = np.where(active[None], gap, np.inf)[pos]
    fl = np.where(active[None], floor, -np.inf)[pos]
    min_gap = float(np.min(g))
    floor_viol = float(np.max(fl - g))
    worst = max(floor_viol, -min_gap)
    verdict = "fail" if (min_gap <= 0.0 or floor_viol > tol) else "pass"
    k = int(np.unravel_index(np.argmin(g - fl), g.shape)[1])
    return HarnessResult("strict-order", len(pairs), worst, {"preset": name or f.name, "pair": k},
                         verdict, tol, 0.0, {"min_gap": min_gap, "floor_violation": floor_viol})


def sublinearity_harness(f: VectorField, phis, lambdas=tuple(np.round(np.arange(1, 10) / 10, 10)),
                         T: float = 10.0, opts: SolveOptions | None = None, tol: float = 1e-6,
                         budget: bool = True, jobs: int = 1, name: str = "") -> HarnessResult:
    """max of lam x(t, f, phi) - x(t, f, lam phi); also cone preservation x >= 0."""
    from .phase import scale

    opts = opts or SolveOptions()
    phis = list(phis)
    t = _times(T)
    base = _solve_many(f, phis, T, opts, t, jobs)
    scaled = [scale(p, lam) for lam in lambdas for p in phis]
    S = _solve_many(f, scaled, T, opts, t, jobs).reshape(len(t), len(lambdas), len(phis), f.dim)
    lam = np.asarray(lambdas, dtype=float)[None, :, None, None]
    gap = S - lam * base[:, None]
    viol_sub = float(np.max(-gap))
    viol_cone = float(max(np.max(-base), np.max(-S)))
    worst = max(viol_sub, viol_cone)
    late = t > 1.0
    margin = float(np.min(gap[late])) if np.any(late) else float("nan")
    b = _budget(f, phis[0], T, opts, budget)
    idx = np.unravel_index(np.argmax(-gap), gap.shape)
    verdict = "fail" if worst > tol + b else "pass"
    wit = {"preset": name or f.name, "t": float(t[idx[0]]), "lam": float(lambdas[idx[1]]), "phi": int(idx[2])}
    return HarnessResult("sublinearity", len(phis) * len(lambdas), worst, wit, verdict, tol, b,
                         {"cone_violation": viol_cone, "min_margin_after_1": margin})


@dataclass
class ContinuityRow:
    n: int
    d_field: float
    d_history: float
    sup_error: float


def continuity_harness(f: VectorField, phi: History, fields_n: Sequence[VectorField],
                       phis_n: Sequence[History], T: float = 10.0,
                       d_field: Callable[[VectorField, VectorField], float] | None = None,
                       opts: SolveOptions | None = None, tol: float = 1e-4,
                       ns: Sequence[int] | None = None) -> tuple[list[ContinuityRow], HarnessResult]:
    """Rows (n, d(f_n, f), ||phi_n - phi||, sup_[-1,T] |x(f_n, phi_n) - x(f, phi)|)."""
    opts = opts or SolveOptions()
    ns = list(ns) if ns is not None else list(range(1, len(fields_n) + 1))
    t = np.union1d(np.linspace(-1.0, T, int(round((T + 1) * 256)) + 1), [0.0])
    same_rhs = all(g.rhs is f.rhs for g in fields_n)
    hs = [phi] + list(phis_n)
    if same_rhs:
        offsets = [0.0] + [g.shift - f.shift for g in fields_n]
        seg = solve_dde_batch(f, _stack(hs), T, opts, offsets)
        X = seg.value(t, member=None)
        ref, others = X[:, 0], [X[:, i + 1] for i in range(len(fields_n))]
    else:
        ref = solve_dde(f, phi, T, opts).value(t)
        others = [solve_dde(g, p, T, opts).value(t) for g, p in zip(fields_n, phis_n)]
    rows = []
    for n, g, p, x in zip(ns, fields_n, phis_n, others):
        dfield = d_field(f, g) if d_field else float("nan")
        rows.append(ContinuityRow(n, dfield, float(np.max(np.abs(p.values - phi.values))),
                                  float(np.max(np.abs(x - ref)))))
    errs = np.array([r.sup_error for r in rows])
    nonincreasing = bool(np.all(np.diff(errs) <= 1e-12))
    worst = float(errs[-1])
    verdict = "pass" if (nonincreasing and worst < tol) else "fail"
    res = HarnessResult("continuity", len(rows), worst, {"nonincreasing": nonincreasing}, verdict, tol)
    return rows, res


def continuity_csv(rows: Sequence[ContinuityRow]) -> str:
    lines = ["n,d_field,d_history,sup_error"]
    lines += [f"{r.n},{r.d_field:.17g},{r.d_history:.17g},{r.sup_error:.17g}" for r in rows]
    return "\n".join(lines) + "\n"
