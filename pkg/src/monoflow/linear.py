"""Fundamental solutions of the linear majorant/minorant equations, decay
fits and the improper integrals defining explicit semi-equilibria."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .equilibria import EquilibriumTrace
from .fields import VectorField
from .phase import History, constant as const_history
from .signals import CoefficientSignal, ReflectedSignal
from .solver import SolveOptions, TrajectorySegment, solve_dde_batch, solve_ode

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class DecayFailure(RuntimeError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


@dataclass(eq=False)
class FundamentalSolution:
    """U_f(t, s) for t in s + ts_rel (scalar or m x m)."""

    kind: str
    s: float
    ts_rel: np.ndarray
    values: np.ndarray
    segment: TrajectorySegment | None = None

    def value(self, t):
        """U_f(t, s) by dense output; zero on [s-1, s) for the scalar delay kind."""
        t = np.asarray(t, dtype=float)
        r = t - self.s
        if self.kind == "scalar-delay":
            out = np.zeros(r.shape)
            pos = r >= 0
            if np.any(pos):
                out[pos] = self.segment.value(r[pos], side=1)[..., 0]
            return out
        vals = self.segment.value(r, member=None)  # (..., m members, m comps)
        return np.swapaxes(vals, -1, -2)

    def norms(self) -> np.ndarray:
        if self.values.ndim == 1:
            return np.abs(self.values)
        return np.max(np.sum(np.abs(self.values), axis=2), axis=1)

    def to_csv(self) -> str:
        lines = ["t,s," + (",".join(f"u{i}{j}" for i in range(1, self.values.shape[1] + 1)
                                   for j in range(1, self.values.shape[1] + 1))
                           if self.values.ndim == 3 else "u")]
        for r, v in zip(self.ts_rel, self.values):
            row = np.ravel(v)
            lines.append(f"{self.s + r:.17g},{self.s:.17g}," + ",".join(f"{x:.17g}" for x in row))
        return "\n".join(lines) + "\n"


def _homogeneous_delay_field(alpha: CoefficientSignal, beta: CoefficientSignal,
                             extra_breaks: CoefficientSignal | None = None) -> VectorField:
    def rhs(t, x, y, side):
        return -alpha.value(t, side)[:, None] * x + beta.value(t, side)[:, None] * y

    def breaks(a, b):
        out = np.union1d(alpha.breakpoints(a, b), beta.breakpoints(a, b))
        if extra_breaks is not None:
            out = np.union1d(out, extra_breaks.breakpoints(a, b))
        return out

    return VectorField(dim=1, rhs=rhs, delayed=True, breaks=breaks, name="linear-homogeneous",
                       lipschitz_x=alpha)


def fundamental_scalar_delay(alpha: CoefficientSignal, beta: CoefficientSignal, s: float,
                             horizon: float, opts: SolveOptions | None = None,
                             per_unit: int = 64) -> FundamentalSolution:
    """U_f(., s) on [s, s+horizon]: unit value at s over a zero history."""
    opts = opts or SolveOptions()
    f = _homogeneous_delay_field(alpha, beta)
    seg = solve_dde_batch(f, [const_history(0.0)], horizon, opts, [s], x0=[[1.0]])
    ts = np.linspace(0.0, horizon, int(round(horizon * per_unit)) + 1)
    vals = seg.value(ts, side=1)[:, 0]
    return FundamentalSolution("scalar-delay", s, ts, vals, seg)


def _cyclic_linear_field(alphas, beta, minorant: bool) -> VectorField:
    def rhs(t, x, y, side):
        out = np.empty_like(x)
        feed = 0.0 if minorant else beta.value(t, side) * x[:, -1]
        out[:, 0] = feed - alphas[0].value(t, side) * x[:, 0]
        for i in range(1, len(alphas)):
            out[:, i] = x[:, i - 1] - alphas[i].value(t, side) * x[:, i]
        return out

    def breaks(a, b):
        out = beta.breakpoints(a, b)
        for al in alphas:
            out = np.union1d(out, al.breakpoints(a, b))
        return out

    return VectorField(dim=len(alphas), rhs=rhs, delayed=False, breaks=breaks, name="cyclic-linear")


def fundamental_matrix_ode(system, s: float, horizon: float, minorant: bool = False,
                           opts: SolveOptions | None = None, per_unit: int = 64) -> FundamentalSolution:
    """Fundamental matrix principal at s of the cyclic linear system.

    ``system`` is a CyclicFeedbackModel or a pair (alphas, beta).  With
    ``minorant`` the feedback term beta*z_m is dropped.
    """
    alphas, beta = (system.alphas, system.beta) if hasattr(system, "alphas") else system
    m = len(alphas)
    if m < 2:
        raise ValueError("cyclic system needs m >= 2")
    opts = opts or SolveOptions()
    f = _cyclic_linear_field(tuple(alphas), beta, minorant)
    seg = solve_ode(f, 0.0, np.eye(m), horizon, opts, offsets=np.full(m, s))
    ts = np.linspace(0.0, horizon, int(round(horizon * per_unit)) + 1)
    vals = np.swapaxes(seg.value(ts, member=None), 1, 2)  # (L, comp i, column j)
    return FundamentalSolution("matrix-ode", s, ts, vals, seg)


@dataclass
class DecayEstimate:
    K: float
    delta: float
    residual: float
    sample_range: tuple
    verdict: str
    witness: dict | None = None

    def to_dict(self):
        return {"K": self.K, "delta": self.delta, "residual": self.residual,
                "sample_range": list(self.sample_range), "verdict": self.verdict,
                "witness": self.witness}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def fit_decay(F: FundamentalSolution, min_horizon: float = 20.0) -> DecayEstimate:
    """Exponential majorant K e^{-delta (t-s)} from the tail-half slope of the
    log suffix-max envelope; K is the smallest constant that majorizes all samples."""
    r = F.ts_rel
    if r[-1] < min_horizon - 1e-9:
        raise ValueError(f"decay fit needs a horizon of at least {min_horizon}")
    nrm = F.norms()
    env = np.maximum.accumulate(nrm[::-1])[::-1]
    tail = r >= r[-1] / 2
    if np.any(env[tail] <= 0):
        return DecayEstimate(1.0, float("inf"), 0.0, (F.s, F.s + r[-1]), "pass")
    logenv = np.log(env[tail])
    slope, icpt = np.polyfit(r[tail], logenv, 1)
    resid = float(np.sqrt(np.mean((logenv - (slope * r[tail] + icpt)) ** 2)))
    # a growing solution has a flat suffix-max envelope, so also fit the raw norms
    raw_slope = np.polyfit(r[tail], np.log(np.maximum(nrm[tail], 1e-300)), 1)[0]
    if slope >= -1e-9 or raw_slope >= 0:
        slope = max(slope, raw_slope)
        k = int(np.argmax(nrm))
        return DecayEstimate(float("inf"), float(-slope), resid, (F.s, F.s + r[-1]), "fail",
                             {"t": float(F.s + r[k]), "s": F.s, "norm": float(nrm[k])})
    delta = float(-slope)
    K = float(max(1.0, np.max(nrm * np.exp(delta * r))))
    return DecayEstimate(K, delta, resid, (F.s, F.s + r[-1]), "pass")


def _gl_integral(fn, edges: np.ndarray) -> float:
    a, b = edges[:-1], edges[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * GL_NODES[None, :]
    return float(np.sum(half[:, None] * GL_WEIGHTS[None, :] * fn(x)))


def _cells(a: float, b: float, width: float, *sigs) -> np.ndarray:
    edges = np.linspace(a, b, max(2, int(math.ceil((b - a) / width)) + 1))
    for s in sigs:
        bp = s.breakpoints(a, b)
        edges = np.union1d(edges, bp[(bp > a) & (bp < b)])
    keep = np.concatenate([[True], np.diff(edges) > 1e-12])
    return edges[keep]


def btilde(alpha: CoefficientSignal, beta: CoefficientSignal, gamma: CoefficientSignal,
           decay: DecayEstimate, eps: float = 1e-9, t: float = 0.0, C: float | None = None,
           opts: SolveOptions | None = None) -> dict:
    """int_{-inf}^t U_f(t, s) gamma(s) ds via the adjoint equation in reflected time.

    V(r) = U_f(t, t - r) solves V'(r) = -alpha(t-r) V(r) + beta(t+1-r) V(r-1),
    V(0) = 1, V = 0 on [-1, 0).  The tail beyond depth tau is bounded by
    K C e^{-delta tau} e^delta / (e^delta - 1).
    """
    if decay.verdict != "pass":
        raise DecayFailure("decay estimate failed; refusing to integrate")
    opts = opts or SolveOptions()
    if C is None:
        C = gamma.unit_window_bound(t - 64.0, t + 64.0)
    if C == 0.0:
        return {"value": 0.0, "tau": 0.0, "tail_bound": 0.0}
    K, d = decay.K, decay.delta
    geo = math.exp(d) / math.expm1(d)
    tau = max(1.0, math.ceil(math.log(2.0 * K * C * geo / eps) / d))
    aR = ReflectedSignal(alpha).translate(-t)
    bR = ReflectedSignal(beta).translate(-t - 1.0)
    gR = ReflectedSignal(gamma).translate(-t)
    f = _homogeneous_delay_field(aR, bR, gR)
    seg = solve_dde_batch(f, [const_history(0.0)], float(tau), opts, [0.0], x0=[[1.0]])
    edges = seg.ts[seg.ts >= 0.0]
    edges = np.unique(np.concatenate([edges, gR.breakpoints(0.0, tau)]))
    value = _gl_integral(lambda r: seg._interp(r)[..., 0, 0] * gR.value(r), edges)
    tail = K * C * math.exp(-d * tau) * geo
    return {"value": value, "tau": float(tau), "tail_bound": tail}


def atilde(alpha: CoefficientSignal, h0: CoefficientSignal, eps: float = 1e-10, t: float = 0.0,
           C: float | None = None) -> dict:
    """int_{-inf}^t exp(-int_s^t alpha) h0(s) ds with a tail bound from the alpha floor."""
    floor = float(getattr(alpha, "floor", 0.0))
    if floor <= 0.0:
        raise DecayFailure("alpha has zero floor; the exponential kernel is not known to be integrable")
    if C is None:
        C = h0.unit_window_bound(t - 64.0, t + 64.0)
    if C == 0.0:
        return {"value": 0.0, "tau": 0.0, "tail_bound": 0.0}
    geo = 1.0 / -math.expm1(-floor)
    tau = max(1.0, math.ceil(math.log(2.0 * C * geo / eps) / floor))
    edges = _cells(t - tau, t, 1.0 / 16.0, alpha, h0)
    At = float(alpha.antiderivative(t))
    value = _gl_integral(lambda s: np.exp(-(At - alpha.antiderivative(s))) * h0.value(s), edges)
    return {"value": value, "tau": float(tau), "tail_bound": C * math.exp(-floor * tau) * geo}


def _depth(decay: DecayEstimate, C: float, eps: float) -> float:
    if decay.verdict != "pass":
        raise DecayFailure("decay estimate failed")
    d = decay.delta
    geo = math.exp(d) / math.expm1(d)
    return float(max(2.0, math.ceil(math.log(max(2.0 * decay.K * C * geo / eps, 1.0)) / d)))


def equilibrium_traces_from_linear(model, window=(-80.0, 10.0), step: float = 0.5, eps: float = 1e-12,
                                   decay: DecayEstimate | None = None, opts: SolveOptions | None = None,
                                   M: int = 64, max_depth: float = 400.0):
    """(a, b): a(f_t) from the minorant and b(f_t) from the majorant, each the
    bounded solution started from zero far in the past."""
    from .models import ScalarPopulationModel

    opts = opts or SolveOptions()
    lo, hi = window
    n = int(round((hi - lo) / step)) + 1
    times = lo + step * np.arange(n)
    if isinstance(model, ScalarPopulationModel):
        if decay is None:
            decay = fit_decay(fundamental_scalar_delay(model.alpha, model.beta, lo, 40.0, opts))
        C = model.gamma.unit_window_bound(lo - 64.0, hi)
        depth = min(max_depth, _depth(decay, C, eps))
        ch = model.h0.unit_window_bound(lo - 64.0, hi)
        fl = model.alpha.floor
        if fl <= 0:
            raise DecayFailure("alpha has zero floor")
        depth_a = min(max_depth, math.ceil(math.log(max(2 * ch / -math.expm1(-fl) / eps, 1.0)) / fl))
        t0 = lo - 1.0 - max(depth, depth_a)
        T = hi - t0
        maj = model.majorant()
        seg_b = solve_dde_batch(maj, [const_history(0.0, M=M)], T, opts, [t0])
        mino = model.minorant()
        seg_a = solve_ode(mino, 0.0, [0.0], T, opts, offsets=[t0])
        bv, bdr, bdl, av, adr, adl = [], [], [], [], [], []
        for t in times:
            v, dr, dl = seg_b.extract_values(t - t0, M)
            bv.append(v[0]), bdr.append(dr[0]), bdl.append(dl[0])
            s = t - t0 + np.linspace(-1.0, 0.0, M + 1)
            av.append(seg_a._interp(s, -1)[:, 0])
            adr.append(seg_a._interp(s, 1, deriv=True)[:, 0])
            adl.append(seg_a._interp(s, -1, deriv=True)[:, 0])
        a = EquilibriumTrace(lo, step, np.stack(av), np.stack(adr), np.stack(adl), "sub", True)
        b = EquilibriumTrace(lo, step, np.stack(bv), np.stack(bdr), np.stack(bdl), "super", True)
        meta = {"depth": float(lo - t0), "decay": decay.to_dict()}
        a.meta.update(meta), b.meta.update(meta)
        return a, b
    # cyclic ODE system
    if decay is None:
        decay = fit_decay(fundamental_matrix_ode(model, lo, 40.0, opts=opts))
    C = model.gamma.unit_window_bound(lo - 64.0, hi)
    depth = min(max_depth, _depth(decay, C, eps))
    t0 = lo - depth
    T = hi - t0
    zero = np.zeros((1, model.m))
    seg_b = solve_ode(model.majorant(), 0.0, zero, T, opts, offsets=[t0])
    seg_a = solve_ode(model.minorant(), 0.0, zero, T, opts, offsets=[t0])
    a = EquilibriumTrace(lo, step, seg_a.value(times - t0), kind="sub", delayed=False)
    b = EquilibriumTrace(lo, step, seg_b.value(times - t0), kind="super", delayed=False)
    a.meta["depth"] = b.meta["depth"] = float(depth)
    return a, b
