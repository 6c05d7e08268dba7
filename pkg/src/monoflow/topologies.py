"""Computable approximations of the integral seminorm topologies on
Carathéodory fields, and moduli of continuity derived from m-bounds."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import VectorField, optimal_m_bound
from .signals import CoefficientSignal

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class Modulus:
    """Nondecreasing tabulated function with theta(0) = 0 (linear interpolation)."""

    s: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.s[0] != 0.0 or self.values[0] != 0.0:
            raise ValueError("modulus must satisfy theta(0) = 0")
        if np.any(np.diff(self.values) < -1e-15):
            raise ValueError("modulus must be nondecreasing")

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        slope = self.values[-1] / self.s[-1] if self.s[-1] > 0 else 0.0
        inside = np.interp(d, self.s, self.values)
        return np.where(d > self.s[-1], self.values[-1] + slope * (d - self.s[-1]), inside)

    @classmethod
    def linear(cls, c: float, length: float = 16.0) -> "Modulus":
        return cls(np.array([0.0, length]), np.array([0.0, c * length]))


@dataclass
class SeminormBasis:
    intervals: list
    points: list
    weights: np.ndarray
    moduli: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.size != len(self.intervals) * len(self.points):
            raise ValueError("one weight per (interval, point) term")
        if np.any(self.weights <= 0) or self.weights.sum() > 1.0 + 1e-12:
            raise ValueError("weights must be positive and sum to at most 1")

    def terms(self):
        k = 0
        for I in self.intervals:
            for p in self.points:
                yield k, I, np.asarray(p, dtype=float)
                k += 1


def default_basis(f: VectorField, seed: int = 0, n_points: int = 4,
                  qs: Sequence[float] = (1, 2, 4, 8)) -> SeminormBasis:
    """Intervals [-q, q], points from a seeded integer lattice, weights 2^-(k+1)."""
    rng = np.random.default_rng(seed)
    width = 2 * f.dim if f.delayed else f.dim
    lattice = np.stack(np.meshgrid(*[np.arange(-2.0, 3.0)] * width, indexing="ij"), -1).reshape(-1, width)
    pts = lattice[np.sort(rng.choice(len(lattice), size=min(n_points, len(lattice)), replace=False))]
    intervals = [(-float(q), float(q)) for q in qs]
    n = len(intervals) * len(pts)
    return SeminormBasis(intervals, [p for p in pts], 2.0 ** -(np.arange(n) + 1.0))


def _edges(f: VectorField, g: VectorField, I, width=1.0 / 64.0):
    a, b = I
    e = np.linspace(a, b, int(np.ceil((b - a) / width)) + 1)
    for h in (f, g):
        bp = h.breakpoints(a, b)
        e = np.union1d(e, bp[(bp > a) & (bp < b)])
    return e[np.concatenate([[True], np.diff(e) > 1e-12])]


def _nodes(edges):
    a, b = edges[:-1], edges[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    t = (mid[:, None] + half[:, None] * GL_NODES[None, :]).ravel()
    w = (half[:, None] * GL_WEIGHTS[None, :]).ravel()
    return t, w


def _diff_at(f, g, t, x, y):
    return f.eval(t, x, y if f.delayed else None) - g.eval(t, x, y if g.delayed else None)


def _split(f, p):
    n = f.dim
    return (p[:n], p[n:]) if f.delayed else (p, None)


def _term(f, g, I, p, signed: bool) -> float:
    t, w = _nodes(_edges(f, g, I))
    x, y = _split(f, p)
    X = np.broadcast_to(x, (t.size, f.dim))
    Y = None if y is None else np.broadcast_to(y, (t.size, f.dim))
    d = _diff_at(f, g, t, X, Y)
    if signed:
        return float(np.max(np.abs(np.sum(w[:, None] * d, axis=0))))
    return float(np.sum(w * np.max(np.abs(d), axis=1)))


def _check(f, g):
    if f.dim != g.dim or f.delayed != g.delayed:
        raise ValueError("fields must share dimension and delay structure")


@dataclass
class DistanceReport:
    metric: str
    value: float
    terms: list

    def to_dict(self):
        return {"metric": self.metric, "value": self.value, "terms": self.terms}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _distance(f, g, basis, signed, name, detail):
    _check(f, g)
    basis = basis or default_basis(f)
    total, terms = 0.0, []
    for k, I, p in basis.terms():
        v = _term(f, g, I, p, signed)
        total += basis.weights[k] * min(1.0, v)
        terms.append({"interval": list(I), "point": p.tolist(), "seminorm": v})
    return DistanceReport(name, total, terms) if detail else total


def tp_distance(f: VectorField, g: VectorField, basis: SeminormBasis | None = None, detail: bool = False):
    """sum_k w_k min(1, int_{I_k} |f - g|(t, x_k) dt)."""
    return _distance(f, g, basis, False, "T_P", detail)


def sigma_p_distance(f: VectorField, g: VectorField, basis: SeminormBasis | None = None, detail: bool = False):
    """sum_k w_k min(1, |int_{I_k} (f - g)(t, x_k) dt|)."""
    return _distance(f, g, basis, True, "sigma_P", detail)


def _admissible(paths: np.ndarray, knots: np.ndarray, theta: Callable) -> np.ndarray:
    """Paths (P, K, N) with |x(t_i) - x(t_k)| <= theta(|t_i - t_k|) at the knots."""
    dt = np.abs(knots[:, None] - knots[None, :])
    bound = theta(dt) + 1e-12
    diff = np.max(np.abs(paths[:, :, None, :] - paths[:, None, :, :]), axis=-1)
    return np.all(diff <= bound[None], axis=(1, 2))


def theta_d_seminorm(f: VectorField, g: VectorField, I, y, j: float, theta: Callable,
                     n_lattice: int = 9, n_random: int = 64, n_knots: int = 33, seed: int = 0,
                     extra_constants: Sequence | None = None) -> dict:
    """Lower bound for sup over theta-equicontinuous x with |x| <= j of
    int_I |f - g|(t, x(t), y) dt, from constant, random-ramp and greedy paths."""
    _check(f, g)
    rng = np.random.default_rng(seed)
    N = f.dim
    a, b = I
    edges = _edges(f, g, I)
    t, w = _nodes(edges)
    knots = np.linspace(a, b, n_knots)
    levels = np.linspace(-j, j, n_lattice)
    consts = np.stack(np.meshgrid(*[levels] * N, indexing="ij"), -1).reshape(-1, N)
    if extra_constants is not None:
        consts = np.vstack([consts, np.asarray(extra_constants, dtype=float).reshape(-1, N)])
    yv = None if y is None or not f.delayed else np.asarray(y, dtype=float).reshape(N)

    def integral(path_at_t):
        X = path_at_t
        Y = None if yv is None else np.broadcast_to(yv, X.shape)
        d = _diff_at(f, g, t, X, Y)
        return float(np.sum(w * np.max(np.abs(d), axis=1)))

    best, prov = -np.inf, None
    for c in consts:
        v = integral(np.broadcast_to(c, (t.size, N)))
        if v > best:
            best, prov = v, {"family": "constant", "value": c.tolist()}

    # random ramps c + u * theta(t - a), clipped to the ball (clipping keeps the modulus)
    c0 = rng.uniform(-j, j, size=(n_random, N))
    u = rng.uniform(-1, 1, size=(n_random, N))
    ramp_t = theta(t - a)
    ramp_k = theta(knots - a)
    paths_k = np.clip(c0[:, None, :] + u[:, None, :] * ramp_k[None, :, None], -j, j)
    ok = _admissible(paths_k, knots, theta)
    for i in np.nonzero(ok)[0]:
        v = integral(np.clip(c0[i] + u[i] * ramp_t[:, None], -j, j))
        if v > best:
            best, prov = v, {"family": "random-ramp", "start": c0[i].tolist(), "direction": u[i].tolist()}

    # greedy bang-bang: at each knot move by +-theta(dk) or stay, whichever
    # maximizes the integrand over the next knot cell
    dk = knots[1] - knots[0]
    step = float(theta(dk))
    start = np.asarray(prov["value"], dtype=float) if prov["family"] == "constant" else np.zeros(N)
    path = [start]
    cur = start
    moves = [np.zeros(N)] + [s * step * np.eye(N)[i] for i in range(N) for s in (1.0, -1.0)]
    for k in range(n_knots - 1):
        tm = 0.5 * (knots[k] + knots[k + 1])
        cands = [np.clip(cur + mv, -j, j) for mv in moves]
        vals = []
        for c in cands:
            X = c[None, :]
            Y = None if yv is None else yv[None, :]
            vals.append(float(np.max(np.abs(_diff_at(f, g, np.array([tm]), X, Y)))))
        cur = cands[int(np.argmax(vals))]
        path.append(cur)
    path = np.array(path)
    if _admissible(path[None], knots, theta)[0]:
        v = integral(np.stack([np.interp(t, knots, path[:, i]) for i in range(N)], -1))
        if v > best:
            best, prov = v, {"family": "greedy", "knots": path.tolist()}
    return {"value": float(best), "lower_bound": True, "provenance": prov}


def theta_d_distance(f: VectorField, g: VectorField, basis: SeminormBasis | None = None,
                     theta: Callable | None = None, detail: bool = False, seed: int = 0):
    """Weighted sum of sampled T_ThetaD seminorms over the basis terms.

    Each term's candidates include the basis point as a constant path, so the
    result dominates tp_distance on the same basis."""
    _check(f, g)
    basis = basis or default_basis(f)
    theta = theta or Modulus.linear(1.0)
    total, terms = 0.0, []
    for k, I, p in basis.terms():
        x, y = _split(f, p)
        j = max(1.0, float(np.max(np.abs(p))))
        th = basis.moduli.get((tuple(I), j), theta)
        r = theta_d_seminorm(f, g, I, y, j, th, extra_constants=[x], seed=seed + k, n_random=16)
        total += basis.weights[k] * min(1.0, r["value"])
        terms.append({"interval": list(I), "point": p.tolist(), "seminorm": r["value"],
                      "provenance": r["provenance"]["family"]})
    return DistanceReport("T_ThetaD(lower)", total, terms) if detail else total


def moduli_from_mbounds(family: Sequence, I, j: float, cell: float = 1.0 / 64.0, **mkw) -> Modulus:
    """theta(s) = sup over t in I and members of int_t^{t+s} m^j, tabulated on s = k*cell.

    Members are CoefficientSignals (used as m directly, integrated exactly) or
    VectorFields (m-bound sampled at cell midpoints, exact for fields that are
    constant on cells)."""
    a, b = I
    L = b - a
    ks = np.arange(int(round(L / cell)) + 1)
    s = ks * cell
    starts = a + np.arange(int(round(L / cell)) + 1) * cell
    best = np.zeros_like(s)
    for m in family:
        if isinstance(m, CoefficientSignal):
            sup = np.max(m.integral(starts[:, None], starts[:, None] + s[None, :]), axis=0)
        else:
            mids = a + (np.arange(2 * len(s)) + 0.5) * cell
            mv = optimal_m_bound(m, j, mids, **mkw)
            cum = np.concatenate([[0.0], np.cumsum(mv * cell)])
            i0 = np.arange(len(starts))
            sup = np.max(cum[i0[:, None] + ks[None, :]] - cum[i0[:, None]], axis=0)
        best = np.maximum(best, sup)
    best[0] = 0.0
    return Modulus(s, np.maximum.accumulate(best))
