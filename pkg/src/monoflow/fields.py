"""Carathéodory vector fields f(t, x, y), their translates, and sampled
condition checks (Kamke-type monotonicity and sublinearity)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .signals import CoefficientSignal, constant

SHAPES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sat": lambda y: y / (1.0 + y),
    "exp": lambda y: -np.expm1(-y),
    "min": lambda y: np.minimum(y, 1.0),
    "linear": lambda y: y,
}

CONDITIONS = ("Kx", "Ky", "Kxy", "K1", "K2", "S", "strongS")


@dataclass(frozen=True)
class NonlinearitySpec:
    """h(t, y) = base(t) + gain(t) * shape(max(y, 0))."""

    base: CoefficientSignal
    gain: CoefficientSignal
    shape: str = "sat"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {sorted(SHAPES)}")

    def __call__(self, t, y, side: int = 1):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.base.value(t, side) + self.gain.value(t, side) * SHAPES[self.shape](np.maximum(y, 0.0))

    def breakpoints(self, a, b):
        return np.union1d(self.base.breakpoints(a, b), self.gain.breakpoints(a, b))

    def translate(self, s: float) -> "NonlinearitySpec":
        return NonlinearitySpec(self.base.translate(s), self.gain.translate(s), self.shape)

    def as_field(self) -> "VectorField":
        """The scalar non-delayed field x -> h(t, x), used for K2 / strongS checks."""
        h = self

        def rhs(t, x, y, side):
            return h(t[:, None], x, side)

        return VectorField(dim=1, rhs=rhs, delayed=False, breaks=h.breakpoints,
                           flags=frozenset({"K2", "S", "strongS"}), name="h")


@dataclass(frozen=True, eq=False)
class VectorField:
    """Batched evaluator ``rhs(t, x, y, side)`` in absolute time.

    ``t`` has shape (B,), ``x`` and ``y`` shape (B, N); ``y`` is ignored for
    non-delayed fields.  ``shift`` is the translation offset, so this object
    represents f_shift.  ``breaks(a, b)`` lists jump times in absolute time.
    """

    dim: int
    rhs: Callable
    delayed: bool = True
    shift: float = 0.0
    breaks: Callable | None = None
    flags: frozenset = frozenset()
    name: str = ""
    lipschitz_x: CoefficientSignal | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_callable(cls, fn: Callable, dim: int = 1, delayed: bool = True, **kw) -> "VectorField":
        """Wrap a pointwise ``fn(t, x, y) -> R^N`` (numpy-broadcasting is used when possible)."""

        def rhs(t, x, y, side):
            out = fn(t[:, None], x, y) if delayed else fn(t[:, None], x)
            return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

        return cls(dim=dim, rhs=rhs, delayed=delayed, **kw)

    def raw(self, t_abs, x, y=None, side: int = 1):
        return self.rhs(t_abs, x, y, side)

    def eval(self, t, x, y=None, side: int = 1):
        """Evaluate f_shift(t, x, y); accepts scalars or batches."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        x = np.atleast_2d(x) if x.ndim <= 1 else x
        if self.dim == 1 and x.shape[-1] != 1:
            x = x.reshape(-1, 1)
        B = max(t.size, x.shape[0], 1 if y is None else np.atleast_2d(y).shape[0])
        t = np.broadcast_to(t, (B,))
        x = np.broadcast_to(x, (B, self.dim))
        if y is not None:
            y = np.asarray(y, dtype=float)
            y = np.atleast_2d(y) if y.ndim <= 1 else y
            if self.dim == 1 and y.shape[-1] != 1:
                y = y.reshape(-1, 1)
            y = np.broadcast_to(y, (B, self.dim))
        elif self.delayed:
            raise ValueError("delayed field needs a y argument")
        out = self.rhs(t + self.shift, x, y, side)
        return out[0] if squeeze and B == 1 else out

    __call__ = eval

    def breakpoints(self, a: float, b: float) -> np.ndarray:
        if self.breaks is None:
            return np.empty(0)
        return np.asarray(self.breaks(a + self.shift, b + self.shift), dtype=float) - self.shift

    def translate(self, s: float) -> "VectorField":
        return translate(self, s)


def translate(f: VectorField, s: float) -> VectorField:
    """f_s(t, x, y) = f(s + t, x, y); offsets add, so translates compose exactly."""
    return replace(f, shift=f.shift + s)


def zero_field(dim: int = 1, delayed: bool = True) -> VectorField:
    return VectorField(dim=dim, rhs=lambda t, x, y, side: np.zeros_like(x), delayed=delayed,
                       flags=frozenset({"Kx", "Ky", "Kxy", "K1", "K2", "S"}), name="zero",
                       lipschitz_x=constant(0.0))


def _ball_points(dim: int, j: float, n_axis: int, n_random: int, rng) -> np.ndarray:
    n_axis = min(n_axis, max(2, int(65536 ** (1.0 / dim))))
    axes = [np.linspace(-j, j, n_axis)] * dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    rand = rng.uniform(-j, j, size=(n_random, dim))
    return np.vstack([grid, rand])


def optimal_m_bound(f: VectorField, j: float, times: Iterable[float], n_axis: int = 33,
                    n_random: int = 1000, seed: int = 0) -> np.ndarray:
    """Sampled m^j(t) = sup over |x|,|y| <= j of |f(t, x, y)| (sup norms)."""
    rng = np.random.default_rng(seed)
    n = f.dim
    width = 2 * n if f.delayed else n
    pts = _ball_points(width, j, n_axis, n_random, rng)
    x, y = pts[:, :n], (pts[:, n:] if f.delayed else None)
    out = []
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        vals = f.eval(np.full(len(pts), t), x, y)
        if not np.all(np.isfinite(vals)):
            bad = int(np.argmax(~np.all(np.isfinite(vals), axis=1)))
            raise FloatingPointError(f"non-finite field value at t={t}, point={pts[bad].tolist()}")
        out.append(float(np.max(np.abs(vals))))
    return np.array(out)


def optimal_l_bound(f: VectorField, j: float, times: Iterable[float], n_pairs: int = 4000,
                    seed: int = 0) -> np.ndarray:
    """Sampled Lipschitz bound l^j(t) from random pairs in the ball."""
    rng = np.random.default_rng(seed)
    n = f.dim
    width = 2 * n if f.delayed else n
    p = rng.uniform(-j, j, size=(n_pairs, width))
    q = np.clip(p + rng.normal(scale=0.05 * j, size=p.shape), -j, j)
    dist = np.max(np.abs(p - q), axis=1)
    keep = dist > 0
    p, q, dist = p[keep], q[keep], dist[keep]
    out = []
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        tt = np.full(len(p), t)
        fp = f.eval(tt, p[:, :n], p[:, n:] if f.delayed else None)
        fq = f.eval(tt, q[:, :n], q[:, n:] if f.delayed else None)
        out.append(float(np.max(np.max(np.abs(fp - fq), axis=1) / dist)))
    return np.array(out)


@dataclass(frozen=True)
class Sampler:
    trials: int = 2000
    radius: float = 4.0
    window: tuple = (-8.0, 8.0)
    lambdas: tuple = ()
    delta: float = 1.0
    tolerance: float = 1e-10
    seed: int = 0
    dim: int | None = None


@dataclass
class ConditionReport:
    condition: str
    trials: int
    worst_violation: float
    witness: dict | None
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {"condition": self.condition, "trials": self.trials,
                "worst_violation": self.worst_violation, "witness": self.witness,
                "verdict": self.verdict}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def sample_times(f: VectorField, n: int, window: Sequence[float], rng) -> np.ndarray:
    """Uniform times plus midpoints between breakpoints, never on a breakpoint."""
    a, b = window
    t = rng.uniform(a, b, size=n)
    bp = f.breakpoints(a, b)
    if bp.size:
        edges = np.concatenate([[a], bp, [b]])
        mids = 0.5 * (edges[1:] + edges[:-1])
        t[: min(len(mids), n // 4)] = mids[: min(len(mids), n // 4)]
        near = np.min(np.abs(t[:, None] - bp[None, :]), axis=1) < 1e-9
        t[near] += 1e-6
    return t


def _report(name, trials, viol, witness_fn, tol):
    k = int(np.argmax(viol))
    worst = float(viol[k])
    verdict = "fail" if worst > tol else "pass"
    return ConditionReport(name, trials, worst, witness_fn(k), verdict)


def check_condition(f: VectorField, cond: str, sampler: Sampler | None = None) -> ConditionReport:
    """Sample the named condition; a report fails iff the worst signed
    violation exceeds ``sampler.tolerance``."""
    s = sampler or Sampler()
    if cond not in CONDITIONS:
        raise ValueError(f"unknown condition {cond!r}")
    if s.dim is not None and s.dim != f.dim:
        raise ValueError(f"sampler dimension {s.dim} does not match field dimension {f.dim}")
    if cond in ("Kx", "Ky", "Kxy") and not f.delayed:
        raise ValueError(f"{cond} applies to delayed fields; use K1/K2")
    rng = np.random.default_rng(s.seed)
    n, N, R = s.trials, f.dim, s.radius
    t = sample_times(f, n, s.window, rng)

    def ev(x, y=None):
        return f.eval(t, x, y if f.delayed else None)

    def gap():
        # nonnegative increments with random sparsity so order boundaries are hit
        g = rng.exponential(0.5 * R / 4, size=(n, N))
        return g * (rng.random((n, N)) < 0.7)

    def wit(**arrays):
        return lambda k: {"t": float(t[k]), **{key: np.asarray(v[k]).tolist() for key, v in arrays.items()}}

    if cond in ("Kx", "K1", "Kxy"):
        a = rng.uniform(-R, R, size=(n, N))
        b = a + gap()
        kk = rng.integers(0, N, size=n)
        b[np.arange(n), kk] = a[np.arange(n), kk]
        if cond == "Kxy":
            c = rng.uniform(-R, R, size=(n, N))
            d = c + gap()
            # interleave pure Kx (c=d) and pure Ky (a=b) tuples
            third = n // 3
            d[:third] = c[:third]
            b[third:2 * third] = a[third:2 * third]
            fa, fb = ev(a, c), ev(b, d)
            w = wit(a=a, b=b, c=c, d=d, k=kk)
        else:
            c = rng.uniform(-R, R, size=(n, N))
            fa, fb = ev(a, c), ev(b, c)
            w = wit(a=a, b=b, c=c, k=kk) if f.delayed else wit(a=a, b=b, k=kk)
        viol = fa[np.arange(n), kk] - fb[np.arange(n), kk]
        return _report(cond, n, viol, w, s.tolerance)

    if cond == "Ky":
        a = rng.uniform(-R, R, size=(n, N))
        b = rng.uniform(-R, R, size=(n, N))
        c = b + gap()
        # include the canonical zero/positive pair
        b[0], c[0] = 0.0, 1.0
        viol = np.max(ev(a, b) - ev(a, c), axis=1)
        return _report(cond, n, viol, wit(a=a, b=b, c=c), s.tolerance)

    if cond == "K2":
        a = rng.uniform(-R, R, size=(n, N))
        b = a + gap()
        viol = np.max(ev(a) - ev(b), axis=1)
        return _report(cond, n, viol, wit(a=a, b=b), s.tolerance)

    lam_grid = np.asarray(s.lambdas, dtype=float) if len(s.lambdas) else None
    lam = lam_grid[rng.integers(0, len(lam_grid), size=n)] if lam_grid is not None else rng.uniform(0.0, 1.0, size=n)
    # log-uniform magnitudes reach the y -> 0 regime where strictness degenerates
    x = np.exp(rng.uniform(math.log(1e-12), math.log(R), size=(n, N)))
    y = np.exp(rng.uniform(math.log(1e-12), math.log(R), size=(n, N)))
    if cond == "strongS":
        lam = np.clip(lam, 1e-3, 1 - 1e-3)
    L = lam[:, None]
    if f.delayed:
        margin = ev(L * x, L * y) - L * ev(x, y)
    else:
        margin = ev(L * x) - L * ev(x)
    if cond == "S":
        viol = np.max(-margin, axis=1)
        return _report(cond, n, viol, wit(lam=lam, x=x, y=y), s.tolerance)

    # strongS: strict in some component beyond a scale-aware threshold
    ymag = np.max(np.abs(y if f.delayed else x), axis=1)
    thr = 1e-8 * (1.0 - lam) * np.minimum(ymag, 1.0)
    short = thr - np.max(margin, axis=1)  # > 0 means strictness not observed
    a, b = s.window
    nbins = max(1, int(math.floor((b - a) / s.delta)))
    bins = np.minimum(((t - a) / s.delta).astype(int), nbins - 1)
    worst, wk = -np.inf, 0
    for q in range(nbins):
        idx = np.nonzero(bins == q)[0]
        if idx.size == 0:
            continue
        # conservative: every sample in the bin must be strict, not just a positive fraction
        k = idx[np.argmax(short[idx])]
        if short[k] > worst:
            worst, wk = float(short[k]), int(k)
    verdict = "fail" if worst > 0.0 else "pass"
    witness = {"t": float(t[wk]), "lam": float(lam[wk]), "x": x[wk].tolist(), "y": y[wk].tolist(),
               "margin": float(np.max(margin[wk])), "threshold": float(thr[wk])}
    return ConditionReport(cond, n, worst, witness, verdict)


def _window_sup(signal: CoefficientSignal, r: float, width: float) -> float:
    a, b = -r, r - width
    if b < a:
        return -np.inf
    starts = np.linspace(a, b, 257)
    bp = signal.breakpoints(-r, r)
    extra = np.concatenate([bp, bp - width])
    starts = np.union1d(starts, extra[(extra >= a) & (extra <= b)])
    return float(np.max(signal.integral(starts, starts + width)))


def check_l1loc_equicontinuity(signals: Sequence[CoefficientSignal], r: float, eps: float,
                               resolution: int = 1024) -> dict:
    """Largest delta on the grid r/resolution with every window integral of
    width delta inside [-r, r] at most eps, uniformly over the family."""
    signals = list(signals)
    if not signals:
        return {"verdict": "pass", "delta": float(r)}

    def ok(k):
        w = k * r / resolution
        return max(_window_sup(s, r, w) for s in signals) <= eps + 1e-12

    if not ok(1):
        return {"verdict": "fail", "delta": 0.0}
    lo, hi = 1, 2 * resolution
    if ok(hi):
        return {"verdict": "pass", "delta": 2.0 * r}
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return {"verdict": "pass", "delta": lo * r / resolution}
