"""Histories in C([-1, 0], R^N), componentwise orders and the part metric."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np


class NotInConeInterior(ValueError):
    pass


def hermite(t0, t1, y0, y1, d0, d1, t):
    """Cubic Hermite interpolant on [t0, t1]; arrays broadcast over trailing axes."""
    w = t1 - t0
    u = (t - t0) / w
    u2, u3 = u * u, u * u * u
    h00 = 2 * u3 - 3 * u2 + 1
    h10 = u3 - 2 * u2 + u
    h01 = -2 * u3 + 3 * u2
    h11 = u3 - u2
    return h00 * y0 + h10 * w * d0 + h01 * y1 + h11 * w * d1


@dataclass(frozen=True, eq=False)
class History:
    """Samples on the uniform grid -1, -1 + 1/M, ..., 0.

    ``dright[i]`` / ``dleft[i]`` are the right / left derivatives at node i;
    when present the interpolant is piecewise cubic Hermite, otherwise
    piecewise linear.
    """

    values: np.ndarray
    dright: np.ndarray | None = None
    dleft: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 17:
            raise ValueError("history needs shape (M+1, N) with M >= 16")
        if not np.all(np.isfinite(v)):
            raise ValueError("history samples must be finite")
        object.__setattr__(self, "values", v)
        for name in ("dright", "dleft"):
            d = getattr(self, name)
            if d is not None:
                d = np.asarray(d, dtype=float).reshape(v.shape)
                object.__setattr__(self, name, d)
        if (self.dright is None) != (self.dleft is None):
            raise ValueError("give both one-sided derivatives or neither")

    @property
    def M(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-1.0, 0.0, self.M + 1)

    @property
    def hermite(self) -> bool:
        return self.dright is not None

    def __call__(self, s):
        return self.value(s)

    def value(self, s):
        """Interpolated value(s) at s in [-1, 0]; returns shape s.shape + (N,)."""
        s = np.asarray(s, dtype=float)
        if np.any(s < -1.0 - 1e-12) or np.any(s > 1e-12):
            raise ValueError("history is defined on [-1, 0]")
        M = self.M
        x = (np.clip(s, -1.0, 0.0) + 1.0) * M
        i = np.clip(np.floor(x).astype(int), 0, M - 1)
        t0 = i / M - 1.0
        t1 = (i + 1) / M - 1.0
        y0, y1 = self.values[i], self.values[i + 1]
        ss = s[..., None]
        if self.hermite:
            out = hermite(t0[..., None], t1[..., None], y0, y1, self.dright[i], self.dleft[i + 1], ss)
        else:
            u = (x - i)[..., None]
            out = (1 - u) * y0 + u * y1
        exact = np.isclose(x, np.round(x), rtol=0, atol=1e-9)
        if np.any(exact):
            out = np.where(exact[..., None], self.values[np.round(x).astype(int)], out)
        return out

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s"] + [f"x{i + 1}" for i in range(self.dim)])
        for s, row in zip(self.nodes, self.values):
            w.writerow([f"{s:.17g}"] + [f"{v:.17g}" for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        d = {"s": self.nodes.tolist(), "values": self.values.tolist()}
        if self.dright is not None:
            d.update(dright=self.dright.tolist(), dleft=self.dleft.tolist())
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "History":
        d = json.loads(text)
        arr = lambda k: None if d.get(k) is None else np.asarray(d[k], dtype=float)
        return cls(arr("values"), arr("dright"), arr("dleft"))

    @classmethod
    def from_csv(cls, text: str) -> "History":
        rows = list(csv.reader(io.StringIO(text)))
        return cls(np.asarray(rows[1:], dtype=float)[:, 1:])


def constant(c, dim: int = 1, M: int = 64) -> History:
    c = np.broadcast_to(np.asarray(c, dtype=float), (dim,))
    z = np.zeros((M + 1, dim))
    return History(np.tile(c, (M + 1, 1)), z, z)


def from_function(fn: Callable, dim: int = 1, M: int = 64, derivative: Callable | None = None) -> History:
    """Sample ``fn`` on the grid; derivatives come from ``derivative`` or a
    cubic spline through the samples."""
    s = np.linspace(-1.0, 0.0, M + 1)
    v = np.asarray(fn(s), dtype=float).reshape(M + 1, dim)
    if derivative is not None:
        d = np.asarray(derivative(s), dtype=float).reshape(M + 1, dim)
    else:
        from scipy.interpolate import CubicSpline

        d = CubicSpline(s, v, axis=0)(s, 1)
    return History(v, d, d)


def _check(phi: History, psi: History):
    if phi.values.shape != psi.values.shape:
        raise ValueError(f"grid mismatch: {phi.values.shape} vs {psi.values.shape}")


def order_leq(phi: History, psi: History, slack: float = 0.0) -> bool:
    _check(phi, psi)
    return bool(np.all(phi.values <= psi.values + slack))


def order_lt(phi: History, psi: History, slack: float = 0.0) -> bool:
    return order_leq(phi, psi, slack) and not bool(np.array_equal(phi.values, psi.values))


def order_ll(phi: History, psi: History) -> bool:
    _check(phi, psi)
    return bool(np.all(phi.values < psi.values))


def part_metric_arrays(a: np.ndarray, b: np.ndarray, axis=None) -> np.ndarray:
    """max |log(b/a)| over ``axis`` (all axes by default)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise NotInConeInterior("not in interior of cone: nonpositive node value")
    return np.max(np.abs(np.log(b) - np.log(a)), axis=axis)


def part_metric(phi: History, psi: History) -> float:
    _check(phi, psi)
    return float(part_metric_arrays(phi.values, psi.values))


def part_metric_norm_bound(p: float, x_norm: float, y_norm: float) -> float:
    """Upper bound on ||x - y|| implied by the part metric p."""
    return (2.0 * np.exp(p) - np.exp(-p) - 1.0) * min(x_norm, y_norm)


def scale(phi: History, lam: float) -> History:
    if phi.hermite:
        return History(lam * phi.values, lam * phi.dright, lam * phi.dleft)
    return History(lam * phi.values)


def affine(phi: History, psi: History, theta: float) -> History:
    _check(phi, psi)
    v = (1 - theta) * phi.values + theta * psi.values
    if phi.hermite and psi.hermite:
        return History(v, (1 - theta) * phi.dright + theta * psi.dright,
                       (1 - theta) * phi.dleft + theta * psi.dleft)
    return History(v)
