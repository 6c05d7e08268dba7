"""Method-of-steps integration for Carathéodory ODEs and constant-delay DDEs.

All members of a batch share one local time grid.  Member ``i`` integrates
the translate f_{offsets[i]}.  The grid is the union of the h-lattice, the
declared breakpoints of every member and their forward integer shifts (where
the delayed argument crosses them), so no step straddles a jump.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fields import VectorField
from .phase import History, hermite

_DEDUP = 1e-11
MAX_DELAY_SHIFTS = 4


class SolverError(RuntimeError):
    pass


class BlowUp(SolverError):
    def __init__(self, t_star: float):
        super().__init__(f"solution norm reached the blow-up cap at t={t_star:.6g}")
        self.t_star = t_star


@dataclass(frozen=True)
class SolveOptions:
    h: float = 1.0 / 256.0
    method: str = "rk4-fixed"
    blowup_cap: float = 1e9
    tol: float = 1e-8

    def __post_init__(self):
        k = -math.log2(self.h) if self.h > 0 else float("nan")
        if not (k >= 0 and abs(k - round(k)) < 1e-12):
            raise ValueError("step h must be 1/2^k so that it divides the unit delay")
        if self.method not in ("rk4-fixed", "heun-adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.blowup_cap <= 0 or self.tol <= 0:
            raise ValueError("cap and tolerance must be positive")

    def halved(self) -> "SolveOptions":
        return SolveOptions(self.h / 2, self.method, self.blowup_cap, self.tol / 16)


def _d_hermite(t0, t1, y0, y1, d0, d1, t):
    w = t1 - t0
    u = (t - t0) / w
    return ((6 * u * u - 6 * u) * y0 / w + (3 * u * u - 4 * u + 1) * d0
            + (-6 * u * u + 6 * u) * y1 / w + (3 * u * u - 2 * u) * d1)


class _Store:
    """Growable dense-output store: times (L,), values/derivatives (L, B, N)."""

    def __init__(self, B, N, cap):
        self.n = 0
        self.ts = np.empty(cap)
        self.y = np.empty((cap, B, N))
        self.dr = np.empty((cap, B, N))
        self.dl = np.empty((cap, B, N))

    def push(self, t, y, dr, dl):
        if self.n == self.ts.size:
            for name in ("ts", "y", "dr", "dl"):
                a = getattr(self, name)
                setattr(self, name, np.concatenate([a, np.empty_like(a)]))
        i = self.n
        self.ts[i], self.y[i], self.dr[i], self.dl[i] = t, y, dr, dl
        self.n += 1
        return i

    def lookup(self, tau: float, side: int):
        n = self.n
        ts = self.ts
        i = int(ts[:n].searchsorted(tau, "right" if side > 0 else "left")) - 1
        i = min(max(i, 0), n - 2)
        t0, t1 = ts[i], ts[i + 1]
        if tau == t0:
            return self.y[i]
        if tau == t1:
            return self.y[i + 1]
        return hermite(t0, t1, self.y[i], self.y[i + 1], self.dr[i], self.dl[i + 1], tau)

    def arrays(self):
        n = self.n
        return self.ts[:n].copy(), self.y[:n].copy(), self.dr[:n].copy(), self.dl[:n].copy()


def step_grid(f: VectorField, t0: float, T: float, h: float, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Grid points in [t0, T] and a mask of points where one-sided derivatives may differ."""
    n = int(math.floor((T - t0) / h + 1e-9))
    lattice = t0 + h * np.arange(n + 1)
    if T - lattice[-1] > _DEDUP:
        lattice = np.append(lattice, T)
    flagged = [np.arange(math.ceil(t0), math.floor(T) + 1, dtype=float)]
    lo = t0 - 1.0 if f.delayed else t0
    for o in np.unique(offsets):
        bp = f.breakpoints(lo + o, T + o) - o
        if bp.size == 0:
            continue
        if f.delayed:
            # a jump at b moves into derivative k+1 at b+k; beyond order 4 RK4 no longer notices
            shifts = np.arange(0, MAX_DELAY_SHIFTS + 1, dtype=float)
            bp = (bp[None, :] + shifts[:, None]).ravel()
        flagged.append(bp[(bp > t0) & (bp < T)])
    flag = np.unique(np.concatenate(flagged))
    grid = np.union1d(lattice, flag)
    keep = np.concatenate([[True], np.diff(grid) > _DEDUP])
    grid = grid[keep]
    grid[-1] = T
    mask = np.zeros(grid.size, dtype=bool)
    if flag.size:
        j = np.clip(np.searchsorted(grid, flag), 0, grid.size - 1)
        j2 = np.clip(j - 1, 0, grid.size - 1)
        near = np.where(np.abs(grid[j] - flag) <= np.abs(grid[j2] - flag), j, j2)
        mask[near] = True
    return grid, mask


@dataclass(eq=False)
class TrajectorySegment:
    """Dense output for a batch of members on [t_start, t_end] (local time)."""

    ts: np.ndarray
    y: np.ndarray
    dr: np.ndarray
    dl: np.ndarray
    t_start: float
    t_end: float
    offsets: np.ndarray
    blowup_time: np.ndarray  # nan where complete

    @property
    def batch(self) -> int:
        return self.y.shape[1]

    @property
    def dim(self) -> int:
        return self.y.shape[2]

    @property
    def t0(self) -> float:
        return self.t_start

    @property
    def t1(self) -> float:
        return self.t_end

    def status(self, member: int = 0) -> str:
        b = self.blowup_time[member]
        return "complete" if np.isnan(b) else f"blewup({b:.6g})"

    @property
    def blew_up(self) -> bool:
        return bool(np.any(~np.isnan(self.blowup_time)))

    def _check_domain(self, t, member):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_start - 1e-12) or np.any(t > self.t_end + 1e-12):
            raise ValueError(f"query outside [{self.t_start}, {self.t_end}]")
        bt = self.blowup_time if member is None else self.blowup_time[[member]]
        if np.any(~np.isnan(bt)) and np.any(t > np.nanmin(bt) + 1e-12):
            raise BlowUp(float(np.nanmin(bt)))

    def _interp(self, t, side: int = 1, deriv: bool = False):
        """Values (or derivatives) at times t; shape t.shape + (B, N)."""
        t = np.asarray(t, dtype=float)
        ts = self.ts
        i = np.searchsorted(ts, t, side="right" if side > 0 else "left") - 1
        i = np.clip(i, 0, ts.size - 2)
        # skip the zero-width piece at a duplicated time
        zero = ts[i + 1] - ts[i] <= 0
        i = np.where(zero, np.clip(i + (1 if side > 0 else -1), 0, ts.size - 2), i)
        t0, t1 = ts[i][..., None, None], ts[i + 1][..., None, None]
        tt = t[..., None, None]
        args = (t0, t1, self.y[i], self.y[i + 1], self.dr[i], self.dl[i + 1], tt)
        if deriv:
            return _d_hermite(*args)
        out = hermite(*args)
        at0 = (t == ts[i])[..., None, None]
        at1 = (t == ts[i + 1])[..., None, None]
        return np.where(at0, self.y[i], np.where(at1, self.y[i + 1], out))

    def value(self, t, member: int | None = 0, side: int = 1):
        self._check_domain(t, member)
        out = self._interp(t, side)
        return out if member is None else out[..., member, :]

    __call__ = value

    def extract_values(self, t: float, M: int = 64):
        """x_t for every member: (values, dright, dleft) of shape (B, M+1, N)."""
        self._check_domain(np.array([t - 1.0, t]), None if self.batch > 1 else 0)
        s = t + np.linspace(-1.0, 0.0, M + 1)
        s[0], s[-1] = t - 1.0, t
        v = self._interp(s, side=-1)
        v[0] = self._interp(s[:1], side=1)[0]
        dr = self._interp(s, side=1, deriv=True)
        dl = self._interp(s, side=-1, deriv=True)
        return (np.swapaxes(v, 0, 1), np.swapaxes(dr, 0, 1), np.swapaxes(dl, 0, 1))

    def extract_history(self, t: float, member: int = 0, M: int = 64) -> History:
        if t - 1.0 < self.t_start - 1e-12 or t > self.t_end + 1e-12:
            raise ValueError(f"history window [{t - 1}, {t}] outside [{self.t_start}, {self.t_end}]")
        self._check_domain(np.array([t]), member)
        return History(*self._extract_member(t, member, M))

    def _extract_member(self, t, member, M):
        s = t + np.linspace(-1.0, 0.0, M + 1)
        s[0], s[-1] = t - 1.0, t
        v = self._interp(s, side=-1)[:, member]
        v[0] = self._interp(s[:1], side=1)[0, member]
        dr = self._interp(s, side=1, deriv=True)[:, member]
        dl = self._interp(s, side=-1, deriv=True)[:, member]
        return v, dr, dl

    def to_csv(self, member: int = 0, times: np.ndarray | None = None) -> str:
        ts = self.ts if times is None else np.asarray(times, dtype=float)
        if times is None:
            vals = self.y[:, member]
            keep = np.concatenate([np.diff(ts) > 0, [True]])
            ts, vals = ts[keep], vals[keep]
        else:
            vals = self.value(ts, member)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(self.dim)])
        for t, row in zip(ts, vals):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        return buf.getvalue()


def _integrate(f: VectorField, t0: float, T: float, opts: SolveOptions, offsets: np.ndarray,
               hist: tuple | None, x0: np.ndarray) -> TrajectorySegment:
    B, N = x0.shape
    if T <= t0:
        raise ValueError("need T > t0")
    grid, flag = step_grid(f, t0, T, opts.h, offsets)
    cap = grid.size + (hist[0].shape[1] if hist is not None else 0) + 8
    store = _Store(B, N, cap)
    abs_shift = f.shift + offsets
    if hist is not None:
        hv, hdr, hdl = hist
        M = hv.shape[1] - 1
        ratio = (1.0 / M) / opts.h
        if ratio < 1 - 1e-12 or abs(ratio - round(ratio)) > 1e-9:
            raise SolverError(f"history grid 1/{M} is incompatible with step h={opts.h}")
        hts = t0 - 1.0 + np.linspace(0.0, 1.0, M + 1)
        for k in range(M + 1):
            store.push(hts[k], hv[:, k], hdr[:, k], hdl[:, k])

    active = np.ones(B, dtype=bool)
    frozen = [False]
    blowup = np.full(B, np.nan)

    def rhs(t, x, side):
        y = store.lookup(t - 1.0, side) if f.delayed else None
        out = f.rhs(t + abs_shift, x, y, side)
        if frozen[0]:
            out = np.where(active[:, None], out, 0.0)
        return out

    x = x0.astype(float).copy()
    first = store.push(t0, x, np.zeros_like(x), np.zeros_like(x))
    k1 = rhs(t0, x, 1)
    store.dr[first] = k1
    store.dl[first] = k1
    idx = first
    for j in range(grid.size - 1):
        ta, tb = grid[j], grid[j + 1]
        if opts.method == "rk4-fixed":
            hh = tb - ta
            k2 = rhs(ta + 0.5 * hh, x + 0.5 * hh * k1, 1)
            k3 = rhs(ta + 0.5 * hh, x + 0.5 * hh * k2, 1)
            k4 = rhs(tb, x + hh * k3, -1)
            x = x + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            x, k1, idx = _heun_cell(rhs, store, ta, tb, x, k1, idx, opts.tol)
        if frozen[0]:
            x = np.where(active[:, None], x, store.y[idx])
        norms = np.abs(x).max(axis=1)
        # one reduction covers both checks: nan fails every comparison
        if not norms.max() < opts.blowup_cap:
            if not np.all(np.isfinite(x)):
                bad = int(np.argmax(~np.all(np.isfinite(x), axis=1)))
                raise SolverError(f"non-finite field evaluation or state in step ending at t={tb:.6g} "
                                  f"(member {bad})")
            hit = active & (norms >= opts.blowup_cap)
            blowup[hit] = tb
            active &= ~hit
            frozen[0] = True
        last = j == grid.size - 2
        dl = rhs(tb, x, -1) if (flag[j + 1] or last or opts.method != "rk4-fixed") else None
        k1 = rhs(tb, x, 1) if not last else dl
        idx = store.push(tb, x, k1, k1 if dl is None else dl)
        if not np.any(active):
            break
    ts, y, dr, dl = store.arrays()
    t_start = t0 - 1.0 if hist is not None else t0
    t_end = float(ts[-1])
    return TrajectorySegment(ts, y, dr, dl, t_start, t_end, np.asarray(offsets, dtype=float), blowup)


def _heun_cell(rhs, store, ta, tb, x, k1, idx, tol, max_level=10):
    """Adaptive Heun across one grid cell with an embedded Euler error estimate."""
    for level in range(max_level + 1):
        n = 2 ** level
        hh = (tb - ta) / n
        xs, ks, pts = x, k1, []
        err = 0.0
        for i in range(n):
            t = ta + i * hh
            kp = rhs(t + hh, xs + hh * ks, -1)
            xn = xs + 0.5 * hh * (ks + kp)
            err = max(err, float(np.max(0.5 * hh * np.abs(kp - ks))))
            if err > tol and level < max_level:
                break
            kn = rhs(t + hh, xn, 1)
            pts.append((t + hh, xn, kn, kp))
            xs, ks = xn, kn
        else:
            break
    # interior substep points are stored; the cell end is pushed by the caller
    for t, xn, kn, kp in pts[:-1]:
        idx = store.push(t, xn, kn, kp)
    return xs, ks, idx


def solve_dde_batch(f: VectorField, histories, T: float, opts: SolveOptions | None = None,
                    offsets: Sequence[float] | None = None, x0=None) -> TrajectorySegment:
    """Solve member i from history i for the translate f_{offsets[i]} on [0, T].

    ``histories`` is a list of History or a tuple (values, dright, dleft) of
    arrays shaped (B, M+1, N).  ``x0`` overrides x(0) while the delayed
    argument still reads the history on [-1, 0).
    """
    opts = opts or SolveOptions()
    if not f.delayed:
        raise ValueError("solve_dde_batch needs a delayed field")
    if isinstance(histories, tuple):
        hv, hdr, hdl = (np.asarray(a, dtype=float) for a in histories)
    else:
        hs = list(histories)
        if any(h.dim != f.dim for h in hs):
            raise ValueError("history dimension does not match the field")
        hv = np.stack([h.values for h in hs])
        hdr = np.stack([h.dright if h.hermite else _linear_slopes(h.values)[0] for h in hs])
        hdl = np.stack([h.dleft if h.hermite else _linear_slopes(h.values)[1] for h in hs])
    if hv.shape[2] != f.dim:
        raise ValueError("history dimension does not match the field")
    B = hv.shape[0]
    offsets = np.zeros(B) if offsets is None else np.asarray(offsets, dtype=float)
    start = hv[:, -1, :] if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), (B, f.dim))
    return _integrate(f, 0.0, T, opts, offsets, (hv, hdr, hdl), start)


def _linear_slopes(v):
    M = v.shape[0] - 1
    sl = np.diff(v, axis=0) * M
    dr = np.vstack([sl, sl[-1:]])
    dl = np.vstack([sl[:1], sl])
    return dr, dl


def solve_dde(f: VectorField, phi: History, T: float, opts: SolveOptions | None = None,
              x0=None) -> TrajectorySegment:
    return solve_dde_batch(f, [phi], T, opts, None, x0)


def solve_ode(f: VectorField, t0: float, x0, T: float, opts: SolveOptions | None = None,
              offsets: Sequence[float] | None = None) -> TrajectorySegment:
    """Solve x' = f(t, x) from x(t0) = x0; ``x0`` may be a batch (B, N)."""
    opts = opts or SolveOptions()
    x0 = np.asarray(x0, dtype=float)
    x0 = x0.reshape(1, -1) if x0.ndim <= 1 else x0
    if x0.shape[1] != f.dim:
        raise ValueError("initial state dimension does not match the field")
    B = x0.shape[0]
    offsets = np.zeros(B) if offsets is None else np.asarray(offsets, dtype=float)
    if f.delayed:
        # the non-delayed view reads y = x
        g = VectorField(dim=f.dim, rhs=lambda t, x, y, side: f.rhs(t, x, x, side), delayed=False,
                        shift=f.shift, breaks=f.breaks, name=f.name)
        return _integrate(g, t0, T, opts, offsets, None, x0)
    return _integrate(f, t0, T, opts, offsets, None, x0)


def integrator_budget(f: VectorField, phi: History, T: float, opts: SolveOptions | None = None,
                      n_times: int = 257) -> float:
    """Error budget from one step halving (Richardson estimate for a 4th order scheme)."""
    opts = opts or SolveOptions()
    coarse = solve_dde(f, phi, T, opts)
    fine = solve_dde(f, phi, T, opts.halved())
    t = np.linspace(0.0, T, n_times)
    err = float(np.max(np.abs(coarse.value(t) - fine.value(t))))
    return 16.0 / 15.0 * err + 1e-13
