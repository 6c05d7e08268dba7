"""Nonnegative time signals with exact antiderivatives.

Every signal is evaluated in its own raw frame shifted by ``offset``; all
translations go through :meth:`CoefficientSignal.translate`, which only adds
to the offset.  Values at jumps are one-sided: ``side=+1`` returns the right
limit and ``side=-1`` the left limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
_BLOCK = 4096
# one-sided lookups treat points this close to a jump as lying on it, so that
# rounding in t_local + offset cannot select the wrong cell
_SNAP = 1e-10


def _as_array(t):
    return np.asarray(t, dtype=float)


class CoefficientSignal:
    """Base class; subclasses implement ``_raw_value``, ``_raw_antiderivative``
    and ``_raw_breakpoints`` in the un-shifted frame."""

    kind: str = ""
    offset: float = 0.0
    floor: float = 0.0
    period: float | None = None

    def _shift(self, t):
        return t + self.offset if self.offset else t

    def value(self, t, side: int = 1):
        t = _as_array(t)
        return self._raw_value(self._shift(t), side)

    def __call__(self, t, side: int = 1):
        return self.value(t, side)

    def antiderivative(self, t):
        t = _as_array(t)
        return self._raw_antiderivative(self._shift(t))

    def integral(self, a, b):
        """Exact integral over [a, b] (vectorized in a and b)."""
        return self.antiderivative(b) - self.antiderivative(a)

    def breakpoints(self, a: float, b: float) -> np.ndarray:
        """Jump/kink times inside [a, b], sorted, in the translated frame."""
        raw = self._raw_breakpoints(self._shift(a), self._shift(b))
        return raw - self.offset if self.offset else raw

    def translate(self, s: float):
        return replace(self, offset=self.offset + s)

    def unit_window_bound(self, a: float = -64.0, b: float = 64.0, n: int = 4097) -> float:
        """sup of the integral over unit windows [t, t+1] with t in [a, b]."""
        starts = np.union1d(np.linspace(a, b, n), self.breakpoints(a, b + 1.0))
        starts = np.union1d(starts, self.breakpoints(a, b + 1.0) - 1.0)
        starts = starts[(starts >= a) & (starts <= b)]
        return float(np.max(self.integral(starts, starts + 1.0)))

    def unit_window_infimum(self, a: float = -64.0, b: float = 64.0, n: int = 4097) -> float:
        starts = np.union1d(np.linspace(a, b, n), self.breakpoints(a, b + 1.0))
        starts = np.union1d(starts, self.breakpoints(a, b + 1.0) - 1.0)
        starts = starts[(starts >= a) & (starts <= b)]
        return float(np.min(self.integral(starts, starts + 1.0)))


def _periodic_range(starts: np.ndarray, period: float, a: float, b: float) -> np.ndarray:
    k0 = math.floor(a / period) - 1
    k1 = math.floor(b / period) + 1
    shifts = np.arange(k0, k1 + 1, dtype=float) * period
    pts = (shifts[:, None] + starts[None, :]).ravel()
    return np.sort(pts[(pts >= a) & (pts <= b)])


@dataclass(frozen=True)
class StepSignal(CoefficientSignal):
    """Piecewise-constant signal; cell i covers [starts[i], starts[i+1]).

    Periodic signals need ``starts[0] == 0`` and cells covering [0, period).
    Aperiodic signals extend their first and last values to infinity.
    """

    starts: tuple
    values: tuple
    period: float | None = None
    floor: float = 0.0
    offset: float = 0.0
    kind: str = "step"

    def __post_init__(self):
        s = np.asarray(self.starts, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if s.shape != v.shape or s.ndim != 1 or s.size == 0:
            raise ValueError("starts and values must be equal-length 1-d sequences")
        if np.any(np.diff(s) <= 0):
            raise ValueError("starts must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("signal values must be nonnegative")
        if np.any(v < self.floor):
            raise ValueError("signal value below declared floor")
        if self.period is not None:
            if s[0] != 0.0 or s[-1] >= self.period:
                raise ValueError("periodic cells must start at 0 and lie in [0, period)")
        object.__setattr__(self, "_s", s)
        object.__setattr__(self, "_v", v)
        widths = np.diff(np.append(s, self.period if self.period is not None else s[-1]))
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(v * widths)]))
        object.__setattr__(self, "_const_arrays", {} if v.size == 1 else None)

    def value(self, t, side: int = 1):
        # constant fast path: shared read-only arrays, one per shape
        cache = self._const_arrays
        if cache is None:
            return super().value(t, side)
        shape = np.shape(t)
        out = cache.get(shape)
        if out is None:
            out = np.full(shape, self._v[0])
            out.flags.writeable = False
            cache[shape] = out
        return out

    def _cell(self, r, side):
        idx = np.searchsorted(self._s, r, side="right" if side > 0 else "left") - 1
        if self.period is None:
            return np.maximum(idx, 0)
        return np.where(idx < 0, self._s.size - 1, idx)

    def _reduce(self, t):
        if self.period is None:
            return t
        return np.mod(t, self.period)

    def _raw_value(self, t, side):
        if self._v.size == 1:
            return np.full(np.shape(t), self._v[0])
        return self._v[self._cell(self._reduce(t + side * _SNAP), side)]

    def _raw_antiderivative(self, t):
        if self.period is None:
            idx = np.clip(np.searchsorted(self._s, t, side="right") - 1, 0, None)
            return self._cum[idx] + self._v[idx] * (t - self._s[idx])
        n = np.floor(t / self.period)
        r = t - n * self.period
        idx = np.clip(np.searchsorted(self._s, r, side="right") - 1, 0, None)
        return n * self._cum[-1] + self._cum[idx] + self._v[idx] * (r - self._s[idx])

    def _raw_breakpoints(self, a, b):
        if self.period is None:
            s = self._s[1:]
            return s[(s >= a) & (s <= b)]
        return _periodic_range(self._s, self.period, a, b)


@dataclass(frozen=True)
class PiecewiseLinearSignal(CoefficientSignal):
    """Continuous piecewise-linear signal through (knots[i], values[i]).

    Periodic signals close the last segment back to values[0] at ``period``.
    """

    knots: tuple
    values: tuple
    period: float | None = None
    floor: float = 0.0
    offset: float = 0.0
    kind: str = "piecewise-linear"

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.shape != v.shape or k.size < 1:
            raise ValueError("knots and values must match")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(v < self.floor) or np.any(v < 0):
            raise ValueError("signal value below floor / negative")
        if self.period is not None:
            if k[0] != 0.0 or k[-1] >= self.period:
                raise ValueError("periodic knots must start at 0 and lie in [0, period)")
            k = np.append(k, self.period)
            v = np.append(v, v[0])
        seg = np.diff(k) * 0.5 * (v[1:] + v[:-1])
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))

    def _raw_value(self, t, side):
        r = np.mod(t, self.period) if self.period is not None else t
        return np.interp(r, self._k, self._v)

    def _partial(self, r):
        k, v = self._k, self._v
        idx = np.clip(np.searchsorted(k, r, side="right") - 1, 0, k.size - 2) if k.size > 1 else np.zeros_like(r, dtype=int)
        if k.size == 1:
            return v[0] * (r - k[0])
        d = r - k[idx]
        width = k[idx + 1] - k[idx]
        slope = (v[idx + 1] - v[idx]) / width
        inside = self._cum[idx] + v[idx] * d + 0.5 * slope * d * d
        before = v[0] * (r - k[0])
        after = self._cum[-1] + v[-1] * (r - k[-1])
        return np.where(r < k[0], before, np.where(r > k[-1], after, inside))

    def _raw_antiderivative(self, t):
        if self.period is None:
            return self._partial(t)
        n = np.floor(t / self.period)
        r = t - n * self.period
        return n * self._cum[-1] + self._partial(r)

    def _raw_breakpoints(self, a, b):
        if self.period is None:
            k = self._k
            return k[(k >= a) & (k <= b)]
        return _periodic_range(self._k[:-1], self.period, a, b)


def _pos_sine_primitive(theta):
    """Antiderivative of max(sin, 0) with value 0 at theta = 0."""
    n = np.floor(theta / TWO_PI)
    r = theta - n * TWO_PI
    return 2.0 * n + np.where(r <= math.pi, 1.0 - np.cos(r), 2.0)


@dataclass(frozen=True)
class QuasiPeriodicSignal(CoefficientSignal):
    """``base + sum_k amp_k * max(sin(freq_k t + phase_k), 0)``.

    The antiderivative is closed form, so ``integral`` is exact.  Rectified
    sines are continuous, hence no breakpoints are declared.
    """

    base: float
    terms: tuple  # ((amp, freq, phase), ...)
    offset: float = 0.0
    kind: str = "quasi-periodic"

    def __post_init__(self):
        if self.base < 0 or any(a < 0 for a, _, _ in self.terms):
            raise ValueError("quasi-periodic amplitudes must be nonnegative")
        if any(w <= 0 for _, w, _ in self.terms):
            raise ValueError("frequencies must be positive")

    @property
    def floor(self) -> float:  # type: ignore[override]
        return self.base

    def _raw_value(self, t, side):
        out = np.full(np.shape(t), float(self.base))
        for amp, w, ph in self.terms:
            out = out + amp * np.maximum(np.sin(w * t + ph), 0.0)
        return out

    def _raw_antiderivative(self, t):
        out = self.base * t
        for amp, w, ph in self.terms:
            out = out + amp * (_pos_sine_primitive(w * t + ph) - _pos_sine_primitive(np.asarray(ph))) / w
        return out

    def _raw_breakpoints(self, a, b):
        return np.empty(0)

    def discretize(self, cell: float = 1.0 / 64.0) -> "CellAverageSignal":
        return CellAverageSignal(source=self, cell=cell)


@dataclass(frozen=True)
class CellAverageSignal(CoefficientSignal):
    """Step approximation of ``source``: on each cell [k c, (k+1) c) the value
    is the exact cell average, so antiderivatives agree at cell boundaries."""

    source: CoefficientSignal
    cell: float = 1.0 / 64.0
    offset: float = 0.0
    kind: str = "step"
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def floor(self) -> float:  # type: ignore[override]
        return self.source.floor

    def _edge_primitive(self, k):
        """source antiderivative at cell edges k*cell, cached in blocks shared by translates."""
        k = np.asarray(k, dtype=np.int64)
        blk = np.floor_divide(k, _BLOCK)
        b0 = int(blk.flat[0]) if blk.size else 0
        if blk.size and np.all(blk == b0):
            return self._block(b0)[k - b0 * _BLOCK]
        out = np.empty(k.shape)
        for b in np.unique(blk):
            sel = blk == b
            out[sel] = self._block(int(b))[k[sel] - int(b) * _BLOCK]
        return out

    def _block(self, b: int) -> np.ndarray:
        tab = self._cache.get(b)
        if tab is None:
            edges = (b * _BLOCK + np.arange(_BLOCK + 1)) * self.cell
            tab = self.source.antiderivative(edges)
            self._cache[b] = tab
        return tab

    def _cell_value(self, k):
        k = np.asarray(k, dtype=np.int64)
        e = self._edge_primitive(np.stack([k, k + 1]))
        return (e[1] - e[0]) / self.cell

    def _raw_value(self, t, side):
        x = (t + side * _SNAP) / self.cell
        if np.size(x) == 1:
            xs = float(np.reshape(x, ()))
            k = math.floor(xs) if side > 0 else math.ceil(xs) - 1
            key = ("v", k)
            v = self._cache.get(key)
            if v is None:
                v = float(self._cell_value(k))
                self._cache[key] = v
            return np.full(np.shape(x), v)
        k = np.floor(x) if side > 0 else np.ceil(x) - 1.0
        return self._cell_value(k)

    def _raw_antiderivative(self, t):
        k = np.floor(t / self.cell)
        return self._edge_primitive(k) + self._cell_value(k) * (t - k * self.cell)

    def _raw_breakpoints(self, a, b):
        k0 = math.ceil(a / self.cell)
        k1 = math.floor(b / self.cell)
        return np.arange(k0, k1 + 1, dtype=float) * self.cell


@dataclass(frozen=True)
class ReflectedSignal(CoefficientSignal):
    """t -> source(-t); left and right limits swap under reflection."""

    source: CoefficientSignal
    offset: float = 0.0

    @property
    def kind(self) -> str:  # type: ignore[override]
        return self.source.kind

    @property
    def floor(self) -> float:  # type: ignore[override]
        return self.source.floor

    def _raw_value(self, t, side):
        return self.source.value(-t, -side)

    def _raw_antiderivative(self, t):
        return -self.source.antiderivative(-t)

    def _raw_breakpoints(self, a, b):
        return np.sort(-self.source.breakpoints(-b, -a))


@dataclass(frozen=True)
class ScaledSignal(CoefficientSignal):
    source: CoefficientSignal
    factor: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.factor < 0:
            raise ValueError("factor must be nonnegative")

    @property
    def kind(self) -> str:  # type: ignore[override]
        return self.source.kind

    @property
    def floor(self) -> float:  # type: ignore[override]
        return self.factor * self.source.floor

    def _raw_value(self, t, side):
        return self.factor * self.source.value(t, side)

    def _raw_antiderivative(self, t):
        return self.factor * self.source.antiderivative(t)

    def _raw_breakpoints(self, a, b):
        return self.source.breakpoints(a, b)


def constant(c: float) -> StepSignal:
    return StepSignal(starts=(0.0,), values=(float(c),), floor=float(c))


def step(starts: Sequence[float], values: Sequence[float], period: float | None = None) -> StepSignal:
    values = tuple(float(v) for v in values)
    return StepSignal(starts=tuple(float(s) for s in starts), values=values, period=period,
                      floor=min(values))


def spike(base: float, mass: float, width: float, period: float, center: float = 0.0) -> StepSignal:
    """Periodic box pulses of height ``mass/width`` on [center, center+width)."""
    if not 0 < width < period:
        raise ValueError("need 0 < width < period")
    c = center % period
    top = base + mass / width
    if c == 0.0:
        starts, values = (0.0, width), (top, base)
    elif c + width < period:
        starts, values = (0.0, c, c + width), (base, top, base)
    elif c + width == period:
        starts, values = (0.0, c), (base, top)
    else:
        starts, values = (0.0, c + width - period, c), (top, base, top)
    return StepSignal(starts=starts, values=values, period=period, floor=base, kind="spike")


def quasi_periodic(base: float, amps: Sequence[float] = (0.5, 0.5),
                   freqs: Sequence[float] = (1.0, math.sqrt(2.0)),
                   phases: Sequence[float] | None = None, cell: float | None = 1.0 / 64.0):
    phases = phases if phases is not None else (0.0,) * len(amps)
    sig = QuasiPeriodicSignal(base=float(base), terms=tuple(zip(amps, freqs, phases)))
    return sig.discretize(cell) if cell else sig


def signal_from_config(cfg) -> CoefficientSignal:
    """Build a signal from its JSON description (see docs/schemas/config.schema.json)."""
    if isinstance(cfg, (int, float)):
        return constant(cfg)
    if "constant" in cfg:
        return constant(cfg["constant"])
    kind = cfg.get("kind")
    if kind == "step":
        return step(cfg["starts"], cfg["values"], cfg.get("period"))
    if kind == "piecewise-linear":
        vals = [float(v) for v in cfg["values"]]
        return PiecewiseLinearSignal(knots=tuple(cfg["knots"]), values=tuple(vals),
                                     period=cfg.get("period"), floor=min(vals))
    if kind == "quasi-periodic":
        terms = cfg.get("terms")
        amps = [a for a, _, _ in terms] if terms else cfg.get("amps", (0.5, 0.5))
        freqs = [w for _, w, _ in terms] if terms else cfg.get("freqs", (1.0, math.sqrt(2.0)))
        phases = [p for _, _, p in terms] if terms else cfg.get("phases")
        return quasi_periodic(cfg["base"], amps, freqs, phases, cfg.get("cell", 1.0 / 64.0))
    if kind == "spike":
        return spike(cfg["base"], cfg["mass"], cfg["width"], cfg["period"], cfg.get("center", 0.0))
    raise ValueError(f"unknown signal kind: {kind!r}")
