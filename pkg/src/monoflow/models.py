"""Scalar delayed population model and cyclic feedback system: presets,
majorant/minorant fields and assumption validators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import signals as sg
from .fields import NonlinearitySpec, Sampler, VectorField, check_condition
from .signals import CoefficientSignal, constant


class AssumptionError(ValueError):
    def __init__(self, message: str, witness: dict | None = None):
        super().__init__(message)
        self.witness = witness


def _union_breaks(*sigs):
    def breaks(a, b):
        out = np.empty(0)
        for s in sigs:
            out = np.union1d(out, s.breakpoints(a, b))
        return out

    return breaks


def domination_witness(h: NonlinearitySpec, beta: CoefficientSignal, gamma: CoefficientSignal,
                       window=(-16.0, 16.0), n_t: int = 257, y_max: float = 50.0, seed: int = 0):
    """First sampled (t, y >= 0) with h(t, y) > beta(t) y + gamma(t), or None."""
    rng = np.random.default_rng(seed)
    t = np.concatenate([np.linspace(*window, n_t), rng.uniform(*window, n_t)])
    bp = _union_breaks(h.base, h.gain, beta, gamma)(*window)
    if bp.size:
        t = np.concatenate([t, bp + 1e-7, bp - 1e-7])
    y = np.concatenate([np.linspace(0.0, 4.0, 401), np.geomspace(4.0, y_max, 60), [1.0]])
    T, Y = np.meshgrid(t, y, indexing="ij")
    excess = h(T, Y) - (beta.value(T) * Y + gamma.value(T))
    k = np.unravel_index(np.argmax(excess), excess.shape)
    if excess[k] > 1e-12:
        return {"t": float(T[k]), "y": float(Y[k]), "excess": float(excess[k])}
    return None


@dataclass(frozen=True)
class ScalarPopulationModel:
    """x'(t) = -alpha(t) x(t) + h(t, x(t-1)) with majorant slope beta and offset gamma."""

    alpha: CoefficientSignal
    beta: CoefficientSignal
    gamma: CoefficientSignal
    h: NonlinearitySpec
    name: str = "scalar"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def h0(self) -> CoefficientSignal:
        return self.h.base

    def breaks(self):
        return _union_breaks(self.alpha, self.beta, self.gamma, self.h.base, self.h.gain)

    def field(self) -> VectorField:
        al, h = self.alpha, self.h

        def rhs(t, x, y, side):
            return -al.value(t, side)[:, None] * x + h(t[:, None], y, side)

        return VectorField(dim=1, rhs=rhs, delayed=True, breaks=self.breaks(),
                           flags=frozenset({"Kx", "Ky", "Kxy", "S", "strongS"}), name=self.name,
                           lipschitz_x=al, meta={"model": self})

    def majorant(self) -> VectorField:
        al, be, ga = self.alpha, self.beta, self.gamma

        def rhs(t, x, y, side):
            return (-al.value(t, side)[:, None] * x + be.value(t, side)[:, None] * y
                    + ga.value(t, side)[:, None])

        return VectorField(dim=1, rhs=rhs, delayed=True, breaks=self.breaks(),
                           flags=frozenset({"Kx", "Ky", "Kxy"}), name=self.name + ":majorant",
                           lipschitz_x=al, meta={"linear": True})

    def majorant_homogeneous(self) -> VectorField:
        al, be = self.alpha, self.beta

        def rhs(t, x, y, side):
            return -al.value(t, side)[:, None] * x + be.value(t, side)[:, None] * y

        return VectorField(dim=1, rhs=rhs, delayed=True, breaks=self.breaks(),
                           flags=frozenset({"Kx", "Ky", "Kxy", "S"}), name=self.name + ":linear-homogeneous",
                           lipschitz_x=al, meta={"linear": True})

    def minorant(self) -> VectorField:
        al, h0 = self.alpha, self.h0

        def rhs(t, x, y, side):
            return -al.value(t, side)[:, None] * x + h0.value(t, side)[:, None]

        return VectorField(dim=1, rhs=rhs, delayed=False, breaks=self.breaks(),
                           flags=frozenset({"K1"}), name=self.name + ":minorant",
                           lipschitz_x=al, meta={"linear": True})


@dataclass(frozen=True)
class CyclicFeedbackModel:
    """x1' = h(t, x_m) - alpha_1 x1, x_i' = x_{i-1} - alpha_i x_i (ODE)."""

    alphas: tuple
    beta: CoefficientSignal
    gamma: CoefficientSignal
    h: NonlinearitySpec
    name: str = "cyclic"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return len(self.alphas)

    @property
    def h0(self) -> CoefficientSignal:
        return self.h.base

    def breaks(self):
        return _union_breaks(*self.alphas, self.beta, self.gamma, self.h.base, self.h.gain)

    def _chain(self, first):
        alphas = self.alphas
        shared = self._lip()

        def rhs(t, x, y, side):
            if shared is not None:
                av = shared.value(t, side)[:, None]
            else:
                av = np.stack([a.value(t, side) for a in alphas], -1)
            out = np.empty_like(x)
            out[:, 0] = first(t, x, side)
            out[:, 1:] = x[:, :-1]
            out -= av * x
            return out

        return rhs

    def _lip(self):
        return self.alphas[0] if all(a == self.alphas[0] for a in self.alphas) else None

    def field(self) -> VectorField:
        h = self.h
        rhs = self._chain(lambda t, x, side: h(t, x[:, -1], side))
        return VectorField(dim=self.m, rhs=rhs, delayed=False, breaks=self.breaks(),
                           flags=frozenset({"K1", "S", "strongS"}), name=self.name,
                           lipschitz_x=self._lip(), meta={"model": self})

    def majorant(self, homogeneous: bool = False) -> VectorField:
        be, ga = self.beta, self.gamma
        if homogeneous:
            rhs = self._chain(lambda t, x, side: be.value(t, side) * x[:, -1])
        else:
            rhs = self._chain(lambda t, x, side: be.value(t, side) * x[:, -1] + ga.value(t, side))
        return VectorField(dim=self.m, rhs=rhs, delayed=False, breaks=self.breaks(),
                           flags=frozenset({"K1"}), name=self.name + ":majorant",
                           lipschitz_x=self._lip(), meta={"linear": True})

    def minorant(self, homogeneous: bool = False) -> VectorField:
        h0 = self.h0
        if homogeneous:
            rhs = self._chain(lambda t, x, side: np.zeros(len(t)))
        else:
            rhs = self._chain(lambda t, x, side: h0.value(t, side))
        return VectorField(dim=self.m, rhs=rhs, delayed=False, breaks=self.breaks(),
                           flags=frozenset({"K1"}), name=self.name + ":minorant",
                           lipschitz_x=self._lip(), meta={"linear": True})


def make_scalar_population(model: ScalarPopulationModel, check: bool = True):
    """(nonlinear, majorant, minorant) fields; rejects models violating domination."""
    if check:
        w = domination_witness(model.h, model.beta, model.gamma)
        if w is not None:
            raise AssumptionError(f"domination h <= beta*y + gamma fails at {w}", w)
    return model.field(), model.majorant(), model.minorant()


def make_cyclic_feedback(model: CyclicFeedbackModel, check: bool = True) -> VectorField:
    if model.m < 2:
        raise AssumptionError("cyclic feedback needs m >= 2")
    if check:
        w = domination_witness(model.h, model.beta, model.gamma)
        if w is not None:
            raise AssumptionError(f"domination h <= beta*y + gamma fails at {w}", w)
    return model.field()


# ---------------------------------------------------------------- presets

def _quasi(base, phases=(0.0, 0.0), amps=(0.5, 0.5)):
    return sg.quasi_periodic(base, amps=amps, phases=phases)


def golden() -> ScalarPopulationModel:
    return ScalarPopulationModel(constant(1.0), constant(0.5), constant(1.1),
                                 NonlinearitySpec(constant(1.0), constant(1.0), "sat"), "golden")


def linear(alpha=1.0, beta=0.25, gamma=1.0, name="linear") -> ScalarPopulationModel:
    return ScalarPopulationModel(constant(alpha), constant(beta), constant(gamma),
                                 NonlinearitySpec(constant(gamma), constant(beta), "linear"), name)


def step_preset() -> ScalarPopulationModel:
    alpha = sg.step((0.0, 1.0), (1.0, 1.5), period=2.0)
    return ScalarPopulationModel(alpha, constant(0.5), constant(1.1),
                                 NonlinearitySpec(constant(1.0), constant(1.0), "sat"), "step")


def quasi_preset() -> ScalarPopulationModel:
    """Quasi-periodic coefficients (frequencies 1 and sqrt 2) on a 1/64 step grid."""
    alpha = _quasi(1.0)
    g0 = _quasi(0.5, phases=(1.0, 2.0))
    gamma = _quasi(0.55, phases=(1.0, 2.0))
    return ScalarPopulationModel(alpha, constant(0.5), gamma,
                                 NonlinearitySpec(g0, constant(0.75), "sat"), "quasi")


def alpha_zero() -> ScalarPopulationModel:
    m = golden()
    return ScalarPopulationModel(constant(0.0), m.beta, m.gamma, m.h, "alpha-zero")


def no_base() -> ScalarPopulationModel:
    """h = y/(1+y) without offset: not strongly sublinear near y = 0."""
    return ScalarPopulationModel(constant(1.0), constant(0.5), constant(0.1),
                                 NonlinearitySpec(constant(0.0), constant(1.0), "sat"), "no-base")


def cyclic(m: int = 2, name: str | None = None, h: NonlinearitySpec | None = None,
           beta: float = 0.5, gamma: float = 1.1) -> CyclicFeedbackModel:
    h = h or NonlinearitySpec(constant(1.0), constant(1.0), "sat")
    return CyclicFeedbackModel(tuple(constant(1.0) for _ in range(m)), constant(beta), constant(gamma),
                               h, name or f"cyclic{m}")


def anti_field() -> VectorField:
    """x'(t) = -x(t-1): fails Ky."""
    return VectorField(dim=1, rhs=lambda t, x, y, side: -y, delayed=True, name="anti",
                       lipschitz_x=constant(0.0))


def zero_preset() -> VectorField:
    from .fields import zero_field

    return zero_field()


PRESETS = {
    "golden": golden,
    "linear": linear,
    "linear-half": lambda: linear(1.0, 0.5, 1.0, "linear-half"),
    "step": step_preset,
    "quasi": quasi_preset,
    "unstable-linear": lambda: linear(1.0, 2.0, 1.0, "unstable-linear"),
    "alpha-zero": alpha_zero,
    "no-base": no_base,
    "cyclic2-golden": lambda: cyclic(2, "cyclic2-golden"),
    "cyclic3": lambda: cyclic(3, "cyclic3"),
    "zero": zero_preset,
    "anti": anti_field,
}

COOPERATIVE_SCALAR = ("golden", "linear", "linear-half", "step", "quasi")
COOPERATIVE = COOPERATIVE_SCALAR + ("cyclic2-golden", "cyclic3")


def get_preset(name: str):
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


def preset_field(name: str) -> VectorField:
    p = get_preset(name)
    if isinstance(p, VectorField):
        return p
    return p.field()


# ---------------------------------------------------------------- validation

@dataclass
class AssumptionVerdict:
    name: str
    verdict: str
    detail: dict

    def to_dict(self):
        return {"assumption": self.name, "verdict": self.verdict, "detail": self.detail}


def _e1_check(name, sig: CoefficientSignal, bound: float, window=(-64.0, 64.0)):
    t = np.linspace(window[0], window[1], 8193)
    vmin = float(min(np.min(sig.value(t, 1)), np.min(sig.value(t, -1))))
    wsup = sig.unit_window_bound(*window)
    winf = sig.unit_window_infimum(*window)
    ok = vmin >= 0.0 and wsup <= bound and wsup > 0.0
    return ok, {f"{name}_min": vmin, f"{name}_window_sup": wsup, f"{name}_window_inf": winf,
                f"{name}_null": bool(wsup <= 0.0)}


def validate_assumptions(model, bundle: str | None = None, bound: float = 100.0,
                         translates=(0.0, 0.5, 1.0, 7.25, 13.0), horizon: float = 40.0,
                         seed: int = 0) -> dict:
    """Per-assumption verdicts.  Decay and strong sublinearity are checked on
    sampled translates only, so passing verdicts are reported as
    "empirically validated"."""
    from .linear import fit_decay, fundamental_matrix_ode, fundamental_scalar_delay

    scalar = isinstance(model, ScalarPopulationModel)
    bundle = bundle or ("A" if scalar else "B")
    out: list[AssumptionVerdict] = []

    coeffs = {"alpha": model.alpha} if scalar else {f"alpha{i + 1}": a for i, a in enumerate(model.alphas)}
    coeffs.update({"beta": model.beta, "gamma": model.gamma})
    ok1, det = True, {}
    for k, s in coeffs.items():
        ok, d = _e1_check(k, s, bound)
        ok1 &= ok
        det.update(d)
    if not ok1 and any(det.get(f"{k}_null") for k in coeffs):
        det["reason"] = "null function does not belong to E1"
    out.append(AssumptionVerdict(f"{bundle}1", "pass" if ok1 else "fail", det))

    hf = model.h.as_field()
    sampler = Sampler(trials=3000, radius=6.0, window=(-16.0, 16.0), seed=seed)
    k2 = check_condition(hf, "K2", sampler)
    ok_h0, det_h0 = _e1_check("h0", model.h0, bound)
    tneg = np.linspace(-16, 16, 513)
    flat = float(np.max(np.abs(model.h(tneg[:, None], -np.geomspace(1e-6, 10, 20)[None, :])
                               - model.h(tneg[:, None], 0.0))))
    ok2 = k2.passed and ok_h0 and flat == 0.0
    out.append(AssumptionVerdict(f"{bundle}2", "pass" if ok2 else "fail",
                                 {"K2": k2.to_dict(), **det_h0, "clamp_deviation": flat}))

    w = domination_witness(model.h, model.beta, model.gamma, seed=seed)
    out.append(AssumptionVerdict(f"{bundle}3", "pass" if w is None else "fail", {"witness": w}))

    fits = []
    for s in translates:
        if scalar:
            F = fundamental_scalar_delay(model.alpha, model.beta, s, horizon)
        else:
            F = fundamental_matrix_ode(model, s, horizon)
        fits.append(fit_decay(F))
    ok4 = all(d.verdict == "pass" for d in fits)
    out.append(AssumptionVerdict(f"{bundle}4", "empirically validated" if ok4 else "fail",
                                 {"fits": [d.to_dict() for d in fits]}))

    s_rep = check_condition(hf, "S", Sampler(trials=3000, radius=6.0, window=(-16.0, 16.0), seed=seed))
    out.append(AssumptionVerdict(f"{bundle}5", "pass" if s_rep.passed else "fail", s_rep.to_dict()))
    ss = check_condition(hf, "strongS", Sampler(trials=6000, radius=6.0, window=(-16.0, 16.0), seed=seed))
    out.append(AssumptionVerdict(f"{bundle}5-strong", "empirically validated" if ss.passed else "fail",
                                 ss.to_dict()))
    verdicts = [v.to_dict() for v in out]
    return {"model": model.name, "bundle": bundle, "assumptions": verdicts,
            "passed": all(v["verdict"] != "fail" for v in verdicts)}
