"""Time integration of the parabolic Monge-Ampere flows.

MAF1:  dphi/dt = log(det(omega_t + i ddbar phi) / Omega)
MAF2:  dphi/dt = log(det(omega_t + i ddbar phi) / Omega) - phi

both started from ``phi = 0``.  Two steppers share the positivity guard:
``step_rk4`` is the classical explicit scheme (stable only for
``dt = O(1/N^2)``); ``step_etdrk4`` is the fourth-order exponential
Runge-Kutta scheme of Cox and Matthews with the stiff part ``-c * pi^2 |k|^2``
integrated exactly.  With ``c`` above the largest eigenvalue of the inverse
metric the remainder is dominated by the exact part and the step is limited by
accuracy only.  On spatially constant data both steppers coincide.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .forms import Pencil, det_arrays, mineig_arrays
from .grid import Grid, HermitianField, ScalarField, hessian_from_coeffs

log = logging.getLogger(__name__)

DEFAULT_CHECKPOINTS = (0.0, 1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0)


class FlowKind(str, enum.Enum):
    MAF1 = "MAF1"
    MAF2 = "MAF2"


class PositivityError(ArithmeticError):
    """A stage metric fell to or below the positivity floor."""

    def __init__(self, message: str, min_value: float):
        super().__init__(message)
        self.min_value = min_value


@dataclass
class FlowConfig:
    pencil: Pencil
    kind: FlowKind = FlowKind.MAF1
    T_end: float = 20.0
    dt0: float | None = None
    dt_min: float | None = None
    dt_max: float | None = None
    eig_floor: float = 1e-8
    safety: float = 0.5
    record_every: float = 0.1
    checkpoint_times: tuple[float, ...] | None = None
    method: str = "rk4"

    def __post_init__(self):
        self.kind = FlowKind(self.kind)
        if self.method not in ("rk4", "etdrk4"):
            raise ValueError(f"unknown method {self.method!r}")
        N = self.pencil.grid.N
        if self.dt0 is None:
            self.dt0 = min(0.25 / N ** 2, 1e-2)
        if self.dt_max is None:
            # explicit RK4 is only stable near dt0; the exponential scheme is not
            self.dt_max = self.dt0 if self.method == "rk4" else max(self.dt0, 1e-2)
        if self.dt_min is None:
            self.dt_min = self.dt0 / 1024.0
        if not (0 < self.dt_min <= self.dt0 <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt0 <= dt_max")
        if self.T_end <= 0 or self.eig_floor <= 0 or self.record_every <= 0:
            raise ValueError("T_end, eig_floor and record_every must be positive")
        if not 0 < self.safety < 1:
            raise ValueError("safety factor must lie in (0, 1)")
        if self.checkpoint_times is None:
            cps = [c for c in DEFAULT_CHECKPOINTS if c <= self.T_end]
        else:
            cps = [float(c) for c in self.checkpoint_times if 0 <= c <= self.T_end]
        self.checkpoint_times = tuple(sorted(set(cps) | {float(self.T_end)}))


@dataclass
class FlowState:
    t: float
    phi: ScalarField
    phidot: ScalarField
    metric: HermitianField
    step_count: int = 0
    density: np.ndarray | None = None
    min_eig: float = math.inf
    _phat: np.ndarray | None = field(default=None, repr=False)


@dataclass
class FlowTrace:
    records: list = field(default_factory=list)
    checkpoints: list[tuple[float, ScalarField]] = field(default_factory=list)
    termination: str = "reached_T_end"
    # (t, min eigenvalue of the metric, |integral det g - V_t|) per record
    margins: list[tuple[float, float, float]] = field(default_factory=list)
    steps: int = 0
    final_state: FlowState | None = None


# right-hand side ------------------------------------------------------------

def _metric_arrays(pencil: Pencil, t: float, phat: np.ndarray):
    base_diag, base_off = pencil.base_arrays(t)
    hd, ho = hessian_from_coeffs(pencil.grid, phat)
    diag = base_diag + hd
    off = None if ho is None else base_off + ho
    return diag, off


def _evaluate(kind: FlowKind, pencil: Pencil, t: float, phi: np.ndarray, phat: np.ndarray,
              floor: float | None):
    """Return ``(rhs, diag, off, det, min_eig)``; raise if positivity fails."""
    diag, off = _metric_arrays(pencil, t, phat)
    det = det_arrays(diag, off)
    lam = float(np.min(mineig_arrays(diag, off)))
    dmin = float(np.min(det))
    if dmin <= 0.0 or not math.isfinite(dmin):
        raise PositivityError(f"Monge-Ampere density nonpositive at t={t:.6g} (min {dmin:.3e})", dmin)
    if floor is not None and lam <= floor:
        raise PositivityError(f"metric eigenvalue {lam:.3e} below floor at t={t:.6g}", lam)
    f = _kernels.logratio(det, pencil.Omega.values)
    if kind is FlowKind.MAF2:
        f = f - phi
    return f, diag, off, det, lam


def rhs(kind, pencil: Pencil, t: float, phi: ScalarField) -> ScalarField:
    kind = FlowKind(kind)
    f, *_ = _evaluate(kind, pencil, t, phi.values, pencil.grid.fft(phi.values), None)
    return ScalarField(pencil.grid, f)


def make_state(config: FlowConfig, t: float, phi: ScalarField, step_count: int = 0,
               phat: np.ndarray | None = None) -> FlowState:
    p = config.pencil
    if phat is None:
        phat = p.grid.fft(phi.values)
    f, diag, off, det, lam = _evaluate(config.kind, p, t, phi.values, phat, config.eig_floor)
    return FlowState(t, phi, ScalarField(p.grid, f), HermitianField(p.grid, diag, off),
                     step_count, det, lam, phat)


def initial_state(config: FlowConfig) -> FlowState:
    return make_state(config, 0.0, ScalarField.constant(config.pencil.grid, 0.0))


# steppers -------------------------------------------------------------------

def step_rk4(state: FlowState, dt: float, config: FlowConfig) -> FlowState:
    p, kind, floor = config.pencil, config.kind, config.eig_floor
    g = p.grid
    t, u = state.t, state.phi.values

    def F(tt, v):
        return _evaluate(kind, p, tt, v, g.fft(v), floor)[0]

    k1 = state.phidot.values
    k2 = F(t + 0.5 * dt, u + 0.5 * dt * k1)
    k3 = F(t + 0.5 * dt, u + 0.5 * dt * k2)
    k4 = F(t + dt, u + dt * k3)
    new = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return make_state(config, t + dt, ScalarField(g, new), state.step_count + 1)


@lru_cache(maxsize=32)
def _etd_coefficients(grid: Grid, c: float, h: float):
    """ETDRK4 coefficient arrays for ``L = -c * trace_symbol`` and step ``h``.

    Contour-integral evaluation of the phi-functions; exact limits on ``L = 0``.
    """
    L = -c * grid.trace_symbol
    M = 64
    roots = np.exp(1j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
    LR = h * L[..., None] + roots
    E = np.exp(h * L)
    E2 = np.exp(0.5 * h * L)
    Q = h * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=-1))
    f1 = h * np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=-1))
    f2 = h * np.real(np.mean((2 + LR + np.exp(LR) * (-2 + LR)) / LR ** 3, axis=-1))
    f3 = h * np.real(np.mean((-4 - 3 * LR - LR ** 2 + np.exp(LR) * (4 - LR)) / LR ** 3, axis=-1))
    zero = L == 0.0
    Q[zero] = h / 2
    f1[zero] = h / 6
    f2[zero] = h / 6
    f3[zero] = h / 6
    return L, E, E2, Q, f1, f2, f3


def stiffness_coefficient(min_eig: float) -> float:
    """Quantized upper bound for the largest eigenvalue of the inverse metric."""
    c = 1.25 / min_eig
    return 2.0 ** (math.ceil(4.0 * math.log2(c)) / 4.0)


def step_etdrk4(state: FlowState, dt: float, config: FlowConfig) -> FlowState:
    p, kind, floor = config.pencil, config.kind, config.eig_floor
    g = p.grid
    t = state.t
    c = stiffness_coefficient(state.min_eig)
    L, E, E2, Q, f1, f2, f3 = _etd_coefficients(g, c, float(dt))
    need_phys = kind is FlowKind.MAF2

    def Nhat(tt, vhat, fvals=None):
        if fvals is None:
            v = g.ifft(vhat) if need_phys else None
            fvals = _evaluate(kind, p, tt, v, vhat, floor)[0]
        return g.fft(fvals) - L * vhat

    uhat = state._phat if state._phat is not None else g.fft(state.phi.values)
    Nu = Nhat(t, uhat, state.phidot.values)
    ahat = E2 * uhat + Q * Nu
    Na = Nhat(t + 0.5 * dt, ahat)
    bhat = E2 * uhat + Q * Na
    Nb = Nhat(t + 0.5 * dt, bhat)
    chat = E2 * ahat + Q * (2.0 * Nb - Nu)
    Nc = Nhat(t + dt, chat)
    new_hat = E * uhat + f1 * Nu + 2.0 * f2 * (Na + Nb) + f3 * Nc
    new = g.ifft(new_hat)
    return make_state(config, t + dt, ScalarField(g, new), state.step_count + 1)


STEPPERS = {"rk4": step_rk4, "etdrk4": step_etdrk4}


def adapt_dt(state: FlowState, proposed_dt: float, config: FlowConfig) -> float:
    """Largest admissible step from ``proposed_dt`` downwards by factor ``safety``.

    A trial forward stage ``phi + dt * phidot`` must keep the metric above the
    floor and move no sample by more than 0.5.
    """
    dt = min(max(proposed_dt, config.dt_min), config.dt_max)
    p = config.pencil
    pd = state.phidot.values
    pd_sup = float(np.max(np.abs(pd)))
    phat = state._phat if state._phat is not None else p.grid.fft(state.phi.values)
    pdhat = None
    while True:
        ok = dt * pd_sup <= 0.5
        if ok and pd_sup > 0.0:
            if pdhat is None:
                pdhat = p.grid.fft(pd)
            diag, off = _metric_arrays(p, state.t + dt, phat + dt * pdhat)
            ok = float(np.min(mineig_arrays(diag, off))) > config.eig_floor
        if ok:
            return dt
        nxt = dt * config.safety
        if nxt < config.dt_min:
            return config.dt_min
        dt = nxt


def _event_times(config: FlowConfig) -> list[float]:
    T = float(config.T_end)
    n_rec = int(math.floor(T / config.record_every + 1e-9))
    ts = {round(k * config.record_every, 12) for k in range(1, n_rec + 1)}
    ts |= set(config.checkpoint_times)
    ts.add(T)
    return sorted(x for x in ts if 0 < x <= T)


def _margin(state: FlowState, pencil: Pencil) -> tuple[float, float, float]:
    vol_err = abs(float(np.mean(state.density)) - pencil.volume_at(state.t))
    return (float(state.t), float(state.min_eig), vol_err)


def run_flow(config: FlowConfig, phi0: ScalarField | None = None) -> FlowTrace:
    """Integrate from ``phi0`` (default zero) to ``T_end``; records at the cadence."""
    from .functionals import make_record

    trace = FlowTrace()
    stepper = STEPPERS[config.method]
    p = config.pencil
    try:
        state = initial_state(config) if phi0 is None else make_state(config, 0.0, phi0)
    except PositivityError as exc:
        log.warning("initial state rejected: %s", exc)
        trace.termination = "positivity_breakdown"
        return trace

    checkpoints = set(config.checkpoint_times)
    trace.records.append(make_record(state, p, config.kind, config.dt0))
    trace.margins.append(_margin(state, p))
    if 0.0 in checkpoints:
        trace.checkpoints.append((0.0, state.phi.copy()))

    dt = adapt_dt(state, config.dt0, config)
    last_dt = dt
    for target in _event_times(config):
        while state.t < target:
            h = min(dt, target - state.t)
            landing = target - state.t - h < 1e-12 * max(1.0, target)
            try:
                new = stepper(state, h, config)
            except PositivityError as exc:
                if dt * config.safety < config.dt_min:
                    log.warning("step underflow at t=%.6g: %s", state.t, exc)
                    trace.termination = "step_underflow"
                    trace.final_state = state
                    trace.steps = state.step_count
                    return trace
                dt *= config.safety
                continue
            if landing:
                new.t = target
            state = new
            last_dt = h
            if h == dt:
                dt = adapt_dt(state, min(dt / config.safety, config.dt_max), config)
        trace.records.append(make_record(state, p, config.kind, last_dt))
        trace.margins.append(_margin(state, p))
        if target in checkpoints:
            trace.checkpoints.append((state.t, state.phi.copy()))

    trace.final_state = state
    trace.steps = state.step_count
    return trace
