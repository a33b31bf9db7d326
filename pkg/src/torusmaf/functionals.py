"""Scalar diagnostics along a flow: energy, dissipation, c(t), rate fits and trace checks."""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import _kernels
from .forms import Pencil, det_arrays, mixed_class_pairing
from .grid import ScalarField, gradient_from_coeffs, integrate


class SingularMetric(ArithmeticError):
    pass


class NonPositiveSeries(ValueError):
    pass


@dataclass
class EnergyRecord:
    t: float
    nu: float
    nu_logform: float
    dissipation: float
    min_phidot: float
    max_phidot: float
    c_t: float
    V_t: float
    jensen_floor: float
    dt_used: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> tuple:
        return astuple(self)


@dataclass
class RateFit:
    alpha: float
    r2: float
    window: tuple[float, float]
    npoints: int = 0


def normalize_u(phi: ScalarField, Omega: ScalarField) -> ScalarField:
    """``phi - integral(phi * Omega)``."""
    return phi - integrate(phi.values * Omega.values)


def _density(state) -> np.ndarray:
    if getattr(state, "density", None) is not None:
        return state.density
    return det_arrays(state.metric.diag, state.metric.off)


def energy_nu(state, pencil: Pencil | None = None) -> float:
    """``integral(phidot * det g)``; the log form coincides for MAF1."""
    return integrate(state.phidot.values * _density(state))


def energy_nu_logform(state, pencil: Pencil) -> float:
    det = _density(state)
    return integrate(_kernels.logratio(det, pencil.Omega.values) * det)


def c_of_t(state) -> float:
    return integrate(state.phidot.values * _density(state))


def _gradient_form(state) -> np.ndarray:
    """Pointwise ``2 v^H cof(g) v`` with ``v = d phidot / dz``; equals ``|grad|^2 det g``."""
    g = state.phidot.grid
    v = gradient_from_coeffs(g, g.fft(state.phidot.values))
    m = state.metric
    if g.n == 1:
        return 2.0 * (v[0].real ** 2 + v[0].imag ** 2)
    return _kernels.gradform2(m.diag[0], m.diag[1], m.off, v[0], v[1])


def dissipation(state, eig_floor: float = 1e-8) -> float:
    """``integral |grad phidot|^2_g det g`` with ``|grad f|^2 = 2 g^{j kbar} f_j f_kbar``."""
    det = _density(state)
    if float(np.min(det)) <= eig_floor:
        raise SingularMetric(f"metric determinant {float(np.min(det)):.3e} at or below {eig_floor}")
    return integrate(_gradient_form(state))


def sobolev_gradient_sup(state, mask: np.ndarray | None = None) -> float:
    """Sup over unmasked samples of the pointwise ``|grad phidot|^2_g``."""
    q = _gradient_form(state) / _density(state)
    if mask is not None:
        q = q[~mask]
    return float(np.max(q)) if q.size else 0.0


def make_record(state, pencil: Pencil, kind, dt_used: float) -> EnergyRecord:
    pd = state.phidot.values
    V = pencil.volume_at(state.t)
    nu = energy_nu(state, pencil)
    return EnergyRecord(
        t=float(state.t),
        nu=nu,
        nu_logform=energy_nu_logform(state, pencil),
        dissipation=dissipation(state, 0.0),
        min_phidot=float(np.min(pd)),
        max_phidot=float(np.max(pd)),
        c_t=c_of_t(state),
        V_t=V,
        jensen_floor=V * math.log(V),
        dt_used=float(dt_used),
    )


# energy inequality --------------------------------------------------------------

@dataclass
class SlopeReport:
    max_violation: float
    violations: int
    C_star: float
    worst_t: float | None = None


def slope_constant(records, pencil: Pencil) -> float:
    """Proof constant: ``max|n[chi][omega_t]^{n-1}| + sup|phidot| max n[omega0 + omegaInf][omega_t]^{n-1}``.

    ``mixed_class_pairing`` already carries the factor ``n``.
    """
    sup_pd = max(max(abs(r.min_phidot), abs(r.max_phidot)) for r in records)
    A_chi = pencil.chi.A
    A_sum = pencil.omega0.A + pencil.omegaInf.A
    p_chi = max(abs(mixed_class_pairing(A_chi, pencil.A_at(r.t))) for r in records)
    p_sum = max(mixed_class_pairing(A_sum, pencil.A_at(r.t)) for r in records)
    return p_chi + sup_pd * p_sum


# The energy identity integrates phidot against its own complex Laplacian, which
# produces ``g^{j kbar} f_j f_kbar`` without the factor 2 carried by the recorded
# dissipation.  The slope bound therefore uses half the recorded value.
IDENTITY_GRADIENT_FACTOR = 0.5


def energy_slope_check(records, pencil: Pencil, kind="MAF1", tol: float = 1e-6) -> SlopeReport:
    """Forward-difference check of ``d nu/dt <= -D + C* e^{-t}`` between records.

    ``D`` is the dissipation in the identity's own normalization (see
    ``IDENTITY_GRADIENT_FACTOR``).  Along MAF2 the same computation carries
    the extra term ``-nu``.
    """
    if len(records) < 2:
        raise ValueError("slope check needs at least two records")
    C = slope_constant(records, pencil)
    maf2 = str(getattr(kind, "value", kind)) == "MAF2"
    worst, count, worst_t = -math.inf, 0, None
    for a, b in zip(records[:-1], records[1:]):
        slope = (b.nu - a.nu) / (b.t - a.t)
        bound = -IDENTITY_GRADIENT_FACTOR * a.dissipation + C * math.exp(-a.t)
        if maf2:
            bound -= a.nu
        v = slope - bound
        if v > worst:
            worst, worst_t = v, a.t
        if v > tol:
            count += 1
    return SlopeReport(max(worst, 0.0), count, C, worst_t)


# rate fitting -------------------------------------------------------------------

def exp_rate_fit(series, window: tuple[float, float] | None = None) -> RateFit:
    """Least-squares line through ``(t, log y)``; ``alpha`` is minus the slope."""
    pts = [(float(t), float(y)) for t, y in series
           if window is None or window[0] - 1e-12 <= t <= window[1] + 1e-12]
    if len(pts) < 4:
        raise ValueError(f"rate fit needs at least 4 points in window, got {len(pts)}")
    t = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(y <= 0):
        raise NonPositiveSeries("rate fit needs a strictly positive series")
    ly = np.log(y)
    slope, intercept = np.polyfit(t, ly, 1)
    ss_res = float(np.sum((ly - (slope * t + intercept)) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, float(np.sum(ly ** 2))) else max(0.0, 1.0 - ss_res / ss_tot)
    alpha = -float(slope)
    if ss_tot <= 1e-30 * max(1.0, float(np.sum(ly ** 2))):
        alpha = 0.0
    w = window if window is not None else (float(t[0]), float(t[-1]))
    return RateFit(alpha, min(r2, 1.0), (float(w[0]), float(w[1])), len(pts))


# trace-level invariants ----------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {"passed": bool(self.passed), "value": self.value,
                "threshold": self.threshold, "detail": self.detail}


def jensen_check(records, tol: float = 1e-8) -> CheckResult:
    """``nu >= V log V`` for the log-density energy (the two forms agree on MAF1)."""
    gap = min(r.nu_logform - r.jensen_floor for r in records)
    return CheckResult("jensen_floor", gap >= -tol, gap, -tol, "min(nu_logform - V log V)")


def bracket_check(records, tol: float = 1e-12) -> CheckResult:
    worst = 0.0
    for r in records:
        scale = tol * max(1.0, abs(r.c_t), abs(r.V_t))
        lo = r.min_phidot * r.V_t - r.c_t
        hi = r.c_t - r.max_phidot * r.V_t
        worst = max(worst, lo - scale, hi - scale)
    return CheckResult("mean_value_bracket", worst <= 0.0, worst, 0.0)


def nu_bound_check(records) -> CheckResult:
    sup_pd = max(max(abs(r.min_phidot), abs(r.max_phidot)) for r in records)
    vmax = max(r.V_t for r in records)
    worst = max(abs(r.nu) for r in records)
    bound = sup_pd * vmax * (1 + 1e-12) + 1e-15
    return CheckResult("nu_bounded", worst <= bound, worst, bound)


def _trapz(t, y) -> float:
    t = np.asarray(t)
    y = np.asarray(y)
    if t.size < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def dissipation_integrability(records, tail_fraction: float = 0.05) -> CheckResult:
    t = np.array([r.t for r in records])
    d = np.array([r.dissipation for r in records])
    total = _trapz(t, d)
    T = t[-1]
    sel = t >= 0.5 * T - 1e-12
    tail = _trapz(t[sel], d[sel])
    if total <= 0.0:
        return CheckResult("dissipation_integrable", True, 0.0, tail_fraction, "zero dissipation")
    frac = tail / total
    return CheckResult("dissipation_integrable", bool(np.isfinite(total)) and frac <= tail_fraction,
                       frac, tail_fraction, f"total={total:.6e}")


def dissipation_final(records, threshold: float) -> CheckResult:
    d = records[-1].dissipation
    return CheckResult("dissipation_final", d <= threshold, d, threshold)


def max_principle_check(records, slack: float = 0.01) -> CheckResult:
    top0 = records[0].max_phidot
    worst = max(r.max_phidot for r in records) - top0
    return CheckResult("max_principle", worst <= slack, worst, slack)


def lower_bound_stabilization(records, T: float = 10.0, tol: float = 0.05) -> CheckResult:
    inf_T = min(r.min_phidot for r in records if r.t <= T + 1e-12)
    inf_all = min(r.min_phidot for r in records if r.t <= 2 * T + 1e-12)
    change = abs(inf_all - inf_T)
    return CheckResult("lower_bound_stable", change <= tol, change, tol,
                       f"inf[0,{T:g}]={inf_T:.6g} inf[0,{2*T:g}]={inf_all:.6g}")


def maf2_decay_checks(records, tol: float = 1e-6) -> tuple[CheckResult, CheckResult]:
    """``sup phidot <= C e^{-t/2}`` and ``phidot - C2 e^{-t} <= 0`` with C, C2 fitted on [0, 1]."""
    early = [r for r in records if r.t <= 1.0 + 1e-12]
    late = [r for r in records if r.t >= 1.0 - 1e-12]
    C = max(r.max_phidot * math.exp(0.5 * r.t) for r in early)
    C2 = max(r.max_phidot * math.exp(r.t) for r in early)
    v1 = max(r.max_phidot - C * math.exp(-0.5 * r.t) for r in late)
    v2 = max(r.max_phidot - C2 * math.exp(-r.t) for r in late)
    return (CheckResult("maf2_half_rate", v1 <= tol, v1, tol, f"C={C:.6g}"),
            CheckResult("maf2_essential_decrease", v2 <= tol, v2, tol, f"C2={C2:.6g}"))
