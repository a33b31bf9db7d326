"""Run orchestration: flow, elliptic reference, comparison, invariant checks, artifacts."""
from __future__ import annotations

import datetime as _dt
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import integrate as _quad
from scipy.ndimage import maximum_filter

from . import _kernels, functionals as fn, io
from .elliptic import (DEGENERATE_SCHEDULE, KAHLER_SCHEDULE, EllipticSolution, newton_ma_solve,
                       poisson_oracle_n1)
from .flow import PositivityError, make_state, run_flow
from .forms import Background, FormError, Pencil, metric_field, min_eigenvalue_field, reference_form_at
from .grid import ScalarField, complex_hessian
from .scenario import ConfigError, Scenario, load_scenario, parse_scenario

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4


class MaskCoversEverything(ValueError):
    pass


def degeneracy_mask(omegaInf: Background, tau: float, r: float) -> np.ndarray:
    """Samples where the target form nearly degenerates, dilated by Chebyshev radius ``r``."""
    if tau <= 0 or r < 0:
        raise ValueError("mask needs tau > 0 and r >= 0")
    g = omegaInf.grid
    lam = min_eigenvalue_field(omegaInf.coefficients()).values
    mask = lam < tau
    cells = int(round(r * g.N))
    if cells > 0 and mask.any():
        mask = maximum_filter(mask.astype(np.uint8), size=2 * cells + 1, mode="wrap").astype(bool)
    if 1.0 - mask.mean() < 0.1:
        raise MaskCoversEverything(f"mask leaves only {100 * (1 - mask.mean()):.1f}% of the torus")
    return mask


# comparison with the elliptic reference ----------------------------------------

@dataclass
class Distance:
    t: float
    sup: float
    l2: float
    l1: float
    masked_sup: float
    masked_l2: float


@dataclass
class CompareReport:
    distances: list[Distance]
    rate_fit: fn.RateFit | None
    weak_l1: float
    ricci_flat_sup: float | None
    monotone_after_2: bool
    mask_fraction: float = 0.0

    def at(self, t: float) -> Distance:
        return min(self.distances, key=lambda d: abs(d.t - t))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["rate_fit"] = None if self.rate_fit is None else asdict(self.rate_fit)
        return d


def ricci_flat_sup(pencil: Pencil, t: float, phi: ScalarField, mask: np.ndarray | None) -> float:
    """Sup over unmasked samples of the entries of ``i ddbar log det g~``."""
    g = metric_field(reference_form_at(pencil, t), phi)
    det = g.diag[0] if g.off is None else _kernels.det2(g.diag[0], g.diag[1], g.off)
    ric = complex_hessian(ScalarField(phi.grid, np.log(det)))
    keep = slice(None) if mask is None else ~mask
    return max(float(np.max(np.abs(e[keep]))) for e in ric.entries())


def compare_limit(checkpoints, psi: ScalarField, Omega: ScalarField, mask: np.ndarray | None,
                  pencil: Pencil | None = None, window=(2.0, 12.0),
                  monotone_tol: float = 1e-9) -> CompareReport:
    if sum(1 for t, _ in checkpoints if t >= 2.0) < 3:
        raise ValueError("comparison needs at least three checkpoints with t >= 2")
    keep = np.ones(psi.grid.shape, dtype=bool) if mask is None else ~mask
    Om = Omega.values
    ref = psi.values - np.mean(psi.values * Om)
    dists = []
    for t, phi in checkpoints:
        diff = fn.normalize_u(phi, Omega).values - ref
        ad = np.abs(diff)
        dists.append(Distance(
            t=float(t),
            sup=float(ad.max()),
            l2=math.sqrt(float(np.mean(diff * diff))),
            l1=float(np.mean(ad)),
            masked_sup=float(ad[keep].max()),
            masked_l2=math.sqrt(float(np.sum(diff[keep] ** 2)) / diff.size),
        ))
    series = [(d.t, max(d.masked_l2, 1e-15)) for d in dists]
    try:
        fit = fn.exp_rate_fit(series, window)
    except ValueError:
        fit = None
    late = [d.masked_l2 for d in dists if d.t >= 2.0 - 1e-12]
    monotone = all(b <= a + monotone_tol for a, b in zip(late, late[1:]))
    rf = None
    if pencil is not None:
        t_last, phi_last = checkpoints[-1]
        rf = ricci_flat_sup(pencil, t_last, phi_last, mask)
    return CompareReport(dists, fit, dists[-1].l1, rf, monotone, float(1 - keep.mean()))


# oracles and checks --------------------------------------------------------------

def scalar_oracle(pencil: Pencil, T: float) -> float:
    """``phi(T)`` for spatially constant data: the integral of ``log(V_s / Omega)``."""
    om = float(pencil.Omega.values.flat[0])
    val, _ = _quad.quad(lambda s: math.log(pencil.volume_at(s) / om), 0.0, T,
                        epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def _default_schedule(sc: Scenario, omegaInf: Background) -> tuple[float, ...]:
    lam = float(np.min(min_eigenvalue_field(omegaInf.coefficients()).values))
    return DEGENERATE_SCHEDULE if lam < float(sc.mask["tau"]) else KAHLER_SCHEDULE


def solve_elliptic(sc: Scenario, pencil: Pencil) -> EllipticSolution:
    e = sc.elliptic
    schedule = e.get("reg_schedule") or _default_schedule(sc, pencil.omegaInf)
    return newton_ma_solve(pencil.omegaInf, pencil.Omega, schedule, tol=float(e.get("tol", 1e-11)),
                           reg_form=pencil.omega0)


def scenario_mask(sc: Scenario, pencil: Pencil) -> np.ndarray:
    return degeneracy_mask(pencil.omegaInf, float(sc.mask["tau"]), float(sc.mask["radius"]))


def _final_state(sc: Scenario, pencil: Pencil, t: float, phi: ScalarField):
    return make_state(sc.flow_config(pencil), t, phi)


def evaluate_checks(sc: Scenario, pencil: Pencil, records, margins, checkpoints,
                    report: CompareReport | None, elliptic: EllipticSolution | None,
                    mask: np.ndarray | None) -> dict[str, fn.CheckResult]:
    """Run the checks listed in the scenario's ``[expected]`` block."""
    ex = sc.expected
    out: dict[str, fn.CheckResult] = {}
    cfg = sc.flow_config(pencil)

    def put(c: fn.CheckResult):
        out[c.name] = c

    for name in sc.checks:
        if name == "positivity":
            m = min(x[1] for x in margins)
            put(fn.CheckResult("positivity", m > cfg.eig_floor, m, cfg.eig_floor, "min metric eigenvalue"))
        elif name == "class_volume":
            e = max(x[2] for x in margins)
            put(fn.CheckResult("class_volume", e <= 1e-10, e, 1e-10))
        elif name == "energy_slope":
            rep = fn.energy_slope_check(records, pencil, sc.kind, tol=float(ex.get("slope_tol", 1e-6)))
            put(fn.CheckResult("energy_slope", rep.max_violation <= float(ex.get("slope_tol", 1e-6)),
                               rep.max_violation, float(ex.get("slope_tol", 1e-6)),
                               f"C*={rep.C_star:.6g} worst_t={rep.worst_t}"))
        elif name == "jensen":
            put(fn.jensen_check(records))
        elif name == "bracket":
            put(fn.bracket_check(records))
        elif name == "nu_bounded":
            put(fn.nu_bound_check(records))
        elif name == "dissipation_integrable":
            put(fn.dissipation_integrability(records))
        elif name == "dissipation_final":
            put(fn.dissipation_final(records, float(ex.get("dissipation_final_max", 1e-6))))
        elif name == "max_principle":
            put(fn.max_principle_check(records, float(ex.get("max_principle_slack", 0.01))))
        elif name == "lower_bound":
            put(fn.lower_bound_stabilization(records, float(ex.get("lower_bound_T", 10.0)),
                                             float(ex.get("lower_bound_tol", 0.05))))
        elif name == "maf2_decay":
            for c in fn.maf2_decay_checks(records, float(ex.get("maf2_tol", 1e-6))):
                put(c)
        elif name == "gradient_sup":
            t_last, phi_last = checkpoints[-1]
            st = _final_state(sc, pencil, t_last, phi_last)
            v = fn.sobolev_gradient_sup(st, mask)
            thr = float(ex.get("gradient_sup_max", 1e-4))
            put(fn.CheckResult("gradient_sup", v <= thr, v, thr, f"t={t_last:g}"))
        elif name == "scalar_oracle":
            t_last, phi_last = checkpoints[-1]
            ref = scalar_oracle(pencil, t_last)
            err = abs(float(np.mean(phi_last.values)) - ref)
            spread = float(np.ptp(phi_last.values))
            put(fn.CheckResult("scalar_oracle", err <= 1e-8 and spread <= 1e-12, err, 1e-8,
                               f"oracle={ref!r} spread={spread:.3e}"))
        elif name == "stationary":
            worst = max(max(abs(r.nu), abs(r.nu_logform), abs(r.dissipation), abs(r.min_phidot),
                            abs(r.max_phidot), abs(r.c_t)) for r in records)
            put(fn.CheckResult("stationary", worst <= 1e-13, worst, 1e-13))
        elif name == "c_rate":
            w = tuple(ex.get("rate_window", (2.0, 12.0)))
            series = [(r.t, max(abs(r.c_t), 1e-15)) for r in records]
            try:
                fit = fn.exp_rate_fit(series, w)
            except ValueError as exc:
                put(fn.CheckResult("c_rate", False, math.nan, 0.0, str(exc)))
                continue
            put(fn.CheckResult("c_rate", fit.alpha > 0, fit.alpha, 0.0, f"r2={fit.r2:.6f}"))
        elif name in ("rate_fit", "sup_distance", "masked_sup", "l1_distance", "masked_l2_monotone",
                      "ricci_flat"):
            if report is None:
                put(fn.CheckResult(name, False, math.nan, math.nan, "no comparison available"))
                continue
            last = report.distances[-1]
            if name == "rate_fit":
                f = report.rate_fit
                ok = f is not None and f.alpha > 0 and f.r2 >= float(ex.get("rate_r2_min", 0.99))
                put(fn.CheckResult("rate_fit", ok, math.nan if f is None else f.alpha, 0.0,
                                   "" if f is None else f"r2={f.r2:.6f}"))
            elif name == "sup_distance":
                thr = float(ex.get("sup_distance_max", 1e-5))
                put(fn.CheckResult(name, last.masked_sup <= thr, last.masked_sup, thr, f"t={last.t:g}"))
            elif name == "masked_sup":
                thr = float(ex.get("masked_sup_max", 1e-4))
                put(fn.CheckResult(name, last.masked_sup <= thr, last.masked_sup, thr, f"t={last.t:g}"))
            elif name == "l1_distance":
                thr = float(ex.get("l1_max", 1e-3))
                put(fn.CheckResult(name, report.weak_l1 <= thr, report.weak_l1, thr))
            elif name == "masked_l2_monotone":
                put(fn.CheckResult(name, report.monotone_after_2, float(report.monotone_after_2), 1.0))
            elif name == "ricci_flat":
                thr = float(ex.get("ricci_flat_max", 1e-6))
                v = report.ricci_flat_sup
                put(fn.CheckResult(name, v is not None and v <= thr, v, thr))
        elif name in ("elliptic_oracle", "elliptic_residual"):
            if elliptic is None:
                put(fn.CheckResult(name, False, math.nan, math.nan, "elliptic solve disabled"))
                continue
            if name == "elliptic_oracle":
                if pencil.n != 1:
                    continue
                ref = poisson_oracle_n1(pencil.omegaInf, pencil.Omega)
                d = float(np.max(np.abs(ref.values - elliptic.psi.values)))
                put(fn.CheckResult(name, d <= 1e-10, d, 1e-10))
            else:
                tol = float(sc.elliptic.get("tol", 1e-11))
                put(fn.CheckResult(name, elliptic.residual_sup <= tol, elliptic.residual_sup, tol,
                                   f"delta={elliptic.reg_final:g}"))
        else:
            raise ConfigError(f"unknown check {name!r}")
    return out


# artifacts -----------------------------------------------------------------------

def _write_margins(path: Path, margins) -> None:
    with open(path, "w") as fh:
        fh.write("t,min_eig,volume_error\n")
        for row in margins:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _read_margins(path: Path):
    rows = Path(path).read_text().splitlines()[1:]
    return [tuple(float(x) for x in r.split(",")) for r in rows if r]


def _load_checkpoints(out: Path):
    return [io.read_field(p) for p in sorted((out / "checkpoints").glob("phi_t*.bin"))]


def _summary_base(sc: Scenario) -> dict:
    return {
        "scenario": sc.name, "n": sc.n, "N": sc.N, "kind": sc.kind.value, "T_end": sc.T_end,
        "integral_class": sc.integral_class, "backend": _kernels.BACKEND,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _finish(out: Path, summary: dict, status: int) -> int:
    summary["exit_code"] = status
    io.write_json(out / "summary.json", summary)
    return status


def _elliptic_dict(sol: EllipticSolution) -> dict:
    return {"residual_sup": sol.residual_sup, "reg_final": sol.reg_final, "iterations": sol.iterations,
            "c_final": sol.c_final, "path": sol.path}


def _try_compare(sc: Scenario, checkpoints, psi: ScalarField, pencil: Pencil, mask):
    """Comparison report, or ``None`` when the run is too short to compare."""
    if sum(1 for t, _ in checkpoints if t >= 2.0) < 3:
        return None
    return compare_limit(checkpoints, psi, pencil.Omega, mask, pencil,
                         window=tuple(sc.expected.get("rate_window", (2.0, 12.0))))


def run_scenario(sc: Scenario, out_dir, plots: bool = False) -> int:
    """Flow, elliptic solve, comparison and checks; writes all artifacts into ``out_dir``."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    for stale in (out / "checkpoints").glob("phi_t*.bin"):
        stale.unlink()
    (out / "scenario.cfg").write_text(sc.source)
    summary = _summary_base(sc)
    summary["overrides"] = {"N": sc.N, "T_end": sc.T_end}
    summary["error"] = None
    try:
        pencil = sc.pencil()
        cfg = sc.flow_config(pencil)
        mask = scenario_mask(sc, pencil)
    except (ConfigError, FormError, ValueError) as exc:
        summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return _finish(out, summary, EXIT_CONFIG)

    t0 = time.perf_counter()
    try:
        trace = run_flow(cfg)
    except (PositivityError, ArithmeticError, ValueError) as exc:
        summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return _finish(out, summary, EXIT_NUMERICAL)
    log.info("%s: flow finished in %.2fs (%d steps, %s)", sc.name, time.perf_counter() - t0,
             trace.steps, trace.termination)

    io.write_trace(out / "trace.csv", trace.records)
    _write_margins(out / "margins.csv", trace.margins)
    for t, phi in trace.checkpoints:
        io.write_field(out / "checkpoints" / io.checkpoint_name(t), phi, t)
    summary.update({"method": cfg.method, "termination": trace.termination, "steps": trace.steps,
                    "positivity_margin_min": min(m[1] for m in trace.margins)})
    if trace.checkpoints:
        phi_T = trace.checkpoints[-1][1].values
        summary["phi_final"] = {"t": trace.checkpoints[-1][0], "mean": float(np.mean(phi_T)),
                                "min": float(np.min(phi_T)), "max": float(np.max(phi_T))}
    summary["final_record"] = asdict(trace.records[-1])
    if trace.termination != "reached_T_end":
        summary["error"] = {"type": "FlowTermination", "message": trace.termination}
        return _finish(out, summary, EXIT_NUMERICAL)

    sol = report = None
    if sc.elliptic.get("enabled", True):
        try:
            sol = solve_elliptic(sc, pencil)
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
            return _finish(out, summary, EXIT_NUMERICAL)
        (out / "elliptic").mkdir(exist_ok=True)
        io.write_field(out / "elliptic" / "psi.bin", sol.psi, math.inf)
        summary["elliptic"] = _elliptic_dict(sol)
        report = _try_compare(sc, trace.checkpoints, sol.psi, pencil, mask)
        if report is None:
            summary["compare"] = {"skipped": "fewer than three checkpoints with t >= 2"}
        else:
            summary["compare"] = report.as_dict()
            if report.rate_fit is not None:
                summary["rate_fit"] = asdict(report.rate_fit)

    try:
        checks = evaluate_checks(sc, pencil, trace.records, trace.margins, trace.checkpoints,
                                 report, sol, mask)
    except ConfigError as exc:
        summary["error"] = {"type": "ConfigError", "message": str(exc)}
        return _finish(out, summary, EXIT_CONFIG)
    except (ArithmeticError, ValueError) as exc:
        summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return _finish(out, summary, EXIT_NUMERICAL)
    summary["checks"] = {k: c.as_dict() for k, c in checks.items()}
    if plots:
        from .plots import write_plots
        write_plots(out, trace.records, report)
    status = EXIT_OK if all(c.passed for c in checks.values()) else EXIT_INVARIANT
    return _finish(out, summary, status)


def solve_scenario(sc: Scenario, out_dir) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.cfg").write_text(sc.source)
    summary = _summary_base(sc)
    summary["error"] = None
    try:
        pencil = sc.pencil()
    except (ConfigError, FormError, ValueError) as exc:
        summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return _finish(out, summary, EXIT_CONFIG)
    try:
        sol = solve_elliptic(sc, pencil)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        summary["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return _finish(out, summary, EXIT_NUMERICAL)
    io.write_field(out / "psi.bin", sol.psi, math.inf)
    summary["elliptic"] = _elliptic_dict(sol)
    if pencil.n == 1:
        ref = poisson_oracle_n1(pencil.omegaInf, pencil.Omega)
        summary["elliptic"]["oracle_sup_diff"] = float(np.max(np.abs(ref.values - sol.psi.values)))
    return _finish(out, summary, EXIT_OK)


def _scenario_from_dir(d: Path) -> Scenario:
    sc = parse_scenario((d / "scenario.cfg").read_text())
    s = d / "summary.json"
    if s.exists():
        ov = io.read_json(s).get("overrides") or {}
        sc = sc.with_overrides(ov.get("N"), ov.get("T_end"))
    return sc


def _find_psi(d: Path) -> Path:
    for p in (d / "psi.bin", d / "elliptic" / "psi.bin"):
        if p.exists():
            return p
    raise FileNotFoundError(f"no psi.bin under {d}")


def compare_dirs(trace_dir, elliptic_dir) -> tuple[int, dict]:
    td = Path(trace_dir)
    sc = _scenario_from_dir(td)
    pencil = sc.pencil()
    mask = scenario_mask(sc, pencil)
    _, psi = io.read_field(_find_psi(Path(elliptic_dir)))
    if psi.grid != pencil.grid:
        raise ConfigError(f"elliptic grid {psi.grid} does not match the run grid {pencil.grid}")
    report = compare_limit(_load_checkpoints(td), psi, pencil.Omega, mask, pencil,
                           window=tuple(sc.expected.get("rate_window", (2.0, 12.0))))
    data = report.as_dict()
    io.write_json(td / "compare.json", data)
    return (EXIT_OK if report.monotone_after_2 else EXIT_INVARIANT), data


def verify_dir(out_dir) -> tuple[int, dict]:
    """Re-run every configured check against the stored artifacts."""
    d = Path(out_dir)
    sc = _scenario_from_dir(d)
    pencil = sc.pencil()
    mask = scenario_mask(sc, pencil)
    records = io.read_trace(d / "trace.csv")
    margins = _read_margins(d / "margins.csv")
    cps = _load_checkpoints(d)
    sol = report = None
    psi_path = d / "elliptic" / "psi.bin"
    if psi_path.exists():
        _, psi = io.read_field(psi_path)
        stored = io.read_json(d / "summary.json").get("elliptic", {})
        sol = EllipticSolution(psi, float(stored.get("residual_sup", math.inf)),
                               float(stored.get("reg_final", 0.0)), int(stored.get("iterations", 0)))
        report = _try_compare(sc, cps, psi, pencil, mask)
    checks = evaluate_checks(sc, pencil, records, margins, cps, report, sol, mask)
    result = {k: c.as_dict() for k, c in checks.items()}
    ok = all(c.passed for c in checks.values())
    return (EXIT_OK if ok else EXIT_INVARIANT), result


def run_path(cfg_path: str, out_dir: str) -> tuple[str, int]:
    """Process-pool entry point for sweeps."""
    logging.basicConfig(level=logging.WARNING)
    try:
        sc = load_scenario(cfg_path)
    except ConfigError:
        return cfg_path, EXIT_CONFIG
    return cfg_path, run_scenario(sc, Path(out_dir) / sc.name)
