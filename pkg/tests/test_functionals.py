import math

import numpy as np
import pytest

from torusmaf import functionals as fn
from torusmaf.flow import FlowConfig, initial_state, run_flow
from torusmaf.forms import Background, Pencil
from torusmaf.grid import HermitianField, ScalarField, make_grid, synth
from torusmaf.scenario import load_scenario


class _State:
    """Minimal stand-in carrying a metric and phidot."""

    def __init__(self, g, phidot, metric_diag=1.0):
        self.phidot = ScalarField(g, phidot)
        self.metric = HermitianField(g, np.full((1,) + g.shape, metric_diag))
        self.density = None


def constant_pencil(N=8):
    g = make_grid(1, N)
    return Pencil(Background.from_parts(g, [[2.0]]), Background.from_parts(g, [[1.0]]),
                  ScalarField.constant(g, 1.0))


def test_normalize_u_examples():
    g = make_grid(1, 64)
    one = ScalarField.constant(g, 1.0)
    np.testing.assert_allclose(fn.normalize_u(ScalarField.constant(g, 2.5), one).values, 0.0, atol=1e-15)
    c = synth(g, [((1, 0), 1.0, 0.0)])
    np.testing.assert_allclose(fn.normalize_u(c, one).values, c.values, atol=1e-15)
    Om = c * 0.5 + 1.0
    np.testing.assert_allclose(fn.normalize_u(c, Om).values, c.values - 0.25, atol=1e-14)


def test_energy_and_c_constant_scenario_at_zero():
    p = constant_pencil()
    st = initial_state(FlowConfig(p, "MAF1", 1.0))
    assert fn.energy_nu(st, p) == pytest.approx(2 * math.log(2), abs=1e-14)
    assert fn.energy_nu_logform(st, p) == pytest.approx(2 * math.log(2), abs=1e-14)
    assert fn.c_of_t(st) == pytest.approx(2 * math.log(2), abs=1e-14)
    assert fn.dissipation(st) == 0.0


def test_dissipation_examples():
    g = make_grid(1, 64)
    x = g.coords()[0]
    s = np.broadcast_to(np.sin(2 * np.pi * x), g.shape)
    assert fn.dissipation(_State(g, s)) == pytest.approx(math.pi ** 2, abs=1e-11)
    assert fn.dissipation(_State(g, 2 * s)) == pytest.approx(4 * math.pi ** 2, abs=1e-10)
    assert fn.dissipation(_State(g, np.full(g.shape, 0.3))) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(fn.SingularMetric):
        fn.dissipation(_State(g, s, metric_diag=1e-9))


def test_dissipation_n2_is_metric_weighted():
    """For a constant metric G, the integrand is 2 v^H cof(G) v; compare with a dense evaluation."""
    g = make_grid(2, 8)
    G = np.array([[2.0, 0.5 + 0.25j], [0.5 - 0.25j, 1.5]])
    f = synth(g, [((1, 0, 0, 1), 0.3, 0.1), ((0, 1, 1, 1), -0.2, 0.7)])

    class S:
        phidot = f
        metric = HermitianField(g, np.stack([np.full(g.shape, 2.0), np.full(g.shape, 1.5)]),
                                np.full(g.shape, G[0, 1]))
        density = None

    from torusmaf.grid import spectral_gradient_z
    v = spectral_gradient_z(f)
    Ginv = np.linalg.inv(G)
    # |grad f|^2 = 2 sum g^{j kbar} f_j f_kbar, with g^{j kbar} the (k, j) entry of G^{-1}
    q = 2 * np.real(sum(Ginv[k, j] * v[j] * np.conj(v[k]) for j in range(2) for k in range(2)))
    ref = float(np.mean(q * np.linalg.det(G).real))
    assert fn.dissipation(S()) == pytest.approx(ref, rel=1e-12)
    assert fn.sobolev_gradient_sup(S()) == pytest.approx(float(q.max()), rel=1e-12)


def test_exp_rate_fit_examples():
    ts = np.arange(2, 11)
    fit = fn.exp_rate_fit([(t, 3 * math.exp(-0.7 * t)) for t in ts], (2, 10))
    assert fit.alpha == pytest.approx(0.7, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    const = fn.exp_rate_fit([(t, 2.0) for t in ts])
    assert const.alpha == 0.0
    with pytest.raises(fn.NonPositiveSeries):
        fn.exp_rate_fit([(t, 1.0 - 0.2 * t) for t in ts])
    with pytest.raises(ValueError):
        fn.exp_rate_fit([(t, 1.0) for t in ts], (2, 3))


def test_stationary_records_and_slope():
    g = make_grid(1, 16)
    one = Background.from_parts(g, [[1.0]])
    p = Pencil(one, one, ScalarField.constant(g, 1.0))
    tr = run_flow(FlowConfig(p, "MAF1", 1.0, record_every=0.1))
    rep = fn.energy_slope_check(tr.records, p)
    assert rep.violations == 0 and rep.max_violation == 0.0
    st = tr.final_state
    assert fn.sobolev_gradient_sup(st) == 0.0
    assert fn.c_of_t(st) == 0.0


def test_constant_scenario_slope_tight():
    p = constant_pencil()
    tr = run_flow(FlowConfig(p, "MAF1", 5.0, dt0=1e-3, dt_max=1e-3, record_every=0.05))
    rep = fn.energy_slope_check(tr.records, p, tol=1e-8)
    assert rep.max_violation <= 1e-8
    # C* assembled from data: |n chi [omega_t]^{n-1}| + sup|phidot| (omega0 + omegaInf)
    assert rep.C_star == pytest.approx(1.0 + math.log(2) * 3.0, rel=1e-12)


def test_slope_check_detects_growth():
    p = constant_pencil()
    recs = [fn.EnergyRecord(t, 10 * t, 10 * t, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.1) for t in (0, 0.1, 0.2)]
    assert fn.energy_slope_check(recs, p).violations == 2


def test_record_invariants_on_kahler_run():
    sc = load_scenario("kahler-n1").with_overrides(N=32, T_end=2.0)
    p = sc.pencil()
    tr = run_flow(sc.flow_config(p))
    for r in tr.records:
        assert r.dissipation >= 0
        assert r.min_phidot * r.V_t <= r.c_t + 1e-12
        assert r.c_t <= r.max_phidot * r.V_t + 1e-12
        assert r.nu >= r.jensen_floor - 1e-8
        assert r.nu == pytest.approx(r.nu_logform, abs=1e-12)
    assert fn.jensen_check(tr.records).passed
    assert fn.bracket_check(tr.records).passed
    assert fn.nu_bound_check(tr.records).passed
    assert fn.energy_slope_check(tr.records, p, sc.kind).max_violation <= 1e-6


def test_gradient_sup_respects_mask():
    g = make_grid(1, 32)
    x = g.coords()[0]
    st = _State(g, np.broadcast_to(np.sin(2 * np.pi * x), g.shape))
    full = fn.sobolev_gradient_sup(st)
    mask = np.ones(g.shape, bool)
    mask[6:11] = False  # keep a strip around x = 1/4, where cos^2 is small
    assert fn.sobolev_gradient_sup(st, mask) < 0.2 * full


def test_maf2_checks_on_synthetic_decay():
    recs = [fn.EnergyRecord(t, 0, 0, 0, -math.exp(-t), math.exp(-t), 0, 1, 0, 0.01)
            for t in np.linspace(0, 5, 51)]
    half, ess = fn.maf2_decay_checks(recs)
    assert half.passed and ess.passed
    bad = [fn.EnergyRecord(t, 0, 0, 0, 0, 1.0, 0, 1, 0, 0.01) for t in np.linspace(0, 5, 51)]
    half, ess = fn.maf2_decay_checks(bad)
    assert not half.passed and not ess.passed


def test_record_columns_exact_order():
    assert fn.EnergyRecord.columns() == ["t", "nu", "nu_logform", "dissipation", "min_phidot",
                                         "max_phidot", "c_t", "V_t", "jensen_floor", "dt_used"]
