from types import SimpleNamespace

import numpy as np
import pytest

from conftest import scenario_families
from finsler_flow import identities, metrics
from finsler_flow import jets as J
from finsler_flow.flow import run_heat_flow
from finsler_flow.grid import build_grid
from finsler_flow.identities import ResidualReport
from finsler_flow.pointwise import ScriptedField

FAMILIES = scenario_families()
IDS = [f[0] for f in FAMILIES]

EVOLVING = ScriptedField(lambda a, b, t: (J.sin(a) + 0.3 * J.sin(b)) * J.exp(-0.5 * t)
                         + 0.2 * t * J.cos(a + 2 * b))
SHRINK = metrics.shrinking(metrics.randers(b_sine=(0.2, 0.0)), 0.1)
BUMP = metrics.cosine_bump(0.2)


def drifting_metric():
    def phi(x1, x2, t):
        return 0.1 * J.cos(x1) * (1.0 + 0.5 * t)

    def b(x1, x2, t):
        return 0.15 * J.sin(x2) * (1.0 + t), 0.05 * t + 0.0 * x1

    return metrics.composite(phi=phi, b=b)


def probes(rng, count=20):
    return rng.uniform(0, 2 * np.pi, (count, 2))


# ---- report bookkeeping ---------------------------------------------------

def test_report_relative_and_order():
    rep = ResidualReport("demo", "3", np.array([1e-4, -3e-4]), 2.0, 1e-3)
    assert rep.sup_residual == pytest.approx(3e-4)
    assert rep.relative == pytest.approx(1.5e-4)
    assert rep.order is None and rep.passed
    rep.levels = [(0.4, 1.6e-3), (0.2, 4e-4), (0.1, 1e-4)]
    rep.order_required = 1.5
    assert rep.orders == pytest.approx([2.0, 2.0])
    assert rep.order == pytest.approx(2.0) and rep.passed
    rep.order_required = 2.5
    assert not rep.passed
    assert rep.summary()["verdict"] == "FAIL"


def test_report_failures():
    assert not ResidualReport("big", "1", np.array([1.0]), 1.0, 1e-3).passed
    flagged = ResidualReport("flag", "1", np.array([0.0]), 1.0, 1e-3, flags=["unreliable"])
    assert not flagged.passed
    empty = ResidualReport("empty", "0", np.zeros(0), 0.0, 1e-3)
    assert empty.sup_residual == 0.0 and empty.passed
    two = ResidualReport("two", "1", np.array([0.0]), 1.0, 1e-3, levels=[(1, 1e-2), (0.5, 1e-3)],
                         order_required=1.0)
    assert two.order is None and not two.passed


def test_time_derivative_is_exact_for_quadratics_on_uneven_stamps():
    times = [0.1, 0.13, 0.2]
    values = [np.full(3, 2 * t * t - t + 1) for t in times]
    traj = SimpleNamespace(times=times)
    d, flag = identities._time_derivative(traj, 1, values)
    assert flag is None
    np.testing.assert_allclose(d, 4 * 0.13 - 1, rtol=1e-12)
    _, flag = identities._time_derivative(traj, 0, values)
    assert flag == "one-sided"


# ---- sphere-bundle identities ---------------------------------------------

@pytest.mark.parametrize("name,metric,measure", FAMILIES, ids=IDS)
def test_tensor_identity_suite_passes(name, metric, measure, rng):
    reports = identities.tensor_identity_suite(metric, measure, rng, count=60)
    assert [r.tag for r in reports] == ["homogeneity", "cartan_contraction", "metric_compatibility",
                                        "spray_connection"]
    for rep in reports:
        assert rep.passed, rep.summary()
    assert reports[2].order >= 2


def test_homogeneity_detects_a_broken_scaling(rng, monkeypatch):
    metric, measure = FAMILIES[3][1], FAMILIES[3][2]
    x, y, t = identities.bundle_samples(metric, rng, 10)
    original = metrics.MetricFamily.norm
    monkeypatch.setattr(metrics.MetricFamily, "norm",
                        lambda self, xx, yy, tt=0.0: original(self, xx, yy, tt) ** 1.1)
    assert not identities.check_homogeneity(metric, measure, x, y, t).passed


def test_bundle_samples_are_unit_and_in_window(rng):
    metric = FAMILIES[3][1]
    x, y, t = identities.bundle_samples(metric, rng, 50, (0.1, 0.4))
    np.testing.assert_allclose(metric.norm(x, y, t), 1.0, rtol=1e-12)
    assert np.all((t >= 0.1) & (t <= 0.4))
    assert np.all((x >= 0) & (x < 2 * np.pi))


# ---- Bochner --------------------------------------------------------------

def test_flat_bochner_is_the_classical_identity():
    def residual(n):
        u = build_grid((n, n)).sample(lambda a, b: np.sin(a) * np.cos(b) + 0.3 * np.cos(2 * a))
        return identities.check_bochner(metrics.euclidean(), metrics.zero_measure(), u).relative

    coarse, fine = residual(64), residual(128)
    assert coarse < 5e-5
    assert fine < coarse / 32


def test_bochner_converges_on_conformal_family():
    metric, measure = metrics.riemannian_conformal(0.1), BUMP
    script = ScriptedField(lambda a, b, t: J.sin(a) + 0.3 * J.sin(b))
    rep = identities.bochner_convergence(metric, measure, script, (16, 32, 64), primary=2)
    assert rep.passed and rep.order >= 2


# ---- scripted evolution identities ----------------------------------------

@pytest.mark.parametrize("metric", [SHRINK, drifting_metric()], ids=["shrink", "drifting"])
def test_gradient_norm_rate_and_exchange_converge(metric, rng):
    x = probes(rng)
    rep31 = identities.step_ladder(lambda s: identities.check_lemma31(metric, EVOLVING, 0.3, x, s))
    rep_i, rep_ii = identities.step_ladder(
        lambda s: identities.check_exchange(metric, BUMP, EVOLVING, 0.3, x, s))
    for rep in (rep31, rep_i, rep_ii):
        assert rep.passed, rep.summary()
        assert rep.order == pytest.approx(2.0, abs=0.3)


def test_gradient_norm_rate_fails_when_flow_tensor_is_dropped(rng, monkeypatch):
    x = probes(rng)
    monkeypatch.setattr(identities, "flow_tensor", lambda *a, **k: np.zeros((len(x), 2, 2)))
    rep = identities.check_lemma31(SHRINK, EVOLVING, 0.3, x)
    assert not rep.passed


def test_probe_skips_critical_points():
    f = ScriptedField(lambda a, b, t: J.sin(a) * J.sin(b) + 0.0 * t)
    x = np.array([[np.pi / 2, np.pi / 2], [0.3, 1.1]])
    rep = identities.check_lemma31(SHRINK, f, 0.2, x)
    assert rep.skipped == 1


def test_j_by_parts_quadrature_on_shrinking_family():
    f = EVOLVING
    phi = ScriptedField(lambda a, b, t: J.sin(a + b))
    rep = identities.lemma33_convergence(SHRINK, BUMP, f, phi, 0.3, resolution=64)
    assert rep.passed, rep.summary()
    assert abs(rep.params["divergence_correction"]) < 1e-10


def test_j_by_parts_flags_a_mostly_critical_field():
    const = ScriptedField(lambda a, b, t: 1.0 + 0.0 * a)
    phi = ScriptedField(lambda a, b, t: J.sin(a + b))
    rep = identities.check_lemma33_quadrature(SHRINK, BUMP, const, phi, build_grid((16, 16)), 0.3)
    assert "unreliable" in rep.flags and not rep.passed


def test_shrink_reduction(rng):
    x = probes(rng)
    rep = identities.check_shrink_reduction(SHRINK, BUMP, EVOLVING, 0.3, x)
    assert rep.passed and rep.relative < 1e-6
    assert rep.params["flow_tensor_gap"] < 1e-9
    with pytest.raises(ValueError):
        identities.check_shrink_reduction(metrics.randers(b_sine=(0.2, 0.0)), BUMP, EVOLVING, 0.3, x)


# ---- trajectory identities ------------------------------------------------

@pytest.fixture(scope="module")
def flat_trajectory():
    grid = build_grid((32, 32))
    u0 = grid.sample(lambda a, b: 2 + np.cos(a) + 0.5 * np.cos(b))
    return run_heat_flow(metrics.euclidean(), metrics.zero_measure(), u0, [0.09, 0.1, 0.11])


def test_trajectory_identities_on_flat_flow(flat_trajectory):
    ctx = identities.trajectory_context(flat_trajectory, 1)
    assert np.all(ctx.J == 0) and np.all(ctx.h_grad == 0)
    lh = identities.check_log_heat(flat_trajectory, 1, ctx=ctx)
    sg, sf = identities.check_evolution_pdes(flat_trajectory, 2.0, 1, ctx=ctx)
    for rep in (lh, sg, sf):
        assert rep.relative < 5e-3, rep.summary()
        assert rep.flags == []
    edge = identities.check_log_heat(flat_trajectory, 0)
    assert edge.flags == ["one-sided"]


def test_hessian_trace_inequality_on_flat_flow(flat_trajectory):
    for k in range(3):
        rep = identities.check_hessian_trace_inequality(flat_trajectory, k, 4.0)
        assert rep.passed and rep.params["min_slack"] >= -1e-8
    with pytest.raises(ValueError):
        identities.check_hessian_trace_inequality(flat_trajectory, 0, 2.0)
