import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import randers_dual
from finsler_flow import geometry, metrics
from finsler_flow.errors import DomainError, SolverError
from finsler_flow.grid import build_grid
from finsler_flow.legendre import (LegendreSolveConfig, dual_norm, gradient_field, hessian_field,
                                   hessian_from_derivatives, hessian_hs, legendre_transform, linearized_metric)
from finsler_flow.pointwise import pointwise_gradient

RANDERS = metrics.randers(b_const=(0.3, 0.0))
SINE = metrics.randers(b_sine=(0.2, 0.0), conformal_amplitude=0.1)


def test_euclidean_gradient_is_identity(rng):
    xi = rng.normal(size=(20, 2))
    np.testing.assert_allclose(legendre_transform(metrics.euclidean(), np.zeros(2), 0.0, xi), xi, atol=1e-14)


def test_randers_closed_form(rng):
    xi = rng.normal(size=(300, 2))
    V = legendre_transform(RANDERS, np.zeros((300, 2)), 0.0, xi)
    Fs, Vref = randers_dual(np.array([0.3, 0.0]), xi)
    np.testing.assert_allclose(V, Vref, atol=1e-10 * np.abs(Vref).max())
    np.testing.assert_allclose(dual_norm(RANDERS, np.zeros((300, 2)), 0.0, xi), Fs, rtol=1e-10)


def test_shrinking_randers_closed_form(rng):
    m = metrics.shrinking(RANDERS, 0.1)
    xi = rng.normal(size=(50, 2))
    V = legendre_transform(m, np.zeros((50, 2)), 0.4, xi)
    _, Vref = randers_dual(np.array([0.3, 0.0]), xi, scale=np.exp(-0.04))
    np.testing.assert_allclose(V, Vref, rtol=1e-10)


@given(c=st.floats(0.01, 100.0), a=st.floats(0, 2 * np.pi), x1=st.floats(0, 6.28))
@settings(max_examples=30, deadline=None)
def test_legendre_map_is_positively_homogeneous(c, a, x1):
    xi = np.array([np.cos(a), np.sin(a)])
    x = np.array([x1, 1.0])
    V1 = legendre_transform(SINE, x, 0.0, xi)
    Vc = legendre_transform(SINE, x, 0.0, c * xi)
    np.testing.assert_allclose(Vc, c * V1, rtol=1e-10, atol=1e-12 * c * np.linalg.norm(V1))


@given(a=st.floats(0, 2 * np.pi), x1=st.floats(0, 6.28), x2=st.floats(0, 6.28))
@settings(max_examples=30, deadline=None)
def test_legendre_inverts_metric_lowering(a, x1, x2):
    xi = np.array([np.cos(a), 0.5 * np.sin(a)])
    x = np.array([x1, x2])
    V = legendre_transform(SINE, x, 0.0, xi)
    g, ginv, _, _ = geometry.fundamental_tensor(SINE, x, V, 0.0)
    np.testing.assert_allclose(g @ V, xi, atol=1e-12)
    # duality F(grad f) = F*(df)
    assert SINE.norm(x, V, 0.0) == pytest.approx(dual_norm(SINE, x, 0.0, xi), rel=1e-12)


def test_zero_covector_maps_to_zero():
    assert np.all(legendre_transform(SINE, np.zeros(2), 0.0, np.zeros(2)) == 0)
    assert dual_norm(SINE, np.zeros(2), 0.0, np.zeros(2)) == 0


def test_warm_start_reaches_same_answer(rng):
    x = rng.uniform(0, 6, (40, 2))
    xi = rng.normal(size=(40, 2))
    cold = legendre_transform(SINE, x, 0.0, xi)
    warm = legendre_transform(SINE, x, 0.0, xi, LegendreSolveConfig(initial_guess="warm"), initial=-xi)
    euc = legendre_transform(SINE, x, 0.0, xi, LegendreSolveConfig(initial_guess="euclidean"))
    np.testing.assert_allclose(warm, cold, atol=1e-11)
    np.testing.assert_allclose(euc, cold, atol=1e-11)


def test_solver_failure_reports_location():
    with pytest.raises(SolverError) as err:
        legendre_transform(SINE, np.array([[0.5, 0.5]]), 0.0, np.array([[1.0, 0.3]]),
                           LegendreSolveConfig(tolerance=1e-30, max_iterations=8))
    assert err.value.location is not None


def test_solve_config_validation():
    with pytest.raises(ValueError):
        LegendreSolveConfig(initial_guess="guess")
    with pytest.raises(ValueError):
        LegendreSolveConfig(tolerance=0)


def test_linearized_metric(rng):
    x = rng.uniform(0, 6, (10, 2))
    V = rng.normal(size=(10, 2))
    g, gi = linearized_metric(SINE, x, 0.0, V)
    np.testing.assert_allclose(np.einsum("bij,bjk->bik", g, gi), np.broadcast_to(np.eye(2), g.shape), atol=1e-12)
    with pytest.raises(DomainError):
        linearized_metric(SINE, x[:1], 0.0, np.zeros((1, 2)))


def test_gradient_field_flat_and_mask():
    grid = build_grid((64, 64))
    f = grid.sample(lambda x1, x2: np.sin(x1))
    gr = gradient_field(metrics.euclidean(), f, 0.0)
    x1, _ = grid.coords()
    np.testing.assert_allclose(gr.vector[..., 0], np.cos(x1), atol=1e-7)
    np.testing.assert_allclose(gr.norm, gr.dual, atol=1e-12)
    const = grid.sample(lambda x1, x2: 1.0 + 0 * x1)
    gc = gradient_field(metrics.euclidean(), const, 0.0)
    assert not gc.mask.any() and np.all(gc.vector == 0)


def test_riemannian_hessian_trace_is_laplace_beltrami(rng):
    m = metrics.riemannian_conformal(0.2)
    x = rng.uniform(0, 6, (20, 2))
    df = np.stack([np.cos(x[:, 0]), 0.5 * np.ones(20)], -1)
    d2f = np.zeros((20, 2, 2))
    d2f[:, 0, 0] = -np.sin(x[:, 0])
    gr = pointwise_gradient(m, x, 0.0, df, d2f)
    H = hessian_from_derivatives(m, x, 0.0, gr.vector, df, d2f)
    # conformal metrics in 2-d: Laplace-Beltrami = e^{-2 phi} (f_11 + f_22)
    lap = np.exp(-2 * 0.2 * np.cos(x[:, 0])) * (d2f[:, 0, 0] + d2f[:, 1, 1])
    np.testing.assert_allclose(H.trace, lap, atol=1e-12)
    assert np.all(H.hs_norm_sq >= H.trace**2 / 2 - 1e-12)


def test_hessian_field_and_node_access():
    grid = build_grid((32, 32))
    f = grid.sample(lambda x1, x2: np.sin(x1) + 0.3 * np.cos(x2))
    data, m = hessian_field(SINE, f, 0.0)
    assert data.hessian.shape == (int(m.sum()), 2, 2)
    np.testing.assert_allclose(data.hessian, np.swapaxes(data.hessian, -1, -2), atol=1e-10)
    one = hessian_hs(SINE, f, (3, 5), 0.0)
    k = int(np.flatnonzero(m.ravel()).tolist().index(3 * 32 + 5))
    assert one.hs_norm == pytest.approx(data.hs_norm[k])
    flat = grid.sample(lambda x1, x2: 1.0 + 0 * x1)
    with pytest.raises(DomainError):
        hessian_hs(SINE, flat, (0, 0), 0.0)
