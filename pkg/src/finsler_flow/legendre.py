"""Legendre transform, Finsler gradients, frozen-direction metrics and Chern Hessians."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry
from .errors import DomainError, SolverError
from .grid import ScalarField, diff, mask_from_covector

GUESS_POLICIES = ("warm", "metric-raise", "euclidean")


@dataclass(frozen=True)
class LegendreSolveConfig:
    tolerance: float = 1e-12
    max_iterations: int = 50
    initial_guess: str = "metric-raise"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 8:
            raise ValueError("max_iterations must be at least 8")
        if self.initial_guess not in GUESS_POLICIES:
            raise ValueError(f"initial_guess must be one of {GUESS_POLICIES}")


DEFAULT_SOLVE = LegendreSolveConfig()


def _solve2(A, r):
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    return np.stack([(A[..., 1, 1] * r[..., 0] - A[..., 0, 1] * r[..., 1]) / det,
                     (A[..., 0, 0] * r[..., 1] - A[..., 1, 0] * r[..., 0]) / det], axis=-1)


def legendre_transform(metric, x, t, xi, config: LegendreSolveConfig = DEFAULT_SOLVE,
                       initial: Optional[np.ndarray] = None) -> np.ndarray:
    """Vector y with g_ij(x, y) y^j = xi_i, i.e. the inverse Legendre map L*(xi).

    Damped Newton on y -> 1/2 dF^2/dy (Jacobian g(y)).  Batched over leading
    axes; xi = 0 maps to y = 0.  ``initial`` seeds the iteration when the
    policy is 'warm' (falls back to 'metric-raise' where it is zero).
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], xi.shape[:-1], np.shape(t))
    xf = np.broadcast_to(x, shape + (2,)).reshape(-1, 2)
    xif = np.broadcast_to(xi, shape + (2,)).reshape(-1, 2)
    tf = np.broadcast_to(np.asarray(t, dtype=float), shape).reshape(-1)
    y = np.zeros_like(xif)
    scale = np.linalg.norm(xif, axis=-1)
    live = scale > 0
    if not np.any(live):
        return y.reshape(shape + (2,))
    X, XI, T, S = xf[live], xif[live], tf[live], scale[live]

    if config.initial_guess == "euclidean":
        Y = XI.copy()
    else:
        g0, *_ = geometry.fundamental_tensor(metric, X, XI, T)
        Y = _solve2(g0, XI)
        if config.initial_guess == "warm" and initial is not None:
            w = np.broadcast_to(np.asarray(initial, float), shape + (2,)).reshape(-1, 2)[live]
            ok = np.any(w != 0, axis=-1)
            Y[ok] = w[ok]

    def residual(Yc, idx=slice(None)):
        _, _, half_grad, _ = geometry.fundamental_tensor(metric, X[idx], Yc, T[idx])
        return half_grad - XI[idx]

    g, _, half_grad, _ = geometry.fundamental_tensor(metric, X, Y, T)
    r = half_grad - XI
    rn = np.linalg.norm(r, axis=-1) / S
    for _ in range(config.max_iterations):
        todo = rn > config.tolerance
        if not np.any(todo):
            break
        idx = np.flatnonzero(todo)
        step = _solve2(g[idx], r[idx])
        lam = np.ones(len(idx))
        for _halve in range(30):
            trial = Y[idx] - lam[:, None] * step
            bad = np.all(trial == 0, axis=-1)
            trial[bad] = Y[idx][bad]
            rt = residual(trial, idx)
            rtn = np.linalg.norm(rt, axis=-1) / S[idx]
            worse = (rtn > rn[idx]) & (lam > 1e-6) & (rtn > config.tolerance)
            if not np.any(worse):
                break
            lam = np.where(worse, 0.5 * lam, lam)
        Y[idx] = trial
        gi, _, hg, _ = geometry.fundamental_tensor(metric, X[idx], trial, T[idx])
        g[idx] = gi
        r[idx] = hg - XI[idx]
        rn[idx] = np.linalg.norm(r[idx], axis=-1) / S[idx]
    if np.any(rn > config.tolerance):
        k = int(np.argmax(rn))
        raise SolverError(f"Legendre Newton did not converge (residual {rn[k]:.3g})",
                          residual=float(rn[k]), location=tuple(X[k]))
    y[live] = Y
    return y.reshape(shape + (2,))


def dual_norm(metric, x, t, xi, y=None, config: LegendreSolveConfig = DEFAULT_SOLVE) -> np.ndarray:
    """F*(xi) = xi(L*xi) / F(L*xi), zero where xi = 0."""
    xi = np.asarray(xi, dtype=float)
    if y is None:
        y = legendre_transform(metric, x, t, xi, config)
    F = metric.norm(x, y, t)
    pair = np.einsum("...i,...i->...", xi, y)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(F > 0, pair / np.where(F > 0, F, 1.0), 0.0)


def linearized_metric(metric, x, t, V):
    """Fundamental tensor and inverse frozen at reference direction V."""
    V = np.asarray(V, dtype=float)
    if np.any(np.all(V == 0, axis=-1)):
        raise DomainError("reference direction must be nonzero")
    g, ginv, _, _ = geometry.fundamental_tensor(metric, x, V, t)
    return g, ginv


@dataclass
class GradientData:
    covector: np.ndarray  # df, shape (n1, n2, 2)
    vector: np.ndarray  # grad f, zero off-mask
    norm: np.ndarray  # F(grad f)
    dual: np.ndarray  # F*(df)
    mask: np.ndarray


def gradient_field(metric, f: ScalarField, t: float, config: LegendreSolveConfig = DEFAULT_SOLVE,
                   initial: Optional[np.ndarray] = None, covector: Optional[np.ndarray] = None) -> GradientData:
    """Nodewise Legendre gradient of a grid field (zero off the smooth-point mask)."""
    grid = f.grid
    if covector is None:
        covector = np.stack([diff(f.values, grid, 0), diff(f.values, grid, 1)], axis=-1)
    mask = mask_from_covector(f.values, covector, f.mask_tol)
    x = grid.points().reshape(grid.shape + (2,))
    xi = np.where(mask[..., None], covector, 0.0)
    try:
        V = legendre_transform(metric, x, t, xi, config, initial=initial)
    except SolverError as exc:
        raise SolverError(f"{exc} at node {exc.location}", exc.residual, exc.location) from exc
    F = np.where(mask, metric.norm(x, V, t), 0.0)
    pair = np.einsum("...i,...i->...", xi, V)
    dual = np.where(mask, pair / np.where(F > 0, F, 1.0), 0.0)
    return GradientData(covector, V, F, dual, mask)


@dataclass
class HessianData:
    reference: np.ndarray  # V = grad f
    hessian: np.ndarray  # f_{i|j}(V)
    hs_norm: np.ndarray
    trace: np.ndarray

    @property
    def hs_norm_sq(self) -> np.ndarray:
        return self.hs_norm**2


def hessian_from_derivatives(metric, x, t, V, df, d2f) -> HessianData:
    """Chern Hessian f_{i|j} = d_i d_j f - Gamma^k_ij(V) f_k with V-referenced data."""
    _, _, gamma = geometry.eval_connection(metric, x, V, t)
    H = d2f - np.einsum("...kij,...k->...ij", gamma, df)
    _, ginv = linearized_metric(metric, x, t, V)
    raised = np.einsum("...ik,...kl,...lj->...ij", ginv, H, ginv)
    hs2 = np.einsum("...ij,...ij->...", raised, H)
    tr = np.einsum("...ij,...ij->...", ginv, H)
    return HessianData(np.asarray(V), H, np.sqrt(np.maximum(hs2, 0.0)), tr)


def second_derivatives(values: np.ndarray, grid) -> np.ndarray:
    d11 = diff(values, grid, 0, 2)
    d22 = diff(values, grid, 1, 2)
    d12 = diff(diff(values, grid, 0), grid, 1)
    return np.stack([np.stack([d11, d12], -1), np.stack([d12, d22], -1)], -2)


def hessian_field(metric, f: ScalarField, t: float, grad: Optional[GradientData] = None,
                  mask: Optional[np.ndarray] = None) -> tuple[HessianData, np.ndarray]:
    """Hessian data at the masked nodes; returns ``(data, node_mask)`` with flattened data."""
    grid = f.grid
    if grad is None:
        grad = gradient_field(metric, f, t)
    m = grad.mask if mask is None else (mask & grad.mask)
    x = grid.points().reshape(grid.shape + (2,))[m]
    d2 = second_derivatives(f.values, grid)[m]
    return hessian_from_derivatives(metric, x, t, grad.vector[m], grad.covector[m], d2), m


def hessian_hs(metric, f: ScalarField, node: tuple[int, int], t: float) -> HessianData:
    """Hessian data at a single grid node; off-mask nodes are a domain error."""
    i, j = node
    if not f.mask[i, j]:
        raise DomainError(f"node {node} is a critical point; the Hessian reference direction is undefined")
    grad = gradient_field(metric, f, t)
    sel = np.zeros(f.grid.shape, dtype=bool)
    sel[i, j] = True
    data, _ = hessian_field(metric, f, t, grad, sel)
    return HessianData(data.reference[0], data.hessian[0], data.hs_norm[0], data.trace[0])
