"""Weighted divergence, Finsler Laplacians, flow tensors, J, and the heat-flow integrator.

The geometric flow is prescribed by a closed-form family F(x, y; t); its
tensor is recovered as h = -1/2 dg/dt by time differencing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import geometry
from .errors import ConfigurationError, DomainError, IntegrationError
from .grid import GridSpec, ScalarField, diff, gradient_covector, integrate
from .legendre import (DEFAULT_SOLVE, GradientData, LegendreSolveConfig, dual_norm, gradient_field,
                       hessian_from_derivatives, second_derivatives)
from .pointwise import time_derivative

TIME_STEP = 1e-5
# nested use (spatial differences of h) trades the tiny step for Richardson extrapolation
NESTED_TIME_STEP = 1e-3


# ---------------------------------------------------------------------------
# divergence and Laplacians

def divergence_mu(measure, V: np.ndarray, grid: GridSpec) -> ScalarField:
    """div_mu V = e^{-Phi} d_i(e^{Phi} V^i), conservative so that the mu-integral vanishes."""
    w = measure.density_on(grid)
    div = (diff(w * V[..., 0], grid, 0) + diff(w * V[..., 1], grid, 1)) / w
    return ScalarField(grid, 0.0, div)


def finsler_laplacian(metric, measure, u: ScalarField, t: float,
                      config: LegendreSolveConfig = DEFAULT_SOLVE, initial=None,
                      return_gradient: bool = False):
    """Nonlinear Laplacian div_mu(grad u); the flux vanishes where du = 0."""
    grad = gradient_field(metric, u, t, config, initial)
    lap = ScalarField(u.grid, t, divergence_mu(measure, grad.vector, u.grid).values)
    return (lap, grad) if return_gradient else lap


def linearized_laplacian(metric, measure, reference: np.ndarray, v: ScalarField, t: float,
                         covector: Optional[np.ndarray] = None) -> ScalarField:
    """Delta^V v = div_mu(g^{ij}(V) v_i d_j) with V frozen per node; nodes with V = 0 carry zero flux."""
    grid = v.grid
    dv = gradient_covector(v.values, grid) if covector is None else covector
    live = np.any(reference != 0, axis=-1)
    x = grid.points().reshape(grid.shape + (2,))
    flux = np.zeros(grid.shape + (2,))
    if np.any(live):
        _, ginv, _, _ = geometry.fundamental_tensor(metric, x[live], reference[live], t)
        flux[live] = np.einsum("bij,bi->bj", ginv, dv[live])
    return ScalarField(grid, t, divergence_mu(measure, flux, grid).values)


# ---------------------------------------------------------------------------
# flow tensor

def _gfun(metric, x, y, upper=False):
    k = 1 if upper else 0
    return lambda s: geometry.fundamental_tensor(metric, x, y, s)[k]


def flow_tensor(metric, x, y, t, step: float = TIME_STEP, richardson: bool = False) -> np.ndarray:
    """h_ij = -1/2 d/dt g_ij(x, y; t); one-sided when the stencil would cross t = 0."""
    one_sided = bool(np.min(t) - step < 0.0)
    return -0.5 * time_derivative(_gfun(metric, x, y), np.asarray(t, float), step, richardson, one_sided)


def flow_tensor_upper(metric, x, y, t, step: float = TIME_STEP, richardson: bool = False) -> np.ndarray:
    """h^{ij} = g^{ik} h_kl g^{lj}."""
    h = flow_tensor(metric, x, y, t, step, richardson)
    _, gi, _, _ = geometry.fundamental_tensor(metric, x, y, t)
    return np.einsum("...ik,...kl,...lj->...ij", gi, h, gi)


def _nested_lower(metric):
    def ev(x, y, t):
        return flow_tensor(metric, x, y, t, NESTED_TIME_STEP, richardson=True)
    return ev


def _nested_upper(metric):
    def ev(x, y, t):
        return flow_tensor_upper(metric, x, y, t, NESTED_TIME_STEP, richardson=True)
    return ev


@dataclass
class FlowTensorPackage:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    h: np.ndarray  # h_ij
    h_y: np.ndarray  # h(y) = h_ij y^i y^j
    H: np.ndarray  # h(y) / F^2
    h_upper: np.ndarray  # h^{ij}
    traced: np.ndarray  # h^i_{j|i}
    vertical: np.ndarray  # h^{ij}_{;k}, last index k
    hs_h: np.ndarray
    hs_vertical: np.ndarray
    dual_traced: np.ndarray
    one_sided: bool = False


def flow_tensor_suite(metric, x, y, t, time_step: float = TIME_STEP, richardson: bool = False,
                      derivative_step: float = 1e-3, stencil: int = 4) -> FlowTensorPackage:
    """All flow-tensor objects at (x, y, t), referenced at direction y."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1], np.shape(t))
    xf = np.broadcast_to(x, shape + (2,)).reshape(-1, 2)
    yf = np.broadcast_to(y, shape + (2,)).reshape(-1, 2)
    tf = np.broadcast_to(np.asarray(t, float), shape).ravel()
    one_sided = bool(np.min(tf) - time_step < 0)
    g, gi, _, F2 = geometry.fundamental_tensor(metric, xf, yf, tf)
    h = flow_tensor(metric, xf, yf, tf, time_step, richardson)
    hu = np.einsum("bik,bkl,blj->bij", gi, h, gi)
    hy = np.einsum("bij,bi,bj->b", h, yf, yf)
    conn = geometry.eval_connection(metric, xf, yf, tf)[1:]
    if metric.static:
        traced = np.zeros((len(xf), 2))
        vert = np.zeros((len(xf), 2, 2, 2))
    else:
        hor, _ = geometry.chern_derivatives(metric, _nested_lower(metric), xf, yf, tf, ("lower", "lower"),
                                            derivative_step, stencil, connection=conn)
        traced = np.einsum("bki,bkji->bj", gi, hor)
        _, vert = geometry.chern_derivatives(metric, _nested_upper(metric), xf, yf, tf, ("upper", "upper"),
                                             derivative_step, stencil, connection=conn)
    hs_h = np.sqrt(np.maximum(np.einsum("bik,bjl,bij,bkl->b", gi, gi, h, h), 0.0))
    hs_v = np.sqrt(np.maximum(np.einsum("bij,bkl,bmn,bikm,bjln->b", g, g, gi, vert, vert), 0.0))
    live = np.any(traced != 0, axis=-1)
    dual = np.zeros(len(xf))
    if np.any(live):
        dual[live] = dual_norm(metric, xf[live], tf[live], traced[live])
    sh = lambda a: a.reshape(shape + a.shape[1:])  # noqa: E731
    return FlowTensorPackage(sh(xf), sh(yf), sh(tf), sh(h), sh(hy), sh(hy / F2), sh(hu), sh(traced),
                             sh(vert), sh(hs_h), sh(hs_v), sh(dual), one_sided)


# ---------------------------------------------------------------------------
# J

@dataclass
class JTerms:
    hessian_term: np.ndarray  # h^{ij} f_{j|i}
    divergence_term: np.ndarray  # h^{ij}_{|i} f_j
    vertical_term: np.ndarray  # F^{-1} h^{ij}_{;k} f^k_{|i} f_j
    distortion_term: np.ndarray  # h^{ij} f_i tau_{|j}

    @property
    def total(self) -> np.ndarray:
        return self.hessian_term + self.divergence_term + self.vertical_term - self.distortion_term


def j_terms(metric, measure, x, t, V, df, d2f, derivative_step: float = 1e-3, stencil: int = 4) -> JTerms:
    """Local formula for J at points with reference direction V = grad f != 0."""
    x = np.asarray(x, float)
    V = np.asarray(V, float)
    if np.any(np.all(V == 0, axis=-1)):
        raise DomainError("J needs df != 0 (node off the smooth-point mask)")
    n = x.shape[0]
    tt = np.broadcast_to(np.asarray(t, float), (n,))
    if metric.static:
        z = np.zeros(n)
        return JTerms(z, z.copy(), z.copy(), z.copy())
    hess = hessian_from_derivatives(metric, x, tt, V, df, d2f)
    _, gi, _, F2 = geometry.fundamental_tensor(metric, x, V, tt)
    hu = flow_tensor_upper(metric, x, V, tt, NESTED_TIME_STEP, richardson=True)
    conn = geometry.eval_connection(metric, x, V, tt)[1:]
    hor_u, vert_u = geometry.chern_derivatives(metric, _nested_upper(metric), x, V, tt, ("upper", "upper"),
                                               derivative_step, stencil, connection=conn)
    tau_ev = lambda xx, yy, s: geometry.distortion(metric, measure, xx, yy, s)  # noqa: E731
    tau_h, _ = geometry.chern_derivatives(metric, tau_ev, x, V, tt, (), derivative_step, stencil,
                                          connection=conn)
    H = hess.hessian  # f_{j|i} symmetric
    t1 = np.einsum("bij,bji->b", hu, H)
    t2 = np.einsum("biji,bj->b", hor_u, df)
    raised = np.einsum("bkl,bli->bki", gi, H)  # f^k_{|i}
    t3 = np.einsum("bijk,bki,bj->b", vert_u, raised, df) / np.sqrt(F2)
    t4 = np.einsum("bij,bi,bj->b", hu, df, tau_h)
    return JTerms(t1, t2, t3, t4)


def j_quantity(metric, measure, f: ScalarField, node: tuple[int, int], t: float) -> float:
    """J at one grid node from finite-difference derivatives of ``f``."""
    i, j = node
    if not f.mask[i, j]:
        raise DomainError(f"node {node} is off the smooth-point mask")
    grad = gradient_field(metric, f, t)
    d2 = second_derivatives(f.values, f.grid)
    x = f.grid.points().reshape(f.grid.shape + (2,))
    terms = j_terms(metric, measure, x[i, j][None], t, grad.vector[i, j][None], grad.covector[i, j][None],
                    d2[i, j][None])
    return float(terms.total[0])


def j_field(metric, measure, f: ScalarField, t: float, grad: Optional[GradientData] = None,
            mask: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """J (local formula) on the grid; zero where excluded.  Returns ``(J, mask)``."""
    if grad is None:
        grad = gradient_field(metric, f, t)
    m = grad.mask if mask is None else (mask & grad.mask)
    out = np.zeros(f.grid.shape)
    if np.any(m):
        x = f.grid.points().reshape(f.grid.shape + (2,))
        d2 = second_derivatives(f.values, f.grid)
        out[m] = j_terms(metric, measure, x[m], t, grad.vector[m], grad.covector[m], d2[m]).total
    return out, m


def j_divergence_field(metric, measure, grad: GradientData, grid: GridSpec, t: float) -> np.ndarray:
    """J in divergence form, div_mu(h^{ij}(grad f) f_i d_j), by grid differences."""
    flux = np.zeros(grid.shape + (2,))
    m = grad.mask
    if np.any(m) and not metric.static:
        x = grid.points().reshape(grid.shape + (2,))
        hu = flow_tensor_upper(metric, x[m], grad.vector[m], t, NESTED_TIME_STEP, richardson=True)
        flux[m] = np.einsum("bij,bi->bj", hu, grad.covector[m])
    return divergence_mu(measure, flux, grid).values


# ---------------------------------------------------------------------------
# heat flow

@dataclass
class FlowTrajectory:
    metric: object
    measure: object
    grid: GridSpec
    times: list
    u: list
    f: list = field(default_factory=list)
    f_t: list = field(default_factory=list)
    grad_f: list = field(default_factory=list)  # grad f vectors
    grad_norm_sq: list = field(default_factory=list)  # F^2(grad f)
    lap_u: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"no stamp at t = {t}")
        return k

    def field(self, k: int, which: str = "f") -> ScalarField:
        return ScalarField(self.grid, self.times[k], getattr(self, which)[k])

    def dump_csv(self, directory) -> list[Path]:
        """One comma-separated table per stamp."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        pts = self.grid.points()
        paths = []
        for k, t in enumerate(self.times):
            p = directory / f"stamp_{k:03d}.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x1", "x2", "u", "f", "F_grad_f", "f_t", "lap_u"])
                cols = [self.u[k], self.f[k], np.sqrt(self.grad_norm_sq[k]), self.f_t[k], self.lap_u[k]]
                for n in range(len(pts)):
                    w.writerow([f"{pts[n, 0]:.17g}", f"{pts[n, 1]:.17g}"]
                               + [f"{c.ravel()[n]:.17g}" for c in cols])
            paths.append(p)
        return paths


def spectral_bound(metric, grid: GridSpec, times: Sequence[float], directions: int = 16) -> float:
    """sup of the largest eigenvalue of g^{-1} over nodes x directions x times."""
    x = grid.points()
    ang = 2 * np.pi * np.arange(directions) / directions
    u = np.stack([np.cos(ang), np.sin(ang)], -1)
    X = np.repeat(x, directions, axis=0)
    Y = np.tile(u, (len(x), 1))
    worst = 0.0
    for t in times:
        _, gi, _, _ = geometry.fundamental_tensor(metric, X, Y, t)
        worst = max(worst, float(np.max(np.linalg.eigvalsh(gi))))
    return worst


def _post(metric, measure, grid, t, u, V_u, config):
    f = ScalarField(grid, t, np.log(u))
    lap_f, grad = finsler_laplacian(metric, measure, f, t, config,
                                    initial=V_u / u[..., None] if V_u is not None else None,
                                    return_gradient=True)
    F2 = grad.norm**2
    return f.values, lap_f.values + F2, grad.vector, F2


def run_heat_flow(metric, measure, u0: ScalarField, times: Sequence[float], c_cfl: float = 0.2,
                  config: LegendreSolveConfig = LegendreSolveConfig(initial_guess="warm"),
                  max_steps: int = 2_000_000, start_time: float = 0.0) -> FlowTrajectory:
    """Classical RK4 for u_t = Delta_{g(t)} u from ``start_time``, landing exactly on each stamp."""
    grid = u0.grid
    times = [float(t) for t in times]
    if not times or any(b <= a for a, b in zip(times, times[1:])) or times[0] <= start_time:
        raise ConfigurationError("flow", "stamps must be increasing and later than the start time")
    if np.any(u0.values <= 0):
        raise IntegrationError("initial data must be positive")
    h2 = min(grid.spacing) ** 2
    traj = FlowTrajectory(metric, measure, grid, times, [])
    u = u0.values.copy()
    t = start_time
    V = None

    def rhs(tt, uu, warm):
        lap, grad = finsler_laplacian(metric, measure, ScalarField(grid, tt, uu, u0.mask_tol), tt, config,
                                      initial=warm, return_gradient=True)
        return lap.values, grad.vector

    for stamp in times:
        lam = spectral_bound(metric, grid, (t, 0.5 * (t + stamp), stamp))
        if not math.isfinite(lam) or lam <= 0:
            raise ConfigurationError("flow", "CFL bound unresolvable: spectral bound not finite")
        dt_max = c_cfl * h2 / lam
        n = max(1, math.ceil((stamp - t) / dt_max - 1e-9))
        if n > max_steps:
            raise ConfigurationError("flow", f"CFL bound needs {n} steps (> {max_steps})")
        dt = (stamp - t) / n
        for k in range(n):
            tk = t + k * dt
            k1, V = rhs(tk, u, V)
            k2, _ = rhs(tk + dt / 2, u + dt / 2 * k1, V)
            k3, _ = rhs(tk + dt / 2, u + dt / 2 * k2, V)
            k4, _ = rhs(tk + dt, u + dt * k3, V)
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if np.min(u) <= 0:
                raise IntegrationError(f"positivity lost before stamp t = {stamp}")
        t = stamp
        lap_u, V = rhs(t, u, V)
        f, ft, Vf, F2 = _post(metric, measure, grid, t, u, V, config)
        traj.u.append(u.copy())
        traj.lap_u.append(lap_u)
        traj.f.append(f)
        traj.f_t.append(ft)
        traj.grad_f.append(Vf)
        traj.grad_norm_sq.append(F2)
        traj.mass.append(integrate(ScalarField(grid, t, u), measure))
        traj.steps.append(n)
    return traj


# ---------------------------------------------------------------------------

@dataclass
class SigmaFFields:
    alpha: float
    t: float
    sigma: np.ndarray
    F: np.ndarray


def sigma_f_fields(traj: FlowTrajectory, alpha: float, stamp: int) -> SigmaFFields:
    """sigma = t f_t and script-F = t F^2(grad f) - alpha sigma."""
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    t = traj.times[stamp]
    sigma = t * traj.f_t[stamp]
    return SigmaFFields(alpha, t, sigma, t * traj.grad_norm_sq[stamp] - alpha * sigma)
