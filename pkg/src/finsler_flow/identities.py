"""Residual checks for the Bochner formula, the flow evolution identities and the Hessian-trace inequality.

Each check returns a :class:`ResidualReport`.  Residuals are normalized by the
largest participating term; convergence orders come from running a check on a
ladder of steps (time steps for the scripted identities, grid resolutions for
quadrature and trajectory checks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import geometry
from .flow import (FlowTrajectory, divergence_mu, flow_tensor, flow_tensor_upper, j_field, j_terms,
                   linearized_laplacian, run_heat_flow, NESTED_TIME_STEP)
from .grid import GridSpec, ScalarField, build_grid, gradient_covector, integrate, smooth_region
from .legendre import gradient_field, hessian_field, legendre_transform
from .pointwise import ScriptedField, divergence_pointwise, linearized_laplacian_pointwise, pointwise_gradient

SCALE_FLOOR = 1e-14


@dataclass
class ResidualReport:
    tag: str
    samples: str
    residuals: np.ndarray
    scale: float
    tolerance: float
    params: dict = field(default_factory=dict)
    levels: list = field(default_factory=list)  # [(parameter, relative residual)]
    order_required: Optional[float] = None
    flags: list = field(default_factory=list)
    skipped: int = 0

    @property
    def sup_residual(self) -> float:
        r = np.asarray(self.residuals, float)
        return float(np.max(np.abs(r))) if r.size else 0.0

    @property
    def relative(self) -> float:
        return self.sup_residual / max(self.scale, SCALE_FLOOR)

    @property
    def orders(self) -> list:
        out = []
        for (p0, r0), (p1, r1) in zip(self.levels, self.levels[1:]):
            if r0 > 0 and r1 > 0:
                out.append(math.log(r0 / r1) / math.log(p0 / p1))
            else:
                out.append(math.inf)
        return out

    @property
    def order(self) -> Optional[float]:
        """Smallest pairwise order; reported only with at least three levels."""
        if len(self.levels) < 3:
            return None
        return min(self.orders)

    @property
    def passed(self) -> bool:
        if "unreliable" in self.flags:
            return False
        ok = self.relative <= self.tolerance
        if self.order_required is not None:
            ok = ok and self.order is not None and self.order >= self.order_required
        return bool(ok)

    def summary(self) -> dict:
        return {"tag": self.tag, "samples": self.samples, "count": int(np.size(self.residuals)),
                "sup_residual": self.sup_residual, "scale": self.scale, "relative": self.relative,
                "tolerance": self.tolerance, "levels": [list(lv) for lv in self.levels],
                "orders": self.orders, "order": self.order, "order_required": self.order_required,
                "params": self.params, "flags": list(self.flags), "skipped": self.skipped,
                "verdict": "PASS" if self.passed else "FAIL"}


def _scale(*terms) -> float:
    return max([float(np.max(np.abs(t))) if np.size(t) else 0.0 for t in terms] + [0.0])


def with_levels(reports: Sequence[ResidualReport], parameters: Sequence[float], primary: int = -1,
                order_required: Optional[float] = None) -> ResidualReport:
    """Attach a refinement ladder to the report at index ``primary``."""
    base = reports[primary]
    base.levels = [(float(p), r.relative) for p, r in zip(parameters, reports)]
    base.order_required = order_required
    return base


# ---------------------------------------------------------------------------
# Bochner

def _nodes(grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    return grid.points().reshape(grid.shape + (2,))[mask]


def check_bochner(metric, measure, u: ScalarField, t: float = 0.0, kappa: float = 0.0,
                  radius: float = 0.0, tolerance: float = 1e-3) -> ResidualReport:
    """Delta^{grad u} F^2(grad u) = 2 du(grad^{grad u} Delta u) + 2 |Hess u|^2_HS + 2 Ric^inf(grad u)."""
    grid = u.grid
    grad = gradient_field(metric, u, t)
    region = smooth_region(grad.covector, grid, kappa, radius) & grad.mask
    if not np.any(region):
        return ResidualReport("bochner", "empty mask", np.zeros(0), 0.0, tolerance)
    F2 = ScalarField(grid, t, grad.norm**2)
    lhs = linearized_laplacian(metric, measure, grad.vector, F2, t).values[region]
    lap = divergence_mu(measure, grad.vector, grid).values
    dlap = gradient_covector(lap, grid)
    drift = 2 * np.einsum("...i,...i->...", grad.vector, dlap)[region]
    hess, _ = hessian_field(metric, u, t, grad, region)
    x = _nodes(grid, region)
    _, _, _, ric_inf = geometry.eval_measure_geometry(metric, measure, x, grad.vector[region], t, N=np.inf)
    rhs = drift + 2 * hess.hs_norm_sq + 2 * ric_inf
    res = lhs - rhs
    return ResidualReport("bochner", f"{int(region.sum())} nodes on {grid.shape}", res,
                          _scale(lhs, drift, 2 * hess.hs_norm_sq, 2 * ric_inf), tolerance,
                          {"resolution": list(grid.shape), "t": t, "kappa": kappa, "radius": radius})


def bochner_convergence(metric, measure, script: ScriptedField, resolutions=(32, 64, 128), t: float = 0.0,
                        kappa: float = 0.0, radius: float = 0.0, tolerance: float = 1e-3,
                        order_required: float = 2.0, primary: int = 1) -> ResidualReport:
    reps = [check_bochner(metric, measure, script.on_grid(build_grid((n, n)), t), t, kappa, radius, tolerance)
            for n in resolutions]
    return with_levels(reps, [2 * np.pi / n for n in resolutions], primary, order_required)


# ---------------------------------------------------------------------------
# scripted evolution identities

def _probe(metric, f: ScriptedField, x, t, rel_floor=1e-8):
    d = f.space_time(x, t)
    norm = np.linalg.norm(d["df"], axis=-1)
    keep = norm > rel_floor * max(norm.max(), 1e-300)
    return keep


def _gradient_at(metric, f: ScriptedField, x, t):
    d = f.space_time(x, t)
    return d, legendre_transform(metric, x, t, d["df"])


def check_lemma31(metric, f: ScriptedField, t: float, x, step: float = 1e-4,
                  tolerance: float = 5e-4) -> ResidualReport:
    """d/dt F^2(grad f) = 2 h(grad f) + 2 df_t(grad f) at probe points."""
    x = np.asarray(x, float)
    keep = _probe(metric, f, x, t)
    xs = x[keep]
    d, V = _gradient_at(metric, f, xs, t)

    def F2(s):
        _, W = _gradient_at(metric, f, xs, s)
        return metric.norm(xs, W, s) ** 2

    lhs = (F2(t + step) - F2(t - step)) / (2 * step)
    h = flow_tensor(metric, xs, V, t)
    hV = np.einsum("bij,bi,bj->b", h, V, V)
    ftV = np.einsum("bi,bi->b", d["dft"], V)
    res = lhs - 2 * hV - 2 * ftV
    return ResidualReport("gradient_norm_rate", f"{len(xs)} probes", res, _scale(lhs, 2 * hV, 2 * ftV), tolerance,
                          {"t": t, "step": step}, skipped=int((~keep).sum()))


def check_exchange(metric, measure, f: ScriptedField, t: float, x, step: float = 1e-4,
                   tolerance: float = 5e-4) -> tuple[ResidualReport, ResidualReport]:
    """(i) grad^{grad f} f_t - d/dt grad f = -2 df(h#);  (ii) Delta^{grad f} f_t - d/dt Delta f = -2 J."""
    x = np.asarray(x, float)
    keep = _probe(metric, f, x, t)
    xs = x[keep]
    d = f.space_time(xs, t)
    gr = pointwise_gradient(metric, xs, t, d["df"], d["d2f"])
    V = gr.vector

    def grad_and_lap(s):
        ds = f.space_time(xs, s)
        g2 = pointwise_gradient(metric, xs, s, ds["df"], ds["d2f"], initial=V)
        return g2.vector, divergence_pointwise(measure, xs, g2.vector, g2.jacobian)

    Vp, Lp = grad_and_lap(t + step)
    Vm, Lm = grad_and_lap(t - step)
    dV = (Vp - Vm) / (2 * step)
    dL = (Lp - Lm) / (2 * step)

    raised_ft = np.einsum("bij,bi->bj", gr.g_inv, d["dft"])
    hu = flow_tensor_upper(metric, xs, V, t)
    sharp = np.einsum("bij,bi->bj", hu, d["df"])
    res_i = np.linalg.norm(raised_ft - dV + 2 * sharp, axis=-1)
    rep_i = ResidualReport("exchange_gradient", f"{len(xs)} probes", res_i,
                           _scale(np.linalg.norm(raised_ft, axis=-1), np.linalg.norm(dV, axis=-1),
                                  2 * np.linalg.norm(sharp, axis=-1)),
                           tolerance, {"t": t, "step": step}, skipped=int((~keep).sum()))

    lap_ft = linearized_laplacian_pointwise(metric, measure, gr, t, d["dft"], d["d2ft"])
    J = j_terms(metric, measure, xs, t, V, d["df"], d["d2f"]).total
    res_ii = lap_ft - dL + 2 * J
    rep_ii = ResidualReport("exchange_laplacian", f"{len(xs)} probes", res_ii, _scale(lap_ft, dL, 2 * J), tolerance,
                            {"t": t, "step": step}, skipped=int((~keep).sum()))
    return rep_i, rep_ii


def step_ladder(check: Callable, steps=(1e-2, 5e-3, 2.5e-3), nominal: float = 1e-4,
                order_required: float = 1.5):
    """Run ``check(step)`` at ``nominal`` and along ``steps``; returns the nominal report(s) with orders."""
    nominal_out = check(nominal)
    ladder = [check(s) for s in steps]
    single = isinstance(nominal_out, ResidualReport)
    nominal_out = [nominal_out] if single else list(nominal_out)
    ladder = [[r] if single else list(r) for r in ladder]
    for k, rep in enumerate(nominal_out):
        rep.levels = [(float(s), lv[k].relative) for s, lv in zip(steps, ladder)]
        rep.order_required = order_required
        rep.params["ladder"] = "time step"
    return nominal_out[0] if single else tuple(nominal_out)


def check_lemma33_quadrature(metric, measure, f: ScriptedField, phi: ScriptedField, grid: GridSpec, t: float,
                             tolerance: float = 5e-4, derivative_step: float = 1e-3,
                             stencil: int = 4) -> ResidualReport:
    """int h^{ij}(grad f) f_i phi_j dmu = -int phi J dmu by grid quadrature."""
    x = grid.points().reshape(grid.shape + (2,))
    d = f.space_time(x, t)
    _, dphi, _ = phi.derivatives(x, t, 2)
    phiv = phi.values(x, t)
    norm = np.linalg.norm(d["df"], axis=-1)
    mask = norm > 1e-12 * norm.max()
    V = np.zeros(grid.shape + (2,))
    V[mask] = legendre_transform(metric, x[mask], t, d["df"][mask])
    integrand = np.zeros(grid.shape)
    Jv = np.zeros(grid.shape)
    flux = np.zeros(grid.shape + (2,))
    if np.any(mask) and not metric.static:
        hu = flow_tensor_upper(metric, x[mask], V[mask], t, NESTED_TIME_STEP, richardson=True)
        flux[mask] = np.einsum("bij,bi->bj", hu, d["df"][mask])
        integrand[mask] = np.einsum("bj,bj->b", flux[mask], dphi[mask])
        Jv[mask] = j_terms(metric, measure, x[mask], t, V[mask], d["df"][mask], d["d2f"][mask],
                           derivative_step, stencil).total
    lhs = integrate(ScalarField(grid, t, integrand), measure)
    rhs = -integrate(ScalarField(grid, t, phiv * Jv), measure)
    correction = integrate(ScalarField(grid, t, divergence_mu(measure, phiv[..., None] * flux, grid).values),
                           measure)
    flags = []
    off = 1.0 - mask.mean()
    if off > 0.05:
        flags.append("unreliable")
    return ResidualReport("j_by_parts", f"quadrature on {grid.shape}", np.array([lhs - rhs]),
                          _scale(lhs, rhs), tolerance,
                          {"t": t, "resolution": list(grid.shape), "derivative_step": derivative_step,
                           "lhs": lhs, "rhs": rhs,
                           "divergence_correction": correction, "off_mask_fraction": off}, flags=flags)


def lemma33_convergence(metric, measure, f, phi, t: float, resolution: int = 64, steps=(0.2, 0.1, 0.05),
                        tolerance=5e-4, order_required=1.5) -> ResidualReport:
    """Nominal quadrature check plus a ladder in the Chern-derivative differencing step.

    Grid quadrature of smooth periodic integrands is spectrally accurate, so the
    step of the derivative stencils inside J is the discretization that refines.
    """
    grid = build_grid((resolution, resolution))
    base = check_lemma33_quadrature(metric, measure, f, phi, grid, t, tolerance)
    ladder = [check_lemma33_quadrature(metric, measure, f, phi, grid, t, tolerance, s) for s in steps]
    base.levels = [(float(s), r.relative) for s, r in zip(steps, ladder)]
    base.order_required = order_required
    base.params["ladder"] = "derivative step"
    return base


# ---------------------------------------------------------------------------
# trajectory identities

def _time_derivative(traj: FlowTrajectory, k: int, values: Sequence[np.ndarray]):
    ts = traj.times
    if 0 < k < len(ts) - 1:
        t0, t1, t2 = ts[k - 1], ts[k], ts[k + 1]
        a, b = t1 - t0, t2 - t1
        d = (-b / (a * (a + b))) * values[k - 1] + ((b - a) / (a * b)) * values[k] + (a / (b * (a + b))) * values[k + 1]
        return d, None
    if len(ts) < 2:
        raise ValueError("time differencing needs at least two stamps")
    if k == 0:
        return (values[1] - values[0]) / (ts[1] - ts[0]), "one-sided"
    return (values[k] - values[k - 1]) / (ts[k] - ts[k - 1]), "one-sided"


@dataclass
class TrajectoryContext:
    """Per-stamp derived data shared by the trajectory checks."""
    grid: GridSpec
    t: float
    region: np.ndarray
    grad: object
    hess: object
    J: np.ndarray
    h_grad: np.ndarray
    ric_inf: np.ndarray
    S: np.ndarray
    lap_f: np.ndarray


def trajectory_context(traj: FlowTrajectory, k: int, kappa: float = 0.0, radius: float = 0.0) -> TrajectoryContext:
    grid = traj.grid
    t = traj.times[k]
    f = traj.field(k, "f")
    grad = gradient_field(traj.metric, f, t, initial=traj.grad_f[k])
    region = smooth_region(grad.covector, grid, kappa, radius) & grad.mask
    hess, _ = hessian_field(traj.metric, f, t, grad, region)
    x = _nodes(grid, region)
    V = grad.vector[region]
    Jv, _ = j_field(traj.metric, traj.measure, f, t, grad, region)
    h = flow_tensor(traj.metric, x, V, t)
    hV = np.einsum("bij,bi,bj->b", h, V, V)
    _, S, _, ric_inf = geometry.eval_measure_geometry(traj.metric, traj.measure, x, V, t, N=np.inf)
    lap_f = divergence_mu(traj.measure, grad.vector, grid).values
    return TrajectoryContext(grid, t, region, grad, hess, Jv[region], hV, ric_inf, S, lap_f)


def check_log_heat(traj: FlowTrajectory, k: int, kappa: float = 0.0, radius: float = 0.0,
                   tolerance: float = 5e-3, ctx: Optional[TrajectoryContext] = None) -> ResidualReport:
    """f_t = Delta f + F^2(grad f), f_t by differencing stored stamps."""
    ctx = ctx or trajectory_context(traj, k, kappa, radius)
    ft, flag = _time_derivative(traj, k, traj.f)
    lhs = ft[ctx.region]
    lap = ctx.lap_f[ctx.region]
    F2 = ctx.grad.norm[ctx.region] ** 2
    res = lhs - lap - F2
    return ResidualReport("log_heat", f"{int(ctx.region.sum())} nodes on {traj.grid.shape}", res,
                          _scale(lhs, lap, F2), tolerance, {"t": ctx.t, "kappa": kappa, "radius": radius},
                          flags=[flag] if flag else [])


def check_evolution_pdes(traj: FlowTrajectory, alpha: float, k: int, kappa: float = 0.0, radius: float = 0.0,
                         tolerance: float = 5e-3, ctx: Optional[TrajectoryContext] = None
                         ) -> tuple[ResidualReport, ResidualReport]:
    """sigma- and script-F equations in strong form at mask nodes of stamp ``k``."""
    ctx = ctx or trajectory_context(traj, k, kappa, radius)
    grid, t, R = traj.grid, ctx.t, ctx.region
    sig = [traj.times[j] * traj.f_t[j] for j in range(len(traj.times))]
    scr = [traj.times[j] * traj.grad_norm_sq[j] - alpha * sig[j] for j in range(len(traj.times))]
    flags = []
    out = []
    V = ctx.grad.vector
    for tag, series in (("sigma_evolution", sig), ("script_f_evolution", scr)):
        dt_field, flag = _time_derivative(traj, k, series)
        if flag:
            flags = [flag]
        cur = ScalarField(grid, t, series[k])
        lin = linearized_laplacian(traj.metric, traj.measure, V, cur, t).values[R]
        drift = 2 * np.einsum("...i,...i->...", gradient_covector(series[k], grid), V)[R]
        lhs_terms = (dt_field[R], lin, drift, series[k][R] / t)
        lhs = dt_field[R] - lin - drift - series[k][R] / t
        if tag == "sigma_evolution":
            rhs = 2 * t * (ctx.h_grad + ctx.J)
            rterms = (2 * t * ctx.h_grad, 2 * t * ctx.J)
        else:
            rterms = (2 * t * (alpha - 1) * ctx.h_grad, 2 * t * ctx.ric_inf, 2 * t * ctx.hess.hs_norm_sq,
                      2 * t * alpha * ctx.J)
            rhs = -sum(rterms)
        out.append(ResidualReport(tag, f"{int(R.sum())} nodes on {grid.shape}", lhs - rhs,
                                  _scale(*lhs_terms, *rterms), tolerance,
                                  {"t": t, "alpha": alpha, "kappa": kappa, "radius": radius}, flags=list(flags)))
    return out[0], out[1]


def check_hessian_trace_inequality(traj: FlowTrajectory, k: int, N: float, kappa: float = 0.0,
                                   radius: float = 0.0, tolerance: float = 1e-8,
                                   ctx: Optional[TrajectoryContext] = None) -> ResidualReport:
    """Slack |Hess f|^2_HS - (Delta f)^2/N + S^2(grad f)/(N - n) at mask nodes; passes when min >= -tol."""
    n = geometry.N_DIM
    if not N > n:
        raise ValueError("N must exceed n")
    ctx = ctx or trajectory_context(traj, k, kappa, radius)
    lap = ctx.lap_f[ctx.region]
    slack = ctx.hess.hs_norm_sq - lap**2 / N + ctx.S**2 / (N - n)
    rep = ResidualReport("hessian_trace", f"{int(ctx.region.sum())} nodes on {traj.grid.shape}",
                         np.minimum(slack, 0.0), 1.0, tolerance,
                         {"t": ctx.t, "N": N, "min_slack": float(slack.min()) if slack.size else 0.0})
    return rep


def trajectory_ladder(metric, measure, u0: Callable, stamps: Sequence[float], k: int, resolutions=(32, 64, 128),
                      alpha: float = 2.0, kappa: float = 0.0, radius: float = 0.0, tolerance: float = 5e-3,
                      order_required: float = 1.5, primary: int = 1) -> tuple[ResidualReport, ...]:
    """Log-heat, sigma and script-F residuals under simultaneous grid and time refinement.

    ``stamps`` brackets the checked stamp ``k``; the stamp spacing shrinks with
    the grid spacing so that both discretizations refine together.
    """
    rows = []
    params = []
    base = resolutions[primary]
    for n in resolutions:
        grid = build_grid((n, n))
        scale = base / n
        tk = stamps[k]
        st = [tk + (s - tk) * scale for s in stamps]
        traj = run_heat_flow(metric, measure, grid.sample(u0), st)
        ctx = trajectory_context(traj, k, kappa, radius)
        lh = check_log_heat(traj, k, kappa, radius, tolerance, ctx)
        sg, sf = check_evolution_pdes(traj, alpha, k, kappa, radius, tolerance, ctx)
        rows.append((lh, sg, sf))
        params.append(2 * np.pi / n)
    out = []
    for j in range(3):
        out.append(with_levels([r[j] for r in rows], params, primary, order_required))
    return tuple(out)


# ---------------------------------------------------------------------------
# Sphere-bundle tensor identities

def bundle_samples(metric, rng: np.random.Generator, count: int = 200, window=(0.0, 0.5),
                   period=(2 * np.pi, 2 * np.pi)):
    """Uniform base points and times with F-unit directions of uniform Euclidean angle."""
    x = rng.uniform(0.0, 1.0, (count, 2)) * np.asarray(period)
    t = rng.uniform(window[0], window[1], count)
    ang = rng.uniform(0.0, 2 * np.pi, count)
    y = np.stack([np.cos(ang), np.sin(ang)], -1)
    y = y / metric.norm(x, y, t)[:, None]
    return x, y, t


def _relative_gap(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return (a - b).reshape(len(a), -1), _scale(a, b)


def check_homogeneity(metric, measure, x, y, t, factors=(0.5, 2.0, 3.0), tolerance: float = 1e-8) -> ResidualReport:
    """Scaling laws of F, g, G, N, Ric, tau and S under y -> c y."""
    degrees = {"F": 1, "g": 0, "G": 2, "N": 1, "Ric": 2, "tau": 0, "S": 1}

    def evaluate(v):
        g, _, _ = geometry.eval_fundamental(metric, x, v, t)
        G, Nl, _ = geometry.eval_connection(metric, x, v, t)
        _, ric, _ = geometry.eval_curvature(metric, x, v, t)
        tau, S, _, _ = geometry.eval_measure_geometry(metric, measure, x, v, t, N=np.inf, method="spray")
        return {"F": metric.norm(x, v, t), "g": g, "G": G, "N": Nl, "Ric": ric, "tau": tau, "S": S}

    base = evaluate(y)
    worst = {}
    residuals = []
    for c in factors:
        scaled = evaluate(c * y)
        for key, deg in degrees.items():
            expect = c**deg * np.asarray(base[key])
            r = np.abs(np.asarray(scaled[key]) - expect).reshape(len(x), -1).max(axis=1)
            rel = r / max(_scale(expect), 1.0)
            residuals.append(rel)
            worst[key] = max(worst.get(key, 0.0), float(rel.max()))
    return ResidualReport("homogeneity", f"{len(x)} samples x {len(factors)} factors",
                          np.concatenate(residuals), 1.0, tolerance, {"worst": worst, "factors": list(factors)})


def check_cartan_contraction(metric, x, y, t, tolerance: float = 1e-9) -> ResidualReport:
    _, _, C = geometry.eval_fundamental(metric, x, y, t)
    r = np.einsum("bijk,bk->bij", C, y).reshape(len(x), -1)
    sym = max(float(np.max(np.abs(C - np.swapaxes(C, -1, -2)))), float(np.max(np.abs(C - np.swapaxes(C, -3, -2)))))
    return ResidualReport("cartan_contraction", f"{len(x)} samples", np.abs(r).max(axis=1),
                          max(_scale(C), 1.0), tolerance, {"symmetry_defect": sym})


def check_spray_consistency(metric, x, y, t, tolerance: float = 1e-8) -> ResidualReport:
    G, _, gam = geometry.eval_connection(metric, x, y, t)
    half = 0.5 * np.einsum("bijk,bj,bk->bi", gam, y, y)
    return ResidualReport("spray_connection", f"{len(x)} samples", np.abs(G - half).max(axis=1),
                          max(_scale(G), 1.0), tolerance)


def check_metric_compatibility(metric, x, y, t, steps=(4e-2, 2e-2, 1e-2), nominal: float = 1e-3,
                               tolerance: float = 2e-7, order_required: float = 2.0) -> ResidualReport:
    """g_{ij|k} = 0 by finite-difference Chern derivatives, with a step ladder."""
    conn = geometry.eval_connection(metric, x, y, t)[1:]

    def run(step):
        gfun = lambda a, b, s: geometry.fundamental_tensor(metric, a, b, s)[0]  # noqa: E731
        hor, _ = geometry.chern_derivatives(metric, gfun, x, y, t, ("lower", "lower"), step=step,
                                            connection=conn)
        g = geometry.fundamental_tensor(metric, x, y, t)[0]
        return ResidualReport("metric_compatibility", f"{len(x)} samples", np.abs(hor).reshape(len(x), -1).max(1),
                              max(_scale(g), 1.0), tolerance, {"step": step})

    reports = [run(s) for s in steps]
    nominal_report = run(nominal)
    nominal_report.levels = [(float(s), r.relative) for s, r in zip(steps, reports)]
    nominal_report.order_required = order_required
    return nominal_report


def tensor_identity_suite(metric, measure, rng: np.random.Generator, count: int = 200,
                          window=(0.0, 0.5)) -> list[ResidualReport]:
    x, y, t = bundle_samples(metric, rng, count, window)
    return [check_homogeneity(metric, measure, x, y, t),
            check_cartan_contraction(metric, x, y, t),
            check_metric_compatibility(metric, x, y, t),
            check_spray_consistency(metric, x, y, t)]


def check_shrink_reduction(metric, measure, f: ScriptedField, t: float, x,
                           tolerance: float = 1e-6) -> ResidualReport:
    """For F(t) = e^{-lambda t} F_0 the flow tensor is lambda g, which forces J = lambda Delta f."""
    rate = float(metric.shrink_rate)
    if rate == 0.0 or metric.static:
        raise ValueError("shrink reduction needs a shrinking family")
    x = np.asarray(x, float)
    keep = _probe(metric, f, x, t)
    xs = x[keep]
    d = f.space_time(xs, t)
    gr = pointwise_gradient(metric, xs, t, d["df"], d["d2f"])
    lap = divergence_pointwise(measure, xs, gr.vector, gr.jacobian)
    J = j_terms(metric, measure, xs, t, gr.vector, d["df"], d["d2f"]).total
    h = flow_tensor(metric, xs, gr.vector, t)
    h_gap = float(np.max(np.abs(h - rate * gr.g))) if len(xs) else 0.0
    return ResidualReport("shrink_reduction", f"{len(xs)} probes", J - rate * lap, _scale(J, rate * lap),
                          tolerance, {"t": t, "rate": rate, "flow_tensor_gap": h_gap},
                          skipped=int((~keep).sum()))
