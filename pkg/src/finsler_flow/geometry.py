"""Pointwise Finsler tensor calculus on the sphere bundle.

All operations are vectorised: points ``x`` and directions ``y`` are arrays of
shape ``(..., 2)`` and results carry the same leading shape.  Derivatives of
F^2 in x and y come from truncated Taylor jets (exact up to rounding);
time derivatives and generic Chern derivatives use central differences.

Index conventions
-----------------
``gamma[..., i, j, k]`` is Gamma^i_{jk}; ``curvature[..., i, j, k, l]`` is
R_j^i_{kl} (upper index first) built from

    R_j^i_{kl} = dGamma^i_{jl}/dx^k - dGamma^i_{jk}/dx^l
                 + Gamma^i_{km} Gamma^m_{jl} - Gamma^i_{lm} Gamma^m_{jk}

with horizontal derivatives d/dx^k = partial_k - N^m_k partial_{y^m}.  The
Riemann curvature of the spray is R^i_k = y^j R_j^i_{kl} y^l and the flag
curvature is K(y, u) = g_y(u, R_y u) / (g_y(y,y) g_y(u,u) - g_y(y,u)^2).

Chern derivatives: for a lower slot ``w_{i|k} = dw_i/dx^k - Gamma^m_{ik} w_m``,
for an upper slot ``V^i_{|k} = dV^i/dx^k + Gamma^i_{mk} V^m``; vertical
derivatives carry no connection term, ``T_{;k} = F dT/dy^k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import jets as J
from .errors import AdmissibilityError, DomainError, IntegrationError

N_DIM = 2
CHUNK = 4096
S_STEP = 1e-3  # arclength step for S-curvature differencing


def _flat(x, y, t):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1], np.shape(t))
    xf = np.broadcast_to(x, shape + (2,)).reshape(-1, 2)
    yf = np.broadcast_to(y, shape + (2,)).reshape(-1, 2)
    tf = np.broadcast_to(np.asarray(t, dtype=float), shape).reshape(-1)
    return xf, yf, tf, shape


def _check_nonzero(y):
    if np.any(np.all(y == 0.0, axis=-1)):
        raise DomainError("direction y must be nonzero")


def _arr(T) -> np.ndarray:
    if isinstance(T, J.Jet):
        return T.value
    return np.stack([_arr(t) for t in T], axis=1)


def _chunked(fn, B: int, *arrays, chunk: int = CHUNK):
    """Apply ``fn`` to row-chunks and concatenate each returned field."""
    if B <= chunk:
        return fn(*arrays)
    parts = [fn(*(a[s:s + chunk] for a in arrays)) for s in range(0, B, chunk)]
    return {k: (None if parts[0][k] is None else np.concatenate([p[k] for p in parts]))
            for k in parts[0]}


def _f2(metric, x, y, t, degree, with_x=True):
    if with_x:
        x1, x2, y1, y2 = J.variables([x[:, 0], x[:, 1], y[:, 0], y[:, 1]], degree)
    else:
        y1, y2 = J.variables([y[:, 0], y[:, 1]], degree)
        x1, x2 = x[:, 0], x[:, 1]
    return metric.F2(x1, x2, y1, y2, t), (x1, x2, y1, y2)


def _metric_jets(E, yoff):
    Ey = [E.deriv(yoff + i) for i in range(2)]
    g = [[0.5 * Ey[i].deriv(yoff + j) for j in range(2)] for i in range(2)]
    det = g[0][0] * g[1][1] - g[0][1] * g[1][0]
    idet = det.reciprocal()
    ginv = [[g[1][1] * idet, -1.0 * g[0][1] * idet], [-1.0 * g[1][0] * idet, g[0][0] * idet]]
    return Ey, g, det, ginv


def _spray_jets(E, Ey, ginv, yv):
    Ex = [E.deriv(k) for k in range(2)]
    w = [sum(Ey[l].deriv(k) * yv[k] for k in range(2)) - Ex[l] for l in range(2)]
    return [0.25 * (ginv[i][0] * w[0] + ginv[i][1] * w[1]) for i in range(2)]


def _geometry(metric, measure, x, y, t, degree):
    """Jet pipeline; returns a dict of numeric arrays available at ``degree``."""
    E, (x1, x2, y1, y2) = _f2(metric, x, y, t, degree)
    yv = [y1, y2]
    Ey, g, det, ginv = _metric_jets(E, 2)
    out = {"F2": E.value, "g": _arr(g), "g_inv": _arr(ginv)}
    out.update(dict.fromkeys(("cartan", "spray", "nonlinear", "chern", "curvature",
                              "spray_curvature", "tau", "S_spray", "Sdot_spray"), None))
    G = _spray_jets(E, Ey, ginv, yv)
    out["spray"] = _arr(G)
    tau = None
    if measure is not None:
        tau = 0.5 * J.log(det) - measure.Phi(x1, x2)
        out["tau"] = tau.value
    if degree < 3:
        return out
    out["cartan"] = _arr([[[0.5 * g[i][j].deriv(2 + k) for k in range(2)] for j in range(2)]
                          for i in range(2)])
    N = [[G[i].deriv(2 + j) for j in range(2)] for i in range(2)]
    out["nonlinear"] = _arr(N)
    dg = [[[g[i][j].deriv(k) - N[0][k] * g[i][j].deriv(2) - N[1][k] * g[i][j].deriv(3)
            for j in range(2)] for i in range(2)] for k in range(2)]
    gamma = [[[0.5 * sum(ginv[i][l] * (dg[k][l][j] + dg[j][l][k] - dg[l][j][k]) for l in range(2))
               for k in range(2)] for j in range(2)] for i in range(2)]
    out["chern"] = _arr(gamma)
    if tau is not None:
        S = sum(yv[k] * tau.deriv(k) for k in range(2)) - 2.0 * sum(G[k] * tau.deriv(2 + k) for k in range(2))
        out["S_spray"] = S.value
    if degree < 4:
        return out

    def hd(T, k):
        return T.deriv(k) - N[0][k] * T.deriv(2) - N[1][k] * T.deriv(3)

    dgam = [[[[hd(gamma[i][j][l], k) for l in range(2)] for j in range(2)] for i in range(2)]
            for k in range(2)]
    R = [[[[dgam[k][i][j][l] - dgam[l][i][j][k]
            + sum(gamma[i][k][m] * gamma[m][j][l] - gamma[i][l][m] * gamma[m][j][k] for m in range(2))
            for l in range(2)] for k in range(2)] for j in range(2)] for i in range(2)]
    out["curvature"] = _arr(R)
    Rs = [[2.0 * G[i].deriv(k)
           - sum(yv[j] * G[i].deriv(j).deriv(2 + k) for j in range(2))
           + 2.0 * sum(G[j] * G[i].deriv(2 + j).deriv(2 + k) for j in range(2))
           - sum(N[i][j] * N[j][k] for j in range(2))
           for k in range(2)] for i in range(2)]
    out["spray_curvature"] = _arr(Rs)
    if tau is not None:
        Sdot = sum(yv[k] * S.deriv(k) for k in range(2)) - 2.0 * sum(G[k] * S.deriv(2 + k) for k in range(2))
        out["Sdot_spray"] = Sdot.value
    return out


def _run_geometry(metric, measure, x, y, t, degree):
    xf, yf, tf, shape = _flat(x, y, t)
    _check_nonzero(yf)
    res = _chunked(lambda a, b, c: _geometry(metric, measure, a, b, c, degree), len(xf), xf, yf, tf)
    _check_positive(res["g"])
    return res, shape, xf, yf, tf


def _check_positive(g):
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    if np.any(g[:, 0, 0] <= 0) or np.any(det <= 0):
        raise AdmissibilityError("fundamental tensor not positive definite")


def _shape(a, shape):
    return None if a is None else a.reshape(shape + a.shape[1:])


# ---------------------------------------------------------------------------
# public operations

def eval_fundamental(metric, x, y, t=0.0):
    """Return ``(g, g_inv, cartan)`` at the sphere-bundle point(s)."""
    xf, yf, tf, shape = _flat(x, y, t)
    _check_nonzero(yf)

    def run(a, b, c):
        E, _ = _f2(metric, a, b, c, 3, with_x=False)
        Ey, g, det, ginv = _metric_jets(E, 0)
        C = [[[0.5 * g[i][j].deriv(k) for k in range(2)] for j in range(2)] for i in range(2)]
        return {"g": _arr(g), "g_inv": _arr(ginv), "cartan": _arr(C)}

    res = _chunked(run, len(xf), xf, yf, tf)
    _check_positive(res["g"])
    return tuple(_shape(res[k], shape) for k in ("g", "g_inv", "cartan"))


def fundamental_tensor(metric, x, y, t=0.0):
    """``(g, g_inv, dF2/dy / 2)`` from a cheap degree-2 jet in y only."""
    xf, yf, tf, shape = _flat(x, y, t)
    E, _ = _f2(metric, xf, yf, tf, 2, with_x=False)
    Ey, g, det, ginv = _metric_jets(E, 0)
    half_grad = np.stack([0.5 * Ey[0].value, 0.5 * Ey[1].value], axis=1)
    return (_arr(g).reshape(shape + (2, 2)), _arr(ginv).reshape(shape + (2, 2)),
            half_grad.reshape(shape + (2,)), E.value.reshape(shape))


def eval_connection(metric, x, y, t=0.0):
    """Return ``(spray G^i, nonlinear connection N^i_j, Chern Gamma^i_{jk})``."""
    res, shape, *_ = _run_geometry(metric, None, x, y, t, 3)
    return tuple(_shape(res[k], shape) for k in ("spray", "nonlinear", "chern"))


def spray(metric, x, y, t=0.0) -> np.ndarray:
    xf, yf, tf, shape = _flat(x, y, t)
    E, (x1, x2, y1, y2) = _f2(metric, xf, yf, tf, 2)
    Ey, g, det, ginv = _metric_jets(E, 2)
    return _arr(_spray_jets(E, Ey, ginv, [y1, y2])).reshape(shape + (2,))


def _flag(g, Rik, y, u):
    gy = np.einsum("...ij,...i,...j->...", g, y, y)
    gu = np.einsum("...ij,...i,...j->...", g, u, u)
    gyu = np.einsum("...ij,...i,...j->...", g, y, u)
    den = gy * gu - gyu**2
    num = np.einsum("...ij,...i,...j->...", g, u, np.einsum("...ik,...k->...i", Rik, u))
    return num, den


def _frame_ricci(res, yf, Rik=None):
    """F^2 K(y, e) with e completing y/F to a g_y-orthonormal frame."""
    g = res["g"]
    if Rik is None:
        Rik = np.einsum("bijkl,bj,bl->bik", res["curvature"], yf, yf)
    rot = np.stack([-yf[:, 1], yf[:, 0]], axis=-1)
    F2 = res["F2"]
    proj = np.einsum("bij,bi,bj->b", g, rot, yf) / F2
    e = rot - proj[:, None] * yf
    e = e / np.sqrt(np.einsum("bij,bi,bj->b", g, e, e))[:, None]
    num, den = _flag(g, Rik, yf, e)
    return F2 * num / den


def eval_curvature(metric, x, y, t=0.0, flag_direction=None, spray_oracle: bool = False):
    """Chern curvature tensor, Ricci scalar by frame sum, optional flag curvature.

    Returns ``(R, Ric, K)``; ``K`` is None unless ``flag_direction`` is given.
    With ``spray_oracle=True`` a fourth entry carries Ric = trace R^i_k of the
    spray curvature, computed from G alone.
    """
    res, shape, xf, yf, tf = _run_geometry(metric, None, x, y, t, 4)
    R = res["curvature"]
    g = res["g"]
    Rik = np.einsum("bijkl,bj,bl->bik", R, yf, yf)
    ric = _frame_ricci(res, yf, Rik)
    K = None
    if flag_direction is not None:
        u = np.broadcast_to(np.asarray(flag_direction, dtype=float), shape + (2,)).reshape(-1, 2)
        num, den = _flag(g, Rik, yf, u)
        scale = np.einsum("bij,bi,bj->b", g, yf, yf) * np.einsum("bij,bi,bj->b", g, u, u)
        if np.any(den <= 1e-12 * scale):
            raise DomainError("flag direction is parallel to the pole y")
        K = (num / den).reshape(shape)
    out = (R.reshape(shape + R.shape[1:]), ric.reshape(shape), K)
    if spray_oracle:
        rs = res["spray_curvature"]
        out = out + (np.trace(rs, axis1=1, axis2=2).reshape(shape),)
    return out


def distortion(metric, measure, x, y, t=0.0) -> np.ndarray:
    """tau = 1/2 log det g - Phi."""
    xf, yf, tf, shape = _flat(x, y, t)
    g, *_ = fundamental_tensor(metric, xf, yf, tf)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    return (0.5 * np.log(det) - measure.values(xf)).reshape(shape)


def integrate_geodesic(metric, x, y, t=0.0, step: float = 1e-2, steps: int = 100,
                       drift_tol: float = 1e-4, check: bool = True):
    """Classical RK4 for x' = y, y' = -2 G(x, y) at frozen flow time ``t``.

    Returns ``(xs, ys)`` with shape ``(steps + 1, ..., 2)``.  ``step`` is the
    affine parameter step (arclength when F(x, y) = 1); negative steps run
    the geodesic backwards.
    """
    xf, yf, tf, shape = _flat(x, y, t)
    _check_nonzero(yf)
    xs = [xf]
    ys = [yf]
    X, Y = xf, yf
    for _ in range(int(steps)):
        X, Y = _rk4_step(metric, X, Y, tf, float(step))
        xs.append(X)
        ys.append(Y)
    xs = np.stack(xs)
    ys = np.stack(ys)
    if check and steps:
        F0 = metric.norm(xf, yf, tf)
        F1 = metric.norm(X, Y, tf)
        drift = np.max(np.abs(F1 - F0) / F0)
        if drift > drift_tol:
            raise IntegrationError(f"geodesic F drift {drift:.3g} exceeds {drift_tol:g}; reduce the step")
    return (xs.reshape((len(xs),) + shape + (2,)), ys.reshape((len(ys),) + shape + (2,)))


def s_curvature_geodesic(metric, measure, x, y, t=0.0, arc_step: float = S_STEP):
    """(S, S-dot) by five-point differencing of tau along the geodesic."""
    xf, yf, tf, shape = _flat(x, y, t)
    F = metric.norm(xf, yf, tf)
    h = arc_step / F
    taus = {}
    taus[0] = distortion(metric, measure, xf, yf, tf)
    for sgn in (1.0, -1.0):
        X, Y = xf, yf
        for k in (1, 2):
            X, Y = _rk4_step(metric, X, Y, tf, sgn * h)
            taus[sgn * k] = distortion(metric, measure, X, Y, tf)
    S = (taus[-2.0] - 8 * taus[-1.0] + 8 * taus[1.0] - taus[2.0]) / (12 * h)
    Sdot = (-taus[-2.0] + 16 * taus[-1.0] - 30 * taus[0] + 16 * taus[1.0] - taus[2.0]) / (12 * h * h)
    return S.reshape(shape), Sdot.reshape(shape)


def _rk4_step(metric, X, Y, t, h):
    h = np.asarray(h)[:, None] if np.ndim(h) else h
    k1x, k1y = Y, -2.0 * spray(metric, X, Y, t)
    k2x, k2y = Y + 0.5 * h * k1y, -2.0 * spray(metric, X + 0.5 * h * k1x, Y + 0.5 * h * k1y, t)
    k3x, k3y = Y + 0.5 * h * k2y, -2.0 * spray(metric, X + 0.5 * h * k2x, Y + 0.5 * h * k2y, t)
    k4x, k4y = Y + h * k3y, -2.0 * spray(metric, X + h * k3x, Y + h * k3y, t)
    return (X + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            Y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y))


def weighted_ricci(ric, S, Sdot, N: float, n: int = N_DIM, s_tol: float = 1e-10):
    """Ric^N with the three branches (N = n, n < N < inf, N = inf)."""
    ric, S, Sdot = np.broadcast_arrays(np.asarray(ric, float), np.asarray(S, float), np.asarray(Sdot, float))
    if N < n:
        raise DomainError(f"N = {N} must be >= n = {n}")
    if np.isinf(N):
        return ric + Sdot
    if N == n:
        return np.where(np.abs(S) <= s_tol, ric + Sdot, -np.inf)
    return ric + Sdot - S**2 / (N - n)


def eval_measure_geometry(metric, measure, x, y, t=0.0, N: float = 4.0, method: str = "geodesic"):
    """Return ``(tau, S, S_dot, Ric^N)``.

    ``method='geodesic'`` differences tau along the integrated geodesic;
    ``method='spray'`` uses the exact spray derivative X(tau), X(X(tau)).
    """
    if not N > N_DIM:
        raise DomainError(f"N = {N} must exceed n = {N_DIM}")
    res, shape, xf, yf, tf = _run_geometry(metric, measure, x, y, t, 4)
    ric = _frame_ricci(res, yf)
    if method == "geodesic":
        S, Sdot = s_curvature_geodesic(metric, measure, xf, yf, tf)
    elif method == "spray":
        S, Sdot = res["S_spray"], res["Sdot_spray"]
    else:
        raise ValueError(f"unknown S-curvature method {method!r}")
    ricN = weighted_ricci(ric, S, Sdot, N)
    return tuple(np.asarray(a).reshape(shape) for a in (res["tau"], S, Sdot, ricN))


def sphere_sample(metric, x, t=0.0, count: int = 16) -> np.ndarray:
    """``count`` directions with F(x, y; t) = 1, angularly equispaced."""
    if count < 4:
        raise DomainError("count must be at least 4")
    ang = 2 * np.pi * np.arange(count) / count
    u = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    x = np.asarray(x, dtype=float)
    xb = np.broadcast_to(x[..., None, :], x.shape[:-1] + (count, 2))
    F = metric.norm(xb, np.broadcast_to(u, xb.shape), t)
    y = u / F[..., None]
    # one Newton-free polish: F is 1-homogeneous so a second rescale removes rounding
    return y / metric.norm(xb, y, t)[..., None]


@dataclass(frozen=True)
class SphereBundlePointData:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    F: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    cartan: np.ndarray
    spray: np.ndarray
    nonlinear: np.ndarray
    chern: np.ndarray
    curvature: np.ndarray
    ric: np.ndarray
    tau: np.ndarray
    S: np.ndarray
    S_dot: np.ndarray
    ric_N: np.ndarray
    N: float


def point_data(metric, measure, x, y, t=0.0, N: float = 4.0, method: str = "geodesic") -> SphereBundlePointData:
    """Full cached tensor package at sphere-bundle points."""
    res, shape, xf, yf, tf = _run_geometry(metric, measure, x, y, t, 4)
    R = res["curvature"]
    ric = _frame_ricci(res, yf)
    if method == "geodesic":
        S, Sdot = s_curvature_geodesic(metric, measure, xf, yf, tf)
    else:
        S, Sdot = res["S_spray"], res["Sdot_spray"]
    ricN = weighted_ricci(ric, S, Sdot, N)
    sh = lambda a: np.asarray(a).reshape(shape + np.asarray(a).shape[1:])  # noqa: E731
    return SphereBundlePointData(
        x=sh(xf), y=sh(yf), t=sh(tf), F=sh(np.sqrt(res["F2"])), g=sh(res["g"]), g_inv=sh(res["g_inv"]),
        cartan=sh(res["cartan"]), spray=sh(res["spray"]), nonlinear=sh(res["nonlinear"]),
        chern=sh(res["chern"]), curvature=sh(R), ric=sh(ric), tau=sh(res["tau"]), S=sh(S),
        S_dot=sh(Sdot), ric_N=sh(ricN), N=N)


# ---------------------------------------------------------------------------
# Chern derivatives of tensors given by evaluators

_FD = {2: ((1, 0.5),), 4: ((1, 2.0 / 3.0), (2, -1.0 / 12.0))}


def _central(fn: Callable, base: np.ndarray, direction: np.ndarray, h, stencil: int):
    out = 0.0
    for k, c in _FD[stencil]:
        out = out + c * (fn(base + k * h * direction) - fn(base - k * h * direction))
    return out / h


def chern_derivatives(metric, tensor: Callable, x, y, t=0.0, valence: Sequence[str] = (),
                      step: float = 1e-3, stencil: int = 4, order: int = 2, connection=None):
    """Horizontal and vertical Chern derivatives of a sphere-bundle tensor.

    ``tensor(x, y, t)`` maps flat ``(B, 2)`` arrays to ``(B, 2, ..., 2)`` with one
    axis per entry of ``valence`` ('lower' or 'upper').  ``order`` is the highest
    y-derivative of F^2 the evaluator consumes, checked against the family's
    smoothness promise.  Returns ``(horizontal, vertical)`` with the derivative
    index appended last.
    """
    if max(order + 1, 3) > metric.smoothness:
        raise DomainError(f"derivative order {order + 1} exceeds smoothness promise {metric.smoothness}")
    if stencil not in _FD:
        raise ValueError("stencil must be 2 or 4")
    xf, yf, tf, shape = _flat(x, y, t)
    _check_nonzero(yf)
    if connection is None:
        _, Nl, gam = eval_connection(metric, xf, yf, tf)
    else:
        Nl, gam = connection
    ynorm = np.linalg.norm(yf, axis=-1)[:, None]
    hy = step * ynorm
    dx = []
    dy = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = 1.0
        dx.append(_central(lambda xx: tensor(xx, yf, tf), xf, e, step, stencil))
        dy.append(_central_scaled(tensor, xf, yf, tf, e, hy[:, 0], stencil))
    dx = np.stack(dx, axis=-1)
    dy = np.stack(dy, axis=-1)
    # delta/delta x^k = d/dx^k - N^m_k d/dy^m
    horiz = dx - np.einsum("b...m,bmk->b...k", dy, Nl)
    T = np.asarray(tensor(xf, yf, tf))
    rank = T.ndim - 1
    if len(valence) != rank:
        raise ValueError(f"valence {valence} does not match tensor rank {rank}")
    letters = "pqrs"[:rank]
    for a, kind in enumerate(valence):
        src = letters[:a] + "m" + letters[a + 1:]
        if kind == "lower":
            horiz = horiz - np.einsum(f"bmck,b{src}->b{letters}k".replace("c", letters[a]), gam, T)
        elif kind == "upper":
            horiz = horiz + np.einsum(f"bcmk,b{src}->b{letters}k".replace("c", letters[a]), gam, T)
        else:
            raise ValueError(f"valence entry {kind!r}")
    F = metric.norm(xf, yf, tf)
    vert = dy * F.reshape((-1,) + (1,) * (dy.ndim - 1))
    return horiz.reshape(shape + horiz.shape[1:]), vert.reshape(shape + vert.shape[1:])


def _central_scaled(tensor, xf, yf, tf, e, h, stencil):
    hb = h.reshape(-1, 1)
    out = 0.0
    for k, c in _FD[stencil]:
        out = out + c * (np.asarray(tensor(xf, yf + k * hb * e, tf)) - np.asarray(tensor(xf, yf - k * hb * e, tf)))
    return out / h.reshape((-1,) + (1,) * (np.ndim(out) - 1))
