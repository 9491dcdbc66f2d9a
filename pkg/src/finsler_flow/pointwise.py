"""Exact pointwise operators for closed-form fields.

A :class:`ScriptedField` wraps ``f(x1, x2, t)`` written with the elementary
functions of :mod:`finsler_flow.jets`; spatial derivatives come from jets, so
operators built here carry no spatial discretization error.  The only
approximation left is the Newton tolerance of the Legendre map and, for flow
tensors, time differencing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import jets as J
from .legendre import legendre_transform


@dataclass(frozen=True)
class ScriptedField:
    fn: Callable
    name: str = "scripted"

    def __call__(self, x1, x2, t=0.0):
        return self.fn(x1, x2, t)

    def values(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(x[..., 0], x[..., 1], t), float), x.shape[:-1]).copy()

    def derivatives(self, x, t=0.0, degree: int = 2):
        """``(value, df, d2f[, d3f])`` at points ``(..., 2)``; d2f[..., i, j] = d_i d_j f."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        x1, x2 = J.variables([x[..., 0].ravel(), x[..., 1].ravel()], degree)
        tt = np.broadcast_to(np.asarray(t, float), shape).ravel()
        F = self.fn(x1, x2, tt)
        if not isinstance(F, J.Jet):
            F = J.Jet.constant(2, degree, np.broadcast_to(np.asarray(F, float), x1.shape))
        out = [F.value.reshape(shape)]
        out.append(np.stack([F.partial(i) for i in range(2)], -1).reshape(shape + (2,)))
        if degree >= 2:
            out.append(np.stack([np.stack([F.partial(i, j) for j in range(2)], -1) for i in range(2)],
                                -2).reshape(shape + (2, 2)))
        if degree >= 3:
            d3 = np.empty(shape + (2, 2, 2))
            for i in range(2):
                for j in range(2):
                    for k in range(2):
                        d3[..., i, j, k] = F.partial(i, j, k).reshape(shape)
            out.append(d3)
        return tuple(out)

    def space_time(self, x, t) -> dict:
        """Exact f, df, d2f and their time derivatives from jets in (x1, x2, t)."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        tt = np.broadcast_to(np.asarray(t, float), shape).ravel()
        x1, x2, s = J.variables([x[..., 0].ravel(), x[..., 1].ravel(), tt], 3)
        F = self.fn(x1, x2, s)
        if not isinstance(F, J.Jet):
            F = J.Jet.constant(3, 3, np.broadcast_to(np.asarray(F, float), tt.shape))

        def grad(*extra):
            return np.stack([F.partial(i, *extra) for i in range(2)], -1).reshape(shape + (2,))

        def hess(*extra):
            return np.stack([np.stack([F.partial(i, j, *extra) for j in range(2)], -1)
                             for i in range(2)], -2).reshape(shape + (2, 2))

        return {"f": F.value.reshape(shape), "df": grad(), "d2f": hess(),
                "ft": F.partial(2).reshape(shape), "dft": grad(2), "d2ft": hess(2)}

    def on_grid(self, grid, t=0.0):
        from .grid import ScalarField
        return ScalarField(grid, t, self.values(grid.points(), t).reshape(grid.shape))


def metric_jets(metric, x, y, t):
    """``(g, g_inv, dg, dg_inv)`` with first partials along the last axis (x1, x2, y1, y2)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1], np.shape(t))
    xf = np.broadcast_to(x, shape + (2,)).reshape(-1, 2)
    yf = np.broadcast_to(y, shape + (2,)).reshape(-1, 2)
    tf = np.broadcast_to(np.asarray(t, float), shape).ravel()
    x1, x2, y1, y2 = J.variables([xf[:, 0], xf[:, 1], yf[:, 0], yf[:, 1]], 3)
    E = metric.F2(x1, x2, y1, y2, tf)
    g = [[0.5 * E.deriv(2 + i).deriv(2 + j) for j in range(2)] for i in range(2)]
    det = g[0][0] * g[1][1] - g[0][1] * g[1][0]
    idet = det.reciprocal()
    gi = [[g[1][1] * idet, -1.0 * g[0][1] * idet], [-1.0 * g[1][0] * idet, g[0][0] * idet]]

    def pack(T):
        val = np.empty(shape + (2, 2))
        der = np.empty(shape + (2, 2, 4))
        for i in range(2):
            for j in range(2):
                val[..., i, j] = T[i][j].value.reshape(shape)
                for a in range(4):
                    der[..., i, j, a] = T[i][j].partial(a).reshape(shape)
        return val, der

    gv, dg = pack(g)
    giv, dgi = pack(gi)
    return gv, giv, dg, dgi


def time_derivative(fn: Callable, t, step: float = 1e-5, richardson: bool = False, one_sided: bool = False):
    """Central (or forward, when ``one_sided``) difference of ``fn`` in t."""
    def central(s):
        if one_sided:
            return (-3 * np.asarray(fn(t)) + 4 * np.asarray(fn(t + s)) - np.asarray(fn(t + 2 * s))) / (2 * s)
        return (np.asarray(fn(t + s)) - np.asarray(fn(t - s))) / (2 * s)

    d = central(step)
    if richardson:
        d = (4 * central(step / 2) - d) / 3
    return d


@dataclass
class PointwiseGradient:
    x: np.ndarray
    covector: np.ndarray
    vector: np.ndarray
    jacobian: np.ndarray  # [..., m, k] = d_k V^m
    g: np.ndarray
    g_inv: np.ndarray


def pointwise_gradient(metric, x, t, df, d2f, initial=None) -> PointwiseGradient:
    """Legendre gradient with its exact spatial Jacobian.

    Differentiating g(x, V) V = df in x gives
    d_k V = g^{-1} (d_k df - d_{x^k}(g(x, y) y)|_{y=V}).
    """
    V = legendre_transform(metric, x, t, df, initial=initial)
    g, gi, dg, _ = metric_jets(metric, x, V, t)
    # d_{x^k}(g_lm y^m) at fixed y
    dP = np.einsum("...lmk,...m->...lk", dg[..., :2], V)
    rhs = d2f - dP
    jac = np.einsum("...ml,...lk->...mk", gi, rhs)
    return PointwiseGradient(np.asarray(x, float), np.asarray(df, float), V, jac, g, gi)


def divergence_pointwise(measure, x, Z, dZ) -> np.ndarray:
    """div_mu Z = d_j Z^j + Z^j Phi_j given the exact Jacobian dZ[..., j, k] = d_k Z^j."""
    return np.trace(dZ, axis1=-2, axis2=-1) + np.einsum("...j,...j->...", Z, measure.gradient(x))


def contracted_field(tensor, dtensor, grad: PointwiseGradient, w, dw):
    """Z^j = T^{ij}(x, V(x)) w_i and its Jacobian, chaining through V(x)."""
    Z = np.einsum("...ij,...i->...j", tensor, w)
    # total x-derivative of T along V(x)
    dT = dtensor[..., :2] + np.einsum("...ijm,...mk->...ijk", dtensor[..., 2:], grad.jacobian)
    dZ = np.einsum("...ijk,...i->...jk", dT, w) + np.einsum("...ij,...ik->...jk", tensor, dw)
    return Z, dZ


def linearized_laplacian_pointwise(metric, measure, grad: PointwiseGradient, t, w, dw) -> np.ndarray:
    """Delta^{V} v = div_mu(g^{ij}(V) v_i d_j) from dv = w and d2v = dw, frozen at V = grad f."""
    _, gi, _, dgi = metric_jets(metric, grad.x, grad.vector, t)
    Z, dZ = contracted_field(gi, dgi, grad, w, dw)
    return divergence_pointwise(measure, grad.x, Z, dZ)


def laplacian_pointwise(metric, measure, x, t, df, d2f, initial=None) -> np.ndarray:
    """Nonlinear Finsler Laplacian div_mu(grad f) evaluated exactly at points."""
    gr = pointwise_gradient(metric, x, t, df, d2f, initial)
    return divergence_pointwise(measure, gr.x, gr.vector, gr.jacobian)
