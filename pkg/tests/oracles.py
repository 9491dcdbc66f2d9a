"""Independent closed-form references, written without the package's jet machinery."""

import numpy as np


def randers_dual(b, xi, scale=1.0):
    """Dual norm and Legendre vector of F = scale * (|y| + b.y), b constant, |b| < 1.

    The dual of a Randers norm is again Randers:
    F* = sqrt(h(xi, xi)) - b.xi / (1 - |b|^2), h = ((1 - |b|^2) I + b b^T) / (1 - |b|^2)^2,
    and the Legendre vector is F* dF*/dxi.  Scaling F by c scales F* by 1/c.
    """
    b = np.asarray(b, float)
    xi = np.asarray(xi, float)
    beta2 = b @ b
    h = ((1 - beta2) * np.eye(2) + np.outer(b, b)) / (1 - beta2) ** 2
    hx = xi @ h
    a = np.sqrt(np.einsum("...i,...i->...", hx, xi))
    Fs = a - xi @ b / (1 - beta2)
    dFs = hx / a[..., None] - b / (1 - beta2)
    Fs = Fs / scale
    dFs = dFs / scale
    return Fs, Fs[..., None] * dFs


def randers_fundamental_fd(F, x, y, h=1e-3):
    """g_ij = 1/2 d^2 F^2 / dy^i dy^j by a fourth-order central stencil on F^2."""
    g = np.zeros((2, 2))
    E = np.eye(2)

    def F2(v):
        return F(x, v) ** 2

    for i in range(2):
        for j in range(2):
            acc = 0.0
            for a, wa in ((-2, 1), (-1, -8), (1, 8), (2, -1)):
                for c, wc in ((-2, 1), (-1, -8), (1, 8), (2, -1)):
                    acc += wa * wc * F2(y + a * h * E[i] + c * h * E[j])
            g[i, j] = 0.5 * acc / (144 * h * h)
    return g


def conformal_christoffel(phi, dphi, x):
    """Christoffel symbols Gamma^i_jk of exp(2 phi) delta in two dimensions."""
    d = np.asarray(dphi(x), float)
    G = np.zeros((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                G[i, j, k] = (i == j) * d[k] + (i == k) * d[j] - (j == k) * d[i]
    return G


def conformal_gaussian_curvature(amplitude, x1):
    """K = -exp(-2 phi) Laplacian(phi) for phi = amplitude cos x1."""
    phi = amplitude * np.cos(x1)
    return -np.exp(-2 * phi) * (-amplitude * np.cos(x1))
