"""Truncated multivariate Taylor arithmetic (forward-mode AD) over numpy batches.

A :class:`Jet` carries the Taylor coefficients of a quantity up to a total
degree in a fixed set of variables; every coefficient is a numpy array, so a
single jet describes a whole batch of expansion points.  A jet of degree 1 in
one variable is a dual number; higher degrees play the role of nested duals
without the exponential blow-up.

Derivatives are read back with :meth:`Jet.deriv` (which returns a jet of one
lower degree) or :meth:`Jet.partial` (numeric value of a mixed partial).
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np


@lru_cache(maxsize=None)
def _space(nvars: int, degree: int) -> "_Space":
    return _Space(nvars, degree)


class _Space:
    """Monomial bookkeeping for ``nvars`` variables up to ``degree``."""

    def __init__(self, nvars: int, degree: int):
        self.nvars = nvars
        self.degree = degree
        monos = []
        for d in range(degree + 1):
            for combo in combinations_with_replacement(range(nvars), d):
                e = [0] * nvars
                for v in combo:
                    e[v] += 1
                monos.append(tuple(e))
        self.monos = monos
        self.index = {m: i for i, m in enumerate(monos)}
        self.size = [sum(1 for m in monos if sum(m) <= d) for d in range(degree + 1)]
        self._mul = {}
        self._diff = {}

    def mul_table(self, d: int):
        """Pairs (i, j) sorted by product slot, with reduceat offsets."""
        if d not in self._mul:
            n = self.size[d]
            trip = []
            for i in range(n):
                mi = self.monos[i]
                for j in range(n):
                    mj = self.monos[j]
                    m = tuple(a + b for a, b in zip(mi, mj))
                    if sum(m) <= d:
                        trip.append((self.index[m], i, j))
            trip.sort()
            k = np.array([t[0] for t in trip])
            i = np.array([t[1] for t in trip])
            j = np.array([t[2] for t in trip])
            starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
            self._mul[d] = (i, j, starts)
        return self._mul[d]

    def diff_table(self, var: int, d: int):
        """Source slots and factors for d/dvar of a degree-d jet."""
        key = (var, d)
        if key not in self._diff:
            src, fac = [], []
            for m in self.monos[: self.size[d - 1]]:
                up = list(m)
                up[var] += 1
                src.append(self.index[tuple(up)])
                fac.append(up[var])
            self._diff[key] = (np.array(src), np.array(fac, dtype=float))
        return self._diff[key]


def _bcast(coef: np.ndarray, shape) -> np.ndarray:
    """Broadcast coefficient array ``(ncoef, *batch)`` to batch ``shape``."""
    shape = tuple(shape)
    pad = len(shape) - (coef.ndim - 1)
    if pad > 0:
        coef = coef.reshape(coef.shape[:1] + (1,) * pad + coef.shape[1:])
    return np.broadcast_to(coef, coef.shape[:1] + shape)


class Jet:
    """Truncated Taylor expansion; ``coef[k]`` multiplies monomial ``k``."""

    __array_priority__ = 1000

    def __init__(self, nvars: int, degree: int, coef: np.ndarray):
        self.nvars = nvars
        self.degree = degree
        self.coef = coef

    # construction ---------------------------------------------------------
    @classmethod
    def variable(cls, nvars: int, degree: int, var: int, value) -> "Jet":
        value = np.asarray(value, dtype=float)
        sp = _space(nvars, degree)
        coef = np.zeros((sp.size[degree],) + value.shape)
        coef[0] = value
        if degree >= 1:
            coef[1 + var] = 1.0
        return cls(nvars, degree, coef)

    @classmethod
    def constant(cls, nvars: int, degree: int, value) -> "Jet":
        value = np.asarray(value, dtype=float)
        sp = _space(nvars, degree)
        coef = np.zeros((sp.size[degree],) + value.shape)
        coef[0] = value
        return cls(nvars, degree, coef)

    @property
    def value(self) -> np.ndarray:
        return self.coef[0]

    @property
    def shape(self):
        return self.coef.shape[1:]

    def truncate(self, degree: int) -> "Jet":
        if degree >= self.degree:
            return self
        sp = _space(self.nvars, self.degree)
        return Jet(self.nvars, degree, self.coef[: sp.size[degree]])

    def deriv(self, var: int) -> "Jet":
        """Jet of the partial derivative in ``var`` (degree drops by one)."""
        if self.degree == 0:
            raise ValueError("cannot differentiate a degree-0 jet")
        sp = _space(self.nvars, self.degree)
        src, fac = sp.diff_table(var, self.degree)
        fac = fac.reshape((-1,) + (1,) * (self.coef.ndim - 1))
        return Jet(self.nvars, self.degree - 1, self.coef[src] * fac)

    def partial(self, *vars_: int) -> np.ndarray:
        """Numeric mixed partial derivative at the expansion point."""
        e = [0] * self.nvars
        for v in vars_:
            e[v] += 1
        if sum(e) > self.degree:
            raise ValueError("requested derivative exceeds jet degree")
        sp = _space(self.nvars, self.degree)
        scale = math.prod(math.factorial(k) for k in e)
        return self.coef[sp.index[tuple(e)]] * scale

    # arithmetic -----------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, Jet):
            if other.nvars != self.nvars:
                raise ValueError("jets over different variable sets")
            d = min(self.degree, other.degree)
            a, b = self.truncate(d), other.truncate(d)
            if a.shape != b.shape:
                shape = np.broadcast_shapes(a.shape, b.shape)
                a = Jet(a.nvars, d, _bcast(a.coef, shape))
                b = Jet(b.nvars, d, _bcast(b.coef, shape))
            return a, b
        return self, None

    def __add__(self, other):
        if isinstance(other, Jet):
            a, b = self._lift(other)
            return Jet(self.nvars, a.degree, a.coef + b.coef)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        coef = np.array(_bcast(self.coef, shape))
        coef[0] = coef[0] + other
        return Jet(self.nvars, self.degree, coef)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.nvars, self.degree, -self.coef)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        a, b = self._lift(other)
        if b is None:
            other = np.asarray(other, dtype=float)
            shape = np.broadcast_shapes(self.shape, other.shape)
            return Jet(self.nvars, self.degree, _bcast(self.coef, shape) * other)
        d = a.degree
        if d == 0:
            return Jet(self.nvars, 0, a.coef * b.coef)
        i, j, starts = _space(self.nvars, d).mul_table(d)
        prod = a.coef[i] * b.coef[j]
        return Jet(self.nvars, d, np.add.reduceat(prod, starts, axis=0))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, int) and p >= 0:
            out = Jet.constant(self.nvars, self.degree, np.ones(self.shape))
            base = self
            while p:
                if p & 1:
                    out = out * base
                base = base * base
                p >>= 1
            return out
        return power(self, float(p))

    def reciprocal(self):
        return power(self, -1.0)

    def _compose(self, coeffs):
        """Evaluate sum_k coeffs[k] * (self - value)^k by Horner's rule."""
        delta = Jet(self.nvars, self.degree, self.coef.copy())
        delta.coef[0] = 0.0
        out = Jet.constant(self.nvars, self.degree, coeffs[self.degree])
        for k in range(self.degree - 1, -1, -1):
            out = out * delta
            out.coef[0] = out.coef[0] + coeffs[k]
        return out

    def __repr__(self):
        return f"Jet(nvars={self.nvars}, degree={self.degree}, shape={self.shape})"


# elementary functions: dispatch on Jet vs plain arrays ----------------------

def _taylor(x: Jet, kind: str, p: float = 0.0) -> Jet:
    u = x.value
    D = x.degree
    c = []
    if kind == "exp":
        e = np.exp(u)
        c = [e / math.factorial(k) for k in range(D + 1)]
    elif kind == "log":
        c = [np.log(u)] + [(-1) ** (k + 1) / (k * u**k) for k in range(1, D + 1)]
    elif kind == "sin":
        c = [np.sin(u + k * np.pi / 2) / math.factorial(k) for k in range(D + 1)]
    elif kind == "cos":
        c = [np.cos(u + k * np.pi / 2) / math.factorial(k) for k in range(D + 1)]
    elif kind == "pow":
        b = 1.0
        for k in range(D + 1):
            c.append(b * u ** (p - k))
            b *= (p - k) / (k + 1)
    return x._compose(c)


def power(x, p: float):
    if isinstance(x, Jet):
        return _taylor(x, "pow", p)
    return np.power(x, p)


def sqrt(x):
    return power(x, 0.5) if isinstance(x, Jet) else np.sqrt(x)


def exp(x):
    return _taylor(x, "exp") if isinstance(x, Jet) else np.exp(x)


def log(x):
    return _taylor(x, "log") if isinstance(x, Jet) else np.log(x)


def sin(x):
    return _taylor(x, "sin") if isinstance(x, Jet) else np.sin(x)


def cos(x):
    return _taylor(x, "cos") if isinstance(x, Jet) else np.cos(x)


def value(x) -> np.ndarray:
    """Plain value of a jet or array."""
    return x.value if isinstance(x, Jet) else np.asarray(x, dtype=float)


def variables(values, degree: int, active=None):
    """Seed jets for a list of coordinate arrays.

    ``active`` selects which entries become jet variables (default: all);
    inactive entries are returned as plain arrays.
    """
    values = [np.asarray(v, dtype=float) for v in values]
    active = list(range(len(values))) if active is None else list(active)
    out = list(values)
    for slot, idx in enumerate(active):
        out[idx] = Jet.variable(len(active), degree, slot, values[idx])
    return out
