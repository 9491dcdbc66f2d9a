"""Closed-form time-dependent Finsler metrics and weighted measures on the torus.

Every family here is of Randers type

    F(x, y; t) = exp(-lam * t) * ( exp(phi(x, t)) * |y| + b(x, t) . y )

which covers the Euclidean norm (phi = 0, b = 0), conformal Riemannian
metrics (b = 0), Randers metrics, and their uniformly shrinking flows.
The coefficient callables take ``(x1, x2, t)`` where the coordinates may be
:class:`~finsler_flow.jets.Jet` objects, so they must only use the elementary
functions of :mod:`finsler_flow.jets`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import jets as J
from .errors import AdmissibilityError, ConfigurationError, DomainError

KINDS = ("euclidean", "riemannian-conformal", "randers", "shrinking-scale", "custom-composite")


def _zero(x1, x2, t):
    return 0.0


@dataclass(frozen=True)
class MetricFamily:
    kind: str
    params: dict = field(default_factory=dict)
    phi: Callable = _zero
    b: Optional[Callable] = None
    shrink_rate: float = 0.0
    smoothness: int = 8
    static: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError("metric", f"unknown metric kind {self.kind!r}")
        if self.smoothness < 4:
            raise ConfigurationError("metric", "smoothness promise must be >= 4")

    def F(self, x1, x2, y1, y2, t):
        """Finsler norm; coordinates may be jets, ``t`` is plain."""
        t = np.asarray(t, dtype=float)
        phi = self.phi(x1, x2, t)
        out = J.exp(phi) * J.sqrt(y1 * y1 + y2 * y2) if not _is_zero(phi) else J.sqrt(y1 * y1 + y2 * y2)
        if self.b is not None:
            b1, b2 = self.b(x1, x2, t)
            out = out + b1 * y1 + b2 * y2
        if self.shrink_rate:
            out = out * np.exp(-self.shrink_rate * t)
        return out

    def F2(self, x1, x2, y1, y2, t):
        f = self.F(x1, x2, y1, y2, t)
        return f * f

    def norm(self, x, y, t=0.0) -> np.ndarray:
        """Plain evaluation on arrays ``x, y`` of shape ``(..., 2)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        return self.F(x[..., 0], x[..., 1], y[..., 0], y[..., 1], t)

    def randers_data(self, x, t=0.0):
        """``(a_scale, b)`` with a = a_scale * delta and one-form b, on arrays."""
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        phi = np.broadcast_to(np.asarray(self.phi(x[..., 0], x[..., 1], t), dtype=float), x.shape[:-1])
        b = np.zeros(x.shape)
        if self.b is not None:
            b1, b2 = self.b(x[..., 0], x[..., 1], t)
            b[..., 0] = b1
            b[..., 1] = b2
        scale = np.exp(-self.shrink_rate * t)
        return np.exp(2 * phi) * scale**2, b * scale[..., None]

    def check_admissible(self, times=(0.0,), resolution: int = 48) -> float:
        """Return sup |b|_a over a sampling grid; raise if it reaches 1."""
        a = np.linspace(0, 2 * np.pi, resolution, endpoint=False)
        X1, X2 = np.meshgrid(a, a, indexing="ij")
        x = np.stack([X1.ravel(), X2.ravel()], axis=-1)
        worst = 0.0
        for t in times:
            a_scale, b = self.randers_data(x, t)
            worst = max(worst, float(np.max(np.linalg.norm(b, axis=-1) / np.sqrt(a_scale))))
        if worst >= 1.0:
            raise AdmissibilityError(f"Randers one-form too large: sup |b|_a = {worst:.6g} >= 1")
        return worst


def _is_zero(v) -> bool:
    return not isinstance(v, J.Jet) and np.all(np.asarray(v) == 0.0)


# ---------------------------------------------------------------------------
# presets

def _conformal(amplitude: float, mode=(1, 0)):
    k1, k2 = mode
    if amplitude == 0.0:
        return _zero

    def phi(x1, x2, t):
        return amplitude * J.cos(k1 * x1 + k2 * x2)

    return phi


def _oneform(const=(0.0, 0.0), sine=(0.0, 0.0)):
    c1, c2 = const
    s1, s2 = sine
    if not any((c1, c2, s1, s2)):
        return None

    def b(x1, x2, t):
        b1 = c1 + s1 * J.sin(x2) if s1 else c1 + 0.0 * x2
        b2 = c2 + s2 * J.sin(x1) if s2 else c2 + 0.0 * x1
        return b1, b2

    return b


def euclidean() -> MetricFamily:
    return MetricFamily("euclidean", {})


def riemannian_conformal(amplitude: float = 0.1, mode=(1, 0)) -> MetricFamily:
    """g = exp(2 phi) delta with phi = amplitude * cos(k . x)."""
    return MetricFamily("riemannian-conformal", {"amplitude": amplitude, "mode": list(mode)},
                        phi=_conformal(amplitude, mode))


def randers(b_const=(0.0, 0.0), b_sine=(0.0, 0.0), conformal_amplitude: float = 0.0,
            conformal_mode=(1, 0)) -> MetricFamily:
    """F = exp(phi)|y| + b(x).y with b = b_const + b_sine * (sin x2, sin x1)."""
    m = MetricFamily("randers", {"b_const": list(b_const), "b_sine": list(b_sine),
                                 "conformal_amplitude": conformal_amplitude,
                                 "conformal_mode": list(conformal_mode)},
                     phi=_conformal(conformal_amplitude, conformal_mode),
                     b=_oneform(b_const, b_sine))
    m.check_admissible()
    return m


def shrinking(base: MetricFamily, rate: float) -> MetricFamily:
    """F(t) = exp(-rate t) F_base; the flow tensor is h = rate * g."""
    params = {"base_kind": base.kind, **base.params, "shrink_rate": rate}
    return MetricFamily("shrinking-scale", params, phi=base.phi, b=base.b,
                        shrink_rate=float(rate), smoothness=base.smoothness, static=(rate == 0.0))


def composite(phi: Callable = _zero, b: Optional[Callable] = None, shrink_rate: float = 0.0,
              static: bool = False, params: Optional[dict] = None, smoothness: int = 8) -> MetricFamily:
    """User-assembled Randers-type family with time-dependent coefficients."""
    m = MetricFamily("custom-composite", params or {}, phi=phi, b=b, shrink_rate=shrink_rate,
                     smoothness=smoothness, static=static and shrink_rate == 0.0)
    m.check_admissible(times=(0.0, 0.5, 1.0))
    return m


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureSpec:
    """dmu = exp(Phi(x)) dx with a time-independent smooth periodic weight."""

    kind: str = "zero"
    params: dict = field(default_factory=dict)
    weight: Callable = None

    def Phi(self, x1, x2):
        if self.weight is None:
            return 0.0 * x1 if isinstance(x1, J.Jet) else np.zeros(np.shape(x1))
        return self.weight(x1, x2)

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.Phi(x[..., 0], x[..., 1]), float), x.shape[:-1])

    def gradient(self, x) -> np.ndarray:
        """Exact dPhi at points ``(..., 2)``."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        x1, x2 = J.variables([x[..., 0].ravel(), x[..., 1].ravel()], 1)
        P = self.Phi(x1, x2)
        if not isinstance(P, J.Jet):
            return np.zeros(shape + (2,))
        return np.stack([P.partial(0), P.partial(1)], axis=-1).reshape(shape + (2,))

    def values_on(self, grid) -> np.ndarray:
        x1, x2 = grid.coords()
        return np.broadcast_to(np.asarray(self.Phi(x1, x2), float), grid.shape)

    def density_on(self, grid) -> np.ndarray:
        return np.exp(self.values_on(grid))


def zero_measure() -> MeasureSpec:
    return MeasureSpec("zero", {})


def cosine_bump(amplitude: float, mode=(0, 1)) -> MeasureSpec:
    """Phi = amplitude * cos(k . x)."""
    k1, k2 = mode

    def weight(x1, x2):
        return amplitude * J.cos(k1 * x1 + k2 * x2)

    return MeasureSpec("cosine-bump", {"amplitude": amplitude, "mode": list(mode)}, weight)


def conformal_volume(metric: MetricFamily, extra: Optional[MeasureSpec] = None) -> MeasureSpec:
    """Riemannian volume of exp(2 phi) delta, i.e. Phi = 2 phi (static phi only)."""
    if metric.b is not None:
        raise DomainError("conformal volume weight needs a Riemannian (b = 0) family")

    def weight(x1, x2):
        w = 2.0 * metric.phi(x1, x2, 0.0)
        if extra is not None:
            w = w + extra.Phi(x1, x2)
        return w

    return MeasureSpec("conformal-volume", {"extra": extra.params if extra else {}}, weight)
