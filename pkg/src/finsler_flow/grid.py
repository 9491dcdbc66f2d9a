"""Periodic chart of the 2-torus: finite differences, quadrature, curve lengths."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import simpson
from scipy.ndimage import distance_transform_edt

from .errors import ConfigurationError

MIN_RESOLUTION = 16
MIN_CURVE_SAMPLES = 32

# Central first-derivative weights for offsets 1..r (antisymmetric stencils).
_D1 = {
    2: (1.0 / 2.0,),
    4: (2.0 / 3.0, -1.0 / 12.0),
    6: (3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0),
}
# Central second-derivative weights: centre, then offsets 1..r.
_D2 = {
    2: (-2.0, 1.0),
    4: (-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0),
    6: (-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0),
}

DEFAULT_STENCIL_ORDER = 6


@dataclass(frozen=True)
class GridSpec:
    resolution: tuple[int, int]
    period: tuple[float, float] = (2 * np.pi, 2 * np.pi)

    @property
    def spacing(self) -> tuple[float, float]:
        return (self.period[0] / self.resolution[0], self.period[1] / self.resolution[1])

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.resolution)

    @property
    def size(self) -> int:
        return self.resolution[0] * self.resolution[1]

    @property
    def cell_volume(self) -> float:
        hx, hy = self.spacing
        return hx * hy

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.arange(n) * h for n, h in zip(self.resolution, self.spacing))

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(x1, x2)`` with axis 0 along x^1 (``ij`` indexing)."""
        a1, a2 = self.axes()
        return tuple(np.meshgrid(a1, a2, indexing="ij"))

    def points(self) -> np.ndarray:
        """Flattened node coordinates, shape ``(size, 2)``."""
        x1, x2 = self.coords()
        return np.stack([x1.ravel(), x2.ravel()], axis=-1)

    def sample(self, fn: Callable, t: float = 0.0) -> "ScalarField":
        x1, x2 = self.coords()
        return ScalarField(self, t, np.asarray(fn(x1, x2), dtype=float) + np.zeros(self.shape))

    def refine(self, factor: int = 2) -> "GridSpec":
        return GridSpec((self.resolution[0] * factor, self.resolution[1] * factor), self.period)


def build_grid(resolution=(64, 64), period=(2 * np.pi, 2 * np.pi)) -> GridSpec:
    resolution = tuple(int(r) for r in resolution)
    period = tuple(float(p) for p in period)
    if len(resolution) != 2 or len(period) != 2:
        raise ConfigurationError("grid", "resolution and period must be pairs")
    if min(resolution) < MIN_RESOLUTION:
        raise ConfigurationError("grid", f"resolution {resolution} below minimum {MIN_RESOLUTION}")
    if min(period) <= 0:
        raise ConfigurationError("grid", "period must be positive")
    return GridSpec(resolution, period)


@dataclass
class ScalarField:
    grid: GridSpec
    time: float
    values: np.ndarray
    mask_tol: Optional[float] = None
    _mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid {self.grid.shape}")

    @property
    def mask(self) -> np.ndarray:
        """Discrete M_f: nodes where the differential is not numerically zero."""
        if self._mask is None:
            self._mask = mask_from_covector(self.values, gradient_covector(self.values, self.grid), self.mask_tol)
        return self._mask

    def with_values(self, values, time=None) -> "ScalarField":
        return ScalarField(self.grid, self.time if time is None else time, values, self.mask_tol)


def _roll_derivative(values: np.ndarray, axis: int, h: float, order: int, stencil: int) -> np.ndarray:
    if order == 1:
        w = _D1[stencil]
        out = np.zeros_like(values)
        for k, c in enumerate(w, start=1):
            out += c * (np.roll(values, -k, axis=axis) - np.roll(values, k, axis=axis))
        return out / h
    if order == 2:
        w = _D2[stencil]
        out = w[0] * values
        for k, c in enumerate(w[1:], start=1):
            out = out + c * (np.roll(values, -k, axis=axis) + np.roll(values, k, axis=axis))
        return out / (h * h)
    raise ValueError("derivative order must be 1 or 2")


def diff(values: np.ndarray, grid: GridSpec, axis: int, order: int = 1,
         stencil: int = DEFAULT_STENCIL_ORDER) -> np.ndarray:
    """Periodic central difference of a raw node array."""
    if axis not in (0, 1):
        raise IndexError(f"axis {axis} out of range for a 2-d chart")
    return _roll_derivative(values, axis, grid.spacing[axis], order, stencil)


def fd_derivative(field_: ScalarField, axis: int, order: int = 1,
                  stencil: int = DEFAULT_STENCIL_ORDER) -> ScalarField:
    return ScalarField(field_.grid, field_.time,
                       diff(field_.values, field_.grid, axis, order, stencil),
                       field_.mask_tol)


def gradient_covector(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Stacked differential ``(n1, n2, 2)``."""
    return np.stack([diff(values, grid, 0), diff(values, grid, 1)], axis=-1)


def mask_from_covector(values: np.ndarray, covector: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
    """Nodes whose discrete differential exceeds ``tol`` (default 1e-10 x sup|values|)."""
    if tol is None:
        tol = 1e-10 * max(float(np.abs(values).max()), 1e-300)
    return np.hypot(covector[..., 0], covector[..., 1]) > tol


def integrate(field_, measure=None) -> float:
    """Rectangle-rule integral against dmu = e^Phi dx."""
    values = field_.values if isinstance(field_, ScalarField) else np.asarray(field_)
    grid = field_.grid if isinstance(field_, ScalarField) else None
    if measure is not None:
        if grid is None:
            raise ValueError("raw arrays need a grid via ScalarField")
        w = measure.density_on(grid)
        if w.shape != values.shape:
            raise ValueError("field and measure live on different grids")
        values = values * w
    if grid is None:
        raise ValueError("integrate needs a ScalarField")
    return float(values.sum() * grid.cell_volume)


@dataclass(frozen=True)
class CurveSpec:
    """Straight chart segment from ``start`` (s=0) to ``end`` (s=1).

    ``times`` = (t1, t2) attaches the flow time xi(s) = (1-s) t2 + s t1 so that
    xi(0) = t2 at the start point and xi(1) = t1 at the end point.
    ``reparam`` is an optional increasing bijection of [0, 1].
    """

    start: tuple[float, float]
    end: tuple[float, float]
    samples: int = 65
    times: Optional[tuple[float, float]] = None
    reparam: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.samples < MIN_CURVE_SAMPLES:
            raise ConfigurationError("harnack", f"curve sample count {self.samples} < {MIN_CURVE_SAMPLES}")

    def parameters(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.samples)

    def position(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        r = s if self.reparam is None else self.reparam(s)
        a, b = np.asarray(self.start, float), np.asarray(self.end, float)
        out = a + r[..., None] * (b - a)
        # endpoints reproduced exactly, no rounding from the affine blend
        out = np.where((r == 0.0)[..., None], a, out)
        out = np.where((r == 1.0)[..., None], b, out)
        return out

    def velocity(self, s: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        a, b = np.asarray(self.start, float), np.asarray(self.end, float)
        if self.reparam is None:
            rate = np.ones_like(s)
        else:
            lo = np.clip(s - eps, 0.0, 1.0)
            hi = np.clip(s + eps, 0.0, 1.0)
            rate = (self.reparam(hi) - self.reparam(lo)) / (hi - lo)
        return rate[..., None] * (b - a)

    def time(self, s: np.ndarray) -> np.ndarray:
        if self.times is None:
            return np.zeros_like(np.asarray(s, dtype=float))
        t1, t2 = self.times
        return (1.0 - s) * t2 + s * t1


def curve_length(curve: CurveSpec, metric, power: int = 1, t: float = 0.0) -> float:
    """Simpson quadrature of F^power(eta'(s)) at time xi(s) (or ``t`` if untimed)."""
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    s = curve.parameters()
    x = curve.position(s)
    v = curve.velocity(s)
    times = curve.time(s) if curve.times is not None else np.full_like(s, t)
    F = metric.norm(x, v, times)
    return float(simpson(F**power, x=s))


def _critical_corners(covector: np.ndarray) -> np.ndarray:
    """Corners of periodic cells in which both components of df change sign."""
    inside = np.ones(covector.shape[:2], dtype=bool)
    for c in range(2):
        w = covector[..., c]
        corners = [w, np.roll(w, -1, 0), np.roll(w, -1, 1), np.roll(np.roll(w, -1, 0), -1, 1)]
        inside &= (np.minimum.reduce(corners) <= 0) & (np.maximum.reduce(corners) >= 0)
    bad = inside.copy()
    for shift in ((1, 0), (0, 1), (1, 1)):
        bad |= np.roll(inside, shift, axis=(0, 1))
    return bad


def smooth_region(covector: np.ndarray, grid: GridSpec, kappa: float = 0.0, radius: float = 0.0,
                  tol: Optional[float] = None) -> np.ndarray:
    """Nodes safely inside M_f.

    A node is dropped when |df| <= kappa * sup|df| (or <= ``tol``).  With a
    positive ``radius`` it is also dropped within chart distance ``radius``
    (periodic) of a dropped node or of a cell that brackets a zero of df.
    """
    norm = np.hypot(covector[..., 0], covector[..., 1])
    top = float(norm.max())
    floor = 1e-10 * top if tol is None else tol
    bad = norm <= max(kappa * top, floor)
    if radius <= 0:
        return ~bad
    bad = bad | _critical_corners(covector)
    if not np.any(bad):
        return ~bad
    n1, n2 = grid.shape
    tiled = np.tile(~bad, (3, 3))
    dist = distance_transform_edt(tiled, sampling=grid.spacing)[n1:2 * n1, n2:2 * n2]
    return dist > radius
