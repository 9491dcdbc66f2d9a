"""Hypothesis constants, the Q constant, and margin sweeps for the gradient and Harnack estimates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from . import geometry
from .errors import ConfigurationError, DomainError
from .flow import FlowTrajectory, flow_tensor_suite
from .grid import CurveSpec, GridSpec, curve_length

N_DIM = geometry.N_DIM


@dataclass(frozen=True)
class HypothesisConstants:
    n: int
    N: float
    K: float
    K_prime: float  # sup F^2(grad^y tau)
    L1: float
    L2: float
    L3: float
    K_prime_unsquared: float = 0.0  # sup F(grad^y tau)
    K_raw: float = 0.0  # sup(-Ric^N) before flooring at zero
    census: dict = field(default_factory=dict)

    def forced(self, **kw) -> "HypothesisConstants":
        return replace(self, **kw)


@dataclass(frozen=True)
class EstimateConfig:
    alpha: float = 2.0
    eps: float = 0.05
    N: float = 4.0
    check_times: tuple = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
    curve_samples: int = 65
    pairs: int = 20
    pair_gap: tuple = (0.05, 0.3)

    def __post_init__(self):
        if not self.alpha > 1:
            raise ConfigurationError("estimate", f"alpha must exceed 1 (got {self.alpha})")
        if not self.eps > 0:
            raise ConfigurationError("estimate", f"eps must be positive (got {self.eps})")
        if not self.N > N_DIM:
            raise ConfigurationError("estimate", f"N must exceed n = {N_DIM} (got {self.N})")


def _samples(metric, grid: GridSpec, t: float, directions: int):
    x = grid.points()
    y = geometry.sphere_sample(metric, x, t, directions)
    X = np.repeat(x, directions, axis=0)
    return X, y.reshape(-1, 2)


def estimate_constants(metric, measure, grid: GridSpec, times: Sequence[float], directions: int = 16,
                       N: float = 4.0) -> HypothesisConstants:
    """Suprema of the hypothesis quantities over grid nodes x unit directions x times."""
    if directions < 16:
        raise DomainError("directions per node must be at least 16")
    if not N > N_DIM:
        raise DomainError(f"N must exceed {N_DIM}")
    K = Kp = Kp1 = L1 = L2 = L3 = -math.inf
    for t in times:
        X, Y = _samples(metric, grid, t, directions)
        _, _, _, ricN = geometry.eval_measure_geometry(metric, measure, X, Y, t, N=N)
        K = max(K, float(np.max(-ricN)))
        tau_ev = lambda xx, yy, s: geometry.distortion(metric, measure, xx, yy, s)  # noqa: E731
        tau_h, _ = geometry.chern_derivatives(metric, tau_ev, X, Y, t, ())
        _, gi, _, _ = geometry.fundamental_tensor(metric, X, Y, t)
        W = np.einsum("bij,bj->bi", gi, tau_h)
        FW = np.where(np.any(W != 0, axis=-1), metric.norm(X, W, t), 0.0)
        Kp = max(Kp, float(np.max(FW**2)))
        Kp1 = max(Kp1, float(np.max(FW)))
        pkg = flow_tensor_suite(metric, X, Y, t)
        eig = np.linalg.eigvals(np.einsum("bij,bjk->bik", gi, pkg.h))
        L1 = max(L1, float(np.max(np.abs(eig))))
        L2 = max(L2, float(np.max(pkg.dual_traced)))
        L3 = max(L3, float(np.max(pkg.hs_vertical)))
    census = {"points": grid.size, "directions": directions, "times": len(times),
              "resolution": list(grid.shape)}
    return HypothesisConstants(N_DIM, N, max(K, 0.0), Kp, L1, L2, L3, Kp1, K, census)


def l1_coefficient(N: float, n: int = N_DIM, sharp: bool = False) -> float:
    if sharp:
        return 1.0 + math.sqrt(2 * n * (N - n + 4) / N)
    return 1.0 + math.sqrt(2 * (N - n + 4))


def compute_q(constants: HypothesisConstants, alpha: float, eps: float, N: Optional[float] = None,
              sharp: bool = False) -> float:
    """Q from the constants; ``sharp`` swaps in the smaller L1 coefficient."""
    N = constants.N if N is None else N
    n = constants.n
    if not alpha > 1 or not eps > 0 or not N > n:
        raise DomainError("need alpha > 1, eps > 0, N > n")
    return ((constants.K - eps) / (alpha - 1)
            + constants.K_prime / (2 * (alpha - 1) * (N - n))
            + l1_coefficient(N, n, sharp) * constants.L1
            + math.sqrt(2 / (eps * N)) * constants.L2
            + math.sqrt(8 / N) * constants.L3)


def minimize_q_over_eps(constants: HypothesisConstants, alpha: float, N: Optional[float] = None,
                        upper: float = 0.05, grid=None) -> tuple[float, float]:
    """Minimizer of Q over a log grid of eps in [1e-4, max(K, upper)].

    The ceiling keeps K - eps from running off to minus infinity when L2 = 0.
    """
    if grid is None:
        top = max(constants.K, upper, 1e-4)
        grid = np.logspace(-4, np.log10(top), 81)
    grid = np.asarray(grid, float)
    qs = [compute_q(constants, alpha, float(e), N) for e in grid]
    k = int(np.argmin(qs))
    return float(grid[k]), float(qs[k])


def gradient_bound(t, alpha: float, N: float, Q: float):
    """Right side N alpha^2 / t + (N alpha^2 / 2) Q."""
    return N * alpha**2 / np.asarray(t, float) + 0.5 * N * alpha**2 * Q


@dataclass
class MarginReport:
    tag: str
    lhs: list
    rhs: list
    margins: list
    labels: list
    constants: HypothesisConstants
    Q: float
    config: dict
    tolerance_factor: float = 1e-6

    @property
    def min_index(self) -> int:
        return int(np.argmin(self.margins)) if self.margins else -1

    @property
    def min_margin(self) -> float:
        return float(min(self.margins)) if self.margins else math.inf

    @property
    def tolerance(self) -> float:
        if not self.margins:
            return 0.0
        return self.tolerance_factor * abs(float(self.rhs[self.min_index]))

    @property
    def passed(self) -> bool:
        return self.min_margin >= -self.tolerance

    def summary(self) -> dict:
        k = self.min_index
        return {"tag": self.tag, "count": len(self.margins), "min_margin": self.min_margin,
                "location": self.labels[k] if k >= 0 else None,
                "lhs_at_min": float(self.lhs[k]) if k >= 0 else None,
                "rhs_at_min": float(self.rhs[k]) if k >= 0 else None,
                "tolerance": self.tolerance, "Q": self.Q, "constants": asdict(self.constants),
                "config": self.config, "verdict": "PASS" if self.passed else "FAIL"}


def _config_echo(config: EstimateConfig) -> dict:
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _stamps_in(traj: FlowTrajectory, times: Sequence[float]) -> list[int]:
    out = []
    for t in times:
        try:
            out.append(traj.index(t))
        except KeyError:
            continue
    return out


def gradient_estimate_check(traj: FlowTrajectory, constants: HypothesisConstants, config: EstimateConfig,
                            Q: Optional[float] = None) -> MarginReport:
    """F^2(grad f) - alpha f_t <= N alpha^2 / t + (N alpha^2 / 2) Q at every node and stamp."""
    Q = compute_q(constants, config.alpha, config.eps, config.N) if Q is None else Q
    lhs, rhs, margins, labels = [], [], [], []
    for k in _stamps_in(traj, config.check_times):
        t = traj.times[k]
        L = traj.grad_norm_sq[k] - config.alpha * traj.f_t[k]
        R = float(gradient_bound(t, config.alpha, config.N, Q))
        m = R - L
        j = np.unravel_index(int(np.argmin(m)), m.shape)
        lhs.append(float(L[j]))
        rhs.append(R)
        margins.append(float(m[j]))
        labels.append({"t": t, "node": [int(j[0]), int(j[1])]})
    return MarginReport("gradient_estimate", lhs, rhs, margins, labels, constants, Q, _config_echo(config))


def periodic_interpolate(values: np.ndarray, grid: GridSpec, x) -> np.ndarray:
    """Periodic cubic-spline interpolation of node values at chart points ``(..., 2)``."""
    x = np.asarray(x, float)
    flat = x.reshape(-1, 2)
    coords = np.stack([flat[:, a] / grid.spacing[a] for a in range(2)])
    out = map_coordinates(np.asarray(values, float), coords, order=3, mode="grid-wrap")
    return out.reshape(x.shape[:-1])


def harnack_margin(traj: FlowTrajectory, Q: float, config: EstimateConfig, x1, t1: float, x2, t2: float,
                   metric=None) -> tuple[float, float, float]:
    """``(margin, log u(x1, t1), log RHS)`` for one space-time pair."""
    if not t1 < t2:
        raise DomainError("need t1 < t2")
    metric = traj.metric if metric is None else metric
    k1, k2 = traj.index(t1), traj.index(t2)
    u1 = float(periodic_interpolate(traj.u[k1], traj.grid, np.asarray(x1, float)))
    u2 = float(periodic_interpolate(traj.u[k2], traj.grid, np.asarray(x2, float)))
    N, a = config.N, config.alpha
    same = np.array_equal(np.asarray(x1, float), np.asarray(x2, float))
    energy = 0.0
    if not same:
        curve = CurveSpec(tuple(map(float, x2)), tuple(map(float, x1)), config.curve_samples, times=(t1, t2))
        energy = curve_length(curve, metric, power=2)
    log_rhs = (math.log(u2) + N * a * math.log(t2 / t1) + (a / 4) * energy / (t2 - t1)
               + 0.5 * N * a * Q * (t2 - t1))
    log_lhs = math.log(u1)
    return log_rhs - log_lhs, log_lhs, log_rhs


def random_pairs(traj: FlowTrajectory, config: EstimateConfig, rng: np.random.Generator) -> list:
    """Seeded (x1, t1, x2, t2) with t1 < t2 both stamps and t2 - t1 within ``pair_gap``."""
    ts = np.asarray(traj.times)
    lo, hi = config.pair_gap
    options = [(i, j) for i in range(len(ts)) for j in range(len(ts))
               if lo - 1e-12 <= ts[j] - ts[i] <= hi + 1e-12]
    if not options:
        raise ConfigurationError("harnack", "no stamp pairs with the requested time gap")
    period = traj.grid.period
    pairs = []
    for _ in range(config.pairs):
        i, j = options[int(rng.integers(len(options)))]
        x1 = rng.uniform(0, period[0]), rng.uniform(0, period[1])
        x2 = rng.uniform(0, period[0]), rng.uniform(0, period[1])
        pairs.append((x1, float(ts[i]), x2, float(ts[j])))
    return pairs


def harnack_check(traj: FlowTrajectory, constants: HypothesisConstants, config: EstimateConfig,
                  pairs: Sequence, Q: Optional[float] = None) -> MarginReport:
    Q = compute_q(constants, config.alpha, config.eps, config.N) if Q is None else Q
    lhs, rhs, margins, labels = [], [], [], []
    for x1, t1, x2, t2 in pairs:
        m, ll, lr = harnack_margin(traj, Q, config, x1, t1, x2, t2)
        lhs.append(ll)
        rhs.append(lr)
        margins.append(m)
        labels.append({"x1": [float(v) for v in x1], "t1": t1, "x2": [float(v) for v in x2], "t2": t2})
    rep = MarginReport("harnack", lhs, rhs, margins, labels, constants, Q, _config_echo(config))
    return rep


def static_reduction_compare(traj: FlowTrajectory, constants: HypothesisConstants,
                             config: EstimateConfig) -> dict:
    """Margins with L1 = L2 = L3 forced to zero against the estimated constants."""
    if not traj.metric.static:
        raise DomainError("static reduction needs a time-independent family")
    forced = constants.forced(L1=0.0, L2=0.0, L3=0.0)
    a = gradient_estimate_check(traj, constants, config)
    b = gradient_estimate_check(traj, forced, config)
    diff = max((abs(x - y) for x, y in zip(a.margins, b.margins)), default=0.0)
    return {"estimated_L": [constants.L1, constants.L2, constants.L3], "max_margin_difference": diff,
            "verdicts": ["PASS" if a.passed else "FAIL", "PASS" if b.passed else "FAIL"],
            "agree": bool(diff <= 1e-9 and a.passed == b.passed)}


def constant_trajectory(metric, measure, grid: GridSpec, times: Sequence[float], value: float = 1.0
                        ) -> FlowTrajectory:
    """Exact trajectory of the constant solution u = value, for the x1 = x2 Harnack case."""
    if not value > 0:
        raise DomainError("constant solution must be positive")
    times = [float(t) for t in times]
    zeros = np.zeros(grid.shape)
    traj = FlowTrajectory(metric, measure, grid, times, [np.full(grid.shape, value) for _ in times])
    traj.f = [np.full(grid.shape, math.log(value)) for _ in times]
    traj.f_t = [zeros.copy() for _ in times]
    traj.grad_f = [np.zeros(grid.shape + (2,)) for _ in times]
    traj.grad_norm_sq = [zeros.copy() for _ in times]
    traj.lap_u = [zeros.copy() for _ in times]
    traj.steps = [0 for _ in times]
    return traj


def constant_case_check(metric, measure, grid: GridSpec, constants: HypothesisConstants, config: EstimateConfig,
                        times: Sequence[float], point=(1.0, 2.0)) -> MarginReport:
    """Harnack at x1 = x2 on the constant solution over every ordered stamp pair; no tolerance."""
    traj = constant_trajectory(metric, measure, grid, times)
    pairs = [(point, t1, point, t2) for i, t1 in enumerate(traj.times) for t2 in traj.times[i + 1:]]
    rep = harnack_check(traj, constants, config, pairs)
    rep.tag = "harnack_constant"
    rep.tolerance_factor = 0.0
    return rep
