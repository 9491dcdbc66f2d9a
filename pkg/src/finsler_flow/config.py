"""Scenario configuration: YAML parsing, validation and the closed-form registries."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import jets as J
from . import metrics
from .errors import ConfigurationError
from .grid import MIN_CURVE_SAMPLES, MIN_RESOLUTION, GridSpec, build_grid
from .pointwise import ScriptedField

TWO_PI = 2 * math.pi
IDENTITY_CHECKS = ("tensors", "bochner", "gradient_norm_rate", "exchange", "j_by_parts", "shrink_reduction",
                   "trajectory", "hessian_trace")
BUNDLED = ("flat-static", "randers-static", "randers-shrink", "conformal")


# closed forms usable from a config, all written with jet-aware elementary functions
def _evolving_mix(x1, x2, t):
    return (J.sin(x1) + 0.3 * J.sin(x2)) * J.exp(-0.5 * t) + 0.2 * t * J.cos(x1 + 2.0 * x2)


def _diagonal_sine(x1, x2, t):
    return J.sin(x1 + x2)


def _two_mode(x1, x2, t):
    return 2.0 + J.cos(x1) + 0.5 * J.cos(x2)


SCRIPTED = {
    "evolving-mix": ScriptedField(_evolving_mix, "evolving-mix"),
    "diagonal-sine": ScriptedField(_diagonal_sine, "diagonal-sine"),
    "two-mode": ScriptedField(_two_mode, "two-mode"),
}


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigurationError(name, "section must be a mapping")
    return sec


def _pair(value, section: str, key: str) -> tuple[float, float]:
    if isinstance(value, (int, float)):
        return (float(value), float(value))
    try:
        a, b = value
        return (float(a), float(b))
    except (TypeError, ValueError):
        raise ConfigurationError(section, f"{key} must be a number or a pair") from None


def _floats(value, section: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in value)
    except TypeError:
        raise ConfigurationError(section, f"{key} must be a list of numbers") from None


@dataclass(frozen=True)
class GridSection:
    resolution: int = 64
    period: tuple[float, float] = (TWO_PI, TWO_PI)  # radians


@dataclass(frozen=True)
class MetricSection:
    kind: str = "euclidean"
    amplitude: float = 0.0
    mode: tuple[float, float] = (1.0, 0.0)
    b_const: tuple[float, float] = (0.0, 0.0)
    b_sine: tuple[float, float] = (0.0, 0.0)
    shrink_rate: float = 0.0
    T: float = 0.5  # flow seconds


@dataclass(frozen=True)
class MeasureSection:
    kind: str = "zero"
    amplitude: float = 0.0
    mode: tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class InitialSection:
    kind: str = "cosine"
    mean: float = 2.0
    a1: float = 1.0
    a2: float = 0.0


@dataclass(frozen=True)
class FlowSection:
    stamps: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    cfl: float = 0.2


@dataclass(frozen=True)
class EstimateSection:
    enabled: bool = True
    alpha: float = 2.0
    eps: float = 0.05
    N: float = 4.0
    check_times: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    directions: int = 16
    resolution: int = 16
    times: tuple[float, ...] = (0.0, 0.25, 0.5)


@dataclass(frozen=True)
class HarnackSection:
    enabled: bool = True
    pairs: int = 20
    gap: tuple[float, float] = (0.05, 0.3)
    curve_samples: int = 65
    constant_case: bool = True


@dataclass(frozen=True)
class IdentitySection:
    enabled: bool = True
    checks: tuple[str, ...] = ("tensors", "hessian_trace")
    tensor_samples: int = 200
    probes: int = 40
    probe_time: float = 0.3
    scripted_field: str = "evolving-mix"
    test_function: str = "diagonal-sine"
    bochner_field: str = "two-mode"
    bochner_time: float = 0.0
    refinements: int = 2
    trajectory_stamp: float = 0.1
    kappa: float = 0.0
    radius: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    grid: GridSection = GridSection()
    metric: MetricSection = MetricSection()
    measure: MeasureSection = MeasureSection()
    initial: InitialSection = InitialSection()
    flow: FlowSection = FlowSection()
    estimate: EstimateSection = EstimateSection()
    harnack: HarnackSection = HarnackSection()
    identities: IdentitySection = IdentitySection()
    output: str = "runs/scenario"
    source: Optional[str] = field(default=None, compare=False)

    # ---- builders -------------------------------------------------------

    def build_grid(self) -> GridSpec:
        r = self.grid.resolution
        return build_grid((r, r), self.grid.period)

    def build_metric(self) -> metrics.MetricFamily:
        m = self.metric
        if m.kind == "euclidean":
            base = metrics.euclidean()
        elif m.kind == "riemannian-conformal":
            base = metrics.riemannian_conformal(m.amplitude, m.mode)
        elif m.kind == "randers":
            base = metrics.randers(m.b_const, m.b_sine, m.amplitude, m.mode)
        else:
            raise ConfigurationError("metric", f"unknown kind {m.kind!r}")
        return metrics.shrinking(base, m.shrink_rate) if m.shrink_rate else base

    def build_measure(self, metric=None) -> metrics.MeasureSpec:
        s = self.measure
        if s.kind == "zero":
            return metrics.zero_measure()
        if s.kind == "cosine-bump":
            return metrics.cosine_bump(s.amplitude, s.mode)
        if s.kind == "conformal-volume":
            return metrics.conformal_volume(metric or self.build_metric())
        raise ConfigurationError("measure", f"unknown kind {s.kind!r}")

    def initial_function(self) -> Callable:
        s = self.initial
        if s.kind == "constant":
            return lambda x1, x2: s.mean + 0.0 * x1
        return lambda x1, x2: s.mean + s.a1 * np.cos(x1) + s.a2 * np.cos(x2)

    def scripted(self, key: str) -> ScriptedField:
        return SCRIPTED[getattr(self.identities, key)]

    def ladder(self, refinements: Optional[int] = None) -> tuple[int, ...]:
        """Resolution ladder: one coarser level, the base, then ``refinements - 1`` finer ones."""
        k = self.identities.refinements if refinements is None else refinements
        r = self.grid.resolution
        return tuple([r // 2] + [r * 2**j for j in range(k)])

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, tuple):
                return [conv(a) for a in v]
            if hasattr(v, "__dataclass_fields__"):
                return {k: conv(getattr(v, k)) for k in v.__dataclass_fields__}
            return v

        d = conv(self)
        d.pop("source", None)
        return d


def _build(section_cls, raw: dict, name: str, converters: dict):
    allowed = section_cls.__dataclass_fields__
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigurationError(name, f"unknown field(s): {', '.join(unknown)}")
    kw = {}
    for key, value in raw.items():
        conv = converters.get(key)
        try:
            kw[key] = conv(value) if conv else value
        except ConfigurationError:
            raise
        except (TypeError, ValueError):
            raise ConfigurationError(name, f"bad value for {key}: {value!r}") from None
    return section_cls(**kw)


def parse_config(raw: dict, source: Optional[str] = None) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config", "top level must be a mapping")
    top = {"name", "seed", "grid", "metric", "measure", "initial", "flow", "estimate", "harnack",
           "identities", "output"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigurationError("config", f"unknown section(s): {', '.join(unknown)}")
    pair = lambda sec, key: (lambda v: _pair(v, sec, key))  # noqa: E731
    floats = lambda sec, key: (lambda v: _floats(v, sec, key))  # noqa: E731
    cfg = ScenarioConfig(
        name=str(raw.get("name", "scenario")),
        seed=int(raw.get("seed", 0)),
        grid=_build(GridSection, _section(raw, "grid"), "grid",
                    {"resolution": int, "period": pair("grid", "period")}),
        metric=_build(MetricSection, _section(raw, "metric"), "metric",
                      {"kind": str, "amplitude": float, "mode": pair("metric", "mode"),
                       "b_const": pair("metric", "b_const"), "b_sine": pair("metric", "b_sine"),
                       "shrink_rate": float, "T": float}),
        measure=_build(MeasureSection, _section(raw, "measure"), "measure",
                       {"kind": str, "amplitude": float, "mode": pair("measure", "mode")}),
        initial=_build(InitialSection, _section(raw, "initial"), "initial",
                       {"kind": str, "mean": float, "a1": float, "a2": float}),
        flow=_build(FlowSection, _section(raw, "flow"), "flow",
                    {"stamps": floats("flow", "stamps"), "cfl": float}),
        estimate=_build(EstimateSection, _section(raw, "estimate"), "estimate",
                        {"enabled": bool, "alpha": float, "eps": float, "N": float,
                         "check_times": floats("estimate", "check_times"), "directions": int,
                         "resolution": int, "times": floats("estimate", "times")}),
        harnack=_build(HarnackSection, _section(raw, "harnack"), "harnack",
                       {"enabled": bool, "pairs": int, "gap": pair("harnack", "gap"), "curve_samples": int,
                        "constant_case": bool}),
        identities=_build(IdentitySection, _section(raw, "identities"), "identities",
                          {"enabled": bool, "checks": lambda v: tuple(str(c) for c in v),
                           "tensor_samples": int, "probes": int, "probe_time": float,
                           "scripted_field": str, "test_function": str, "bochner_field": str,
                           "bochner_time": float, "refinements": int, "trajectory_stamp": float,
                           "kappa": float, "radius": float}),
        output=str(raw.get("output", f"runs/{raw.get('name', 'scenario')}")),
        source=source,
    )
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    """Domain checks; raises :class:`ConfigurationError` naming the offending section."""
    if cfg.grid.resolution < MIN_RESOLUTION:
        raise ConfigurationError("grid", f"resolution must be at least {MIN_RESOLUTION}")
    if min(cfg.grid.period) <= 0:
        raise ConfigurationError("grid", "periods must be positive")
    m = cfg.metric
    if m.kind not in ("euclidean", "riemannian-conformal", "randers"):
        raise ConfigurationError("metric", f"unknown kind {m.kind!r}")
    if not m.T > 0:
        raise ConfigurationError("metric", "time window T must be positive")
    if m.shrink_rate < 0:
        raise ConfigurationError("metric", "shrink_rate must be non-negative")
    if cfg.measure.kind not in ("zero", "cosine-bump", "conformal-volume"):
        raise ConfigurationError("measure", f"unknown kind {cfg.measure.kind!r}")
    if cfg.initial.kind not in ("cosine", "constant"):
        raise ConfigurationError("initial", f"unknown kind {cfg.initial.kind!r}")
    st = cfg.flow.stamps
    if not st or any(b <= a for a, b in zip(st, st[1:])) or st[0] <= 0 or st[-1] > m.T + 1e-12:
        raise ConfigurationError("flow", "stamps must increase strictly within (0, T]")
    if not cfg.flow.cfl > 0:
        raise ConfigurationError("flow", "cfl must be positive")
    e = cfg.estimate
    if not e.alpha > 1:
        raise ConfigurationError("estimate", f"alpha must exceed 1 (got {e.alpha})")
    if not e.eps > 0:
        raise ConfigurationError("estimate", f"eps must be positive (got {e.eps})")
    if not e.N > 2:
        raise ConfigurationError("estimate", f"N must exceed 2 (got {e.N})")
    if e.directions < 16:
        raise ConfigurationError("estimate", "directions must be at least 16")
    missing = [t for t in e.check_times if not any(abs(t - s) < 1e-12 for s in st)]
    if missing:
        raise ConfigurationError("estimate", f"check times {missing} are not flow stamps")
    h = cfg.harnack
    if h.curve_samples < MIN_CURVE_SAMPLES:
        raise ConfigurationError("harnack", f"curve_samples must be at least {MIN_CURVE_SAMPLES}")
    if not 0 < h.gap[0] <= h.gap[1]:
        raise ConfigurationError("harnack", "gap must satisfy 0 < low <= high")
    if h.pairs < 0:
        raise ConfigurationError("harnack", "pairs must be non-negative")
    i = cfg.identities
    bad = [c for c in i.checks if c not in IDENTITY_CHECKS]
    if bad:
        raise ConfigurationError("identities", f"unknown check(s): {', '.join(bad)}")
    for key in ("scripted_field", "test_function", "bochner_field"):
        if getattr(i, key) not in SCRIPTED:
            raise ConfigurationError("identities", f"{key} {getattr(i, key)!r} is not a known closed form")
    if i.refinements < 2:
        raise ConfigurationError("identities", "refinements must be at least 2 (three ladder levels)")
    if "trajectory" in i.checks and not any(abs(i.trajectory_stamp - s) < 1e-12 for s in st[1:-1]):
        raise ConfigurationError("identities", "trajectory_stamp must be an interior flow stamp")
    try:
        metric = cfg.build_metric()
        cfg.build_measure(metric)
    except ConfigurationError:
        raise
    except Exception as exc:  # admissibility and domain failures surface as config errors
        raise ConfigurationError("metric", str(exc)) from None
    grid = cfg.build_grid()
    u0 = cfg.initial_function()(*grid.coords())
    if not np.all(u0 > 0):
        raise ConfigurationError("initial", "u0 must be positive on the grid")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigurationError("config", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError("config", f"invalid YAML in {path}: {exc}") from None
    return parse_config(raw, str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ConfigurationError("config", f"no bundled scenario {name!r}")
    return Path(str(resources.files("finsler_flow") / "scenarios" / f"{name}.yaml"))


def load_bundled(name: str) -> ScenarioConfig:
    return load_config(bundled_path(name))


def resolve(spec: str) -> ScenarioConfig:
    """A path to a YAML file, or the name of a bundled scenario."""
    if spec in BUNDLED and not Path(spec).exists():
        return load_bundled(spec)
    return load_config(spec)


def override(cfg: ScenarioConfig, **changes: Any) -> ScenarioConfig:
    """Re-validated copy with top-level or ``section.field`` replacements."""
    raw = copy.deepcopy(cfg.to_dict())
    for key, value in changes.items():
        section, _, name = key.partition("__")
        if name:
            raw.setdefault(section, {})[name] = value
        else:
            raw[section] = value
    return parse_config(raw, cfg.source)
