"""Scenario orchestration: constants, identity checks, heat flow, estimate sweeps, report."""

from __future__ import annotations

import time
from dataclasses import asdict
from contextlib import contextmanager
from typing import Iterable, Optional

import numpy as np

from . import estimates, identities
from .config import ScenarioConfig
from .estimates import EstimateConfig
from .flow import FlowTrajectory, run_heat_flow
from .grid import build_grid, integrate
from .report import RunReport, check_output_dir, emit_report

PHASES = ("constants", "identities", "flow", "gradient", "harnack")
TRAJECTORY_OFFSET = 0.01  # stamp spacing of the trajectory-identity ladder at the base resolution


class _Run:
    def __init__(self, cfg: ScenarioConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.metric = cfg.build_metric()
        self.measure = cfg.build_measure(self.metric)
        self.grid = cfg.build_grid()
        self.report = RunReport(cfg.name, seed, cfg.to_dict())
        self.constants: Optional[estimates.HypothesisConstants] = None
        self.trajectory: Optional[FlowTrajectory] = None
        e = cfg.estimate
        self.estimate_config = EstimateConfig(e.alpha, e.eps, e.N, e.check_times, cfg.harnack.curve_samples,
                                              cfg.harnack.pairs, cfg.harnack.gap)

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        except Exception as exc:  # recorded as a partial-run failure, never swallowed silently
            self.report.failures.append({"phase": name, "type": type(exc).__name__, "message": str(exc)})
        finally:
            self.report.timings[name] = time.perf_counter() - start

    # ---- phases ---------------------------------------------------------

    def need_constants(self):
        if self.constants is None:
            e = self.cfg.estimate
            cgrid = build_grid((e.resolution, e.resolution), self.cfg.grid.period)
            self.constants = estimates.estimate_constants(self.metric, self.measure, cgrid, e.times,
                                                          e.directions, e.N)
        return self.constants

    def need_trajectory(self):
        if self.trajectory is None:
            start = time.perf_counter()
            u0 = self.grid.sample(self.cfg.initial_function())
            self.trajectory = run_heat_flow(self.metric, self.measure, u0, self.cfg.flow.stamps, self.cfg.flow.cfl)
            self.initial_mass = integrate(u0, self.measure)
            self.report.timings["heat_flow_integration"] = time.perf_counter() - start
        return self.trajectory

    def constants_phase(self):
        c = self.need_constants()
        e = self.cfg.estimate
        q = estimates.compute_q(c, e.alpha, e.eps, e.N)
        q_sharp = estimates.compute_q(c, e.alpha, e.eps, e.N, sharp=True)
        self.report.sections["constants"] = asdict(c)
        self.report.sections["Q"] = {"stated": q, "sharp_L1_coefficient": q_sharp, "alpha": e.alpha,
                                     "eps": e.eps, "N": e.N}

    def identity_phase(self, refinements: Optional[int]):
        cfg, ident = self.cfg, self.cfg.identities
        reports: list = []
        metric, measure = self.metric, self.measure
        period = np.asarray(cfg.grid.period)
        probes = self.rng.uniform(0.0, 1.0, (ident.probes, 2)) * period
        f = cfg.scripted("scripted_field")
        t = ident.probe_time
        ladder = cfg.ladder(refinements)
        for check in ident.checks:
            if check == "tensors":
                reports += identities.tensor_identity_suite(metric, measure, self.rng, ident.tensor_samples,
                                                            (0.0, cfg.metric.T))
            elif check == "bochner":
                reports.append(identities.bochner_convergence(metric, measure, cfg.scripted("bochner_field"),
                                                              ladder, ident.bochner_time, ident.kappa,
                                                              ident.radius, primary=1))
            elif check == "gradient_norm_rate":
                reports.append(identities.step_ladder(
                    lambda s: identities.check_lemma31(metric, f, t, probes, s)))
            elif check == "exchange":
                reports += list(identities.step_ladder(
                    lambda s: identities.check_exchange(metric, measure, f, t, probes, s)))
            elif check == "j_by_parts":
                reports.append(identities.lemma33_convergence(metric, measure, f, cfg.scripted("test_function"),
                                                              t, cfg.grid.resolution))
            elif check == "shrink_reduction":
                if metric.static:
                    self.report.omitted.append("shrink_reduction (static family)")
                    continue
                reports.append(identities.check_shrink_reduction(metric, measure, f, t, probes))
            elif check == "trajectory":
                ts = ident.trajectory_stamp
                stamps = [ts - TRAJECTORY_OFFSET, ts, ts + TRAJECTORY_OFFSET]
                reports += list(identities.trajectory_ladder(metric, measure, cfg.initial_function(), stamps, 1,
                                                             ladder, cfg.estimate.alpha, ident.kappa,
                                                             ident.radius, primary=1))
            elif check == "hessian_trace":
                reports.append(self._hessian_trace())
        summaries = [r.summary() for r in reports]
        for s in summaries:
            self.report.verdicts[f"identity:{s['tag']}"] = s["verdict"] == "PASS"
        self.report.sections["identities"] = summaries

    def _hessian_trace(self):
        traj = self.need_trajectory()
        ident = self.cfg.identities
        reps = [identities.check_hessian_trace_inequality(traj, k, self.cfg.estimate.N, ident.kappa, ident.radius)
                for k in range(len(traj.times))]
        residuals = np.concatenate([np.asarray(r.residuals) for r in reps])
        slack = min(r.params["min_slack"] for r in reps)
        return identities.ResidualReport("hessian_trace", f"{len(reps)} stamps", residuals, 1.0,
                                         reps[0].tolerance, {"N": self.cfg.estimate.N, "min_slack": slack,
                                                             "per_stamp": [r.params["min_slack"] for r in reps]})

    def flow_phase(self):
        traj = self.need_trajectory()
        mass = [self.initial_mass] + list(traj.mass)
        drift = max(abs(m - mass[0]) for m in mass) / abs(mass[0])
        self.report.sections["heat_flow"] = {
            "stamps": list(traj.times), "steps": list(traj.steps), "mass_drift": drift,
            "min_u": [float(np.min(u)) for u in traj.u], "max_u": [float(np.max(u)) for u in traj.u]}

    def gradient_phase(self):
        c = self.need_constants()
        traj = self.need_trajectory()
        ec = self.estimate_config
        rep = estimates.gradient_estimate_check(traj, c, ec)
        sec = rep.summary()
        sec.update({"labels": rep.labels, "lhs": rep.lhs, "rhs": rep.rhs, "margins": rep.margins})
        sec.pop("constants")
        eps_min, q_min = estimates.minimize_q_over_eps(c, ec.alpha, ec.N, upper=ec.eps)
        alt = estimates.gradient_estimate_check(traj, c, ec, Q=q_min)
        sec["eps_minimizer"] = {"eps": eps_min, "Q": q_min, "verdict": "PASS" if alt.passed else "FAIL"}
        self.report.verdicts["gradient_estimate"] = rep.passed
        self.report.verdicts["gradient_estimate_eps_stable"] = alt.passed == rep.passed
        if self.metric.static:
            cmp = estimates.static_reduction_compare(traj, c, ec)
            sec["static_reduction"] = cmp
            self.report.verdicts["static_reduction"] = cmp["agree"]
        self.report.sections["gradient_estimate"] = sec

    def harnack_phase(self):
        c = self.need_constants()
        traj = self.need_trajectory()
        ec = self.estimate_config
        pairs = estimates.random_pairs(traj, ec, self.rng)
        rep = estimates.harnack_check(traj, c, ec, pairs)
        sec = rep.summary()
        sec.pop("constants")
        sec.update({"labels": rep.labels, "lhs": rep.lhs, "rhs": rep.rhs, "margins": rep.margins})
        self.report.verdicts["harnack"] = rep.passed
        if self.cfg.harnack.constant_case:
            const = estimates.constant_case_check(self.metric, self.measure, self.grid, c, ec, traj.times)
            sec["constant_case"] = {"pairs": len(const.margins), "min_margin": const.min_margin,
                                    "verdict": "PASS" if const.passed else "FAIL"}
            self.report.verdicts["harnack_constant_case"] = const.passed
        self.report.sections["harnack"] = sec


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None, phases: Iterable[str] = PHASES,
                 refinements: Optional[int] = None, out_dir=None, tables: bool = True) -> RunReport:
    """Run the requested phases in pipeline order and, if ``out_dir`` is given, emit the report."""
    if out_dir is not None:
        check_output_dir(out_dir)
    run = _Run(cfg, cfg.seed if seed is None else int(seed))
    wanted = set(phases)
    unknown = wanted - set(PHASES)
    if unknown:
        raise ValueError(f"unknown phase(s): {sorted(unknown)}")
    if not cfg.estimate.enabled:
        for p in ("constants", "gradient", "harnack"):
            if p in wanted:
                wanted.discard(p)
                run.report.omitted.append(f"{p} (estimate section disabled)")
    if not cfg.harnack.enabled and "harnack" in wanted:
        wanted.discard("harnack")
        run.report.omitted.append("harnack (section disabled)")
    if "identities" in wanted and (not cfg.identities.enabled or not cfg.identities.checks):
        wanted.discard("identities")
        run.report.omitted.append("identities (no checks enabled)")
    steps = [("constants", run.constants_phase), ("identities", lambda: run.identity_phase(refinements)),
             ("flow", run.flow_phase), ("gradient", run.gradient_phase), ("harnack", run.harnack_phase)]
    for name, fn in steps:
        if name in wanted:
            with run.phase(name):
                fn()
    run.report.trajectory = run.trajectory
    if out_dir is not None:
        emit_report(run.report, out_dir, tables)
    return run.report
