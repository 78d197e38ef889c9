"""Post-solve audits: feasibility in physical units, cyclic species
conservation, concentration transport lag, flow-direction assumptions and
finite-difference verification of the assembled derivatives.

All audits work on an immutable SolutionTrajectory; feasibility residuals
are re-evaluated with the exact |phi| (no smoothing).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .network import Scenario, SegmentedNetwork
from .solution import SolutionTrajectory
from .transcription import NlpProblem, TimeGrid, assemble_nlp


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    advisory: bool = False
    detail: str = ""


@dataclass
class AuditReport:
    checks: list = field(default_factory=list)

    def add(self, *args, **kwargs):
        self.checks.append(CheckResult(*args, **kwargs))

    def extend(self, other: "AuditReport"):
        self.checks.extend(other.checks)

    @property
    def passed(self) -> bool:
        """Overall verdict; advisory checks warn but do not fail the audit."""
        return all(c.passed or c.advisory for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed and not c.advisory]

    def to_json(self) -> str:
        return json.dumps(
            {"passed": self.passed,
             "checks": [asdict(c) for c in self.checks]},
            indent=2)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            mark = "PASS" if c.passed else ("WARN" if c.advisory else "FAIL")
            line = (f"[{mark}] {c.name}: value={c.value:.6e} "
                    f"tolerance={c.tolerance:.2e}")
            if c.detail:
                line += f" ({c.detail})"
            lines.append(line)
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _rebuild_problem(trajectory: SolutionTrajectory, segnet: SegmentedNetwork,
                     scenario: Scenario) -> NlpProblem:
    grid = TimeGrid(n_points=trajectory.n_steps, dt=scenario.dt)
    problem = assemble_nlp(segnet, scenario, grid, smoothing_eps=0.0)
    if list(problem.index.node_ids) != list(trajectory.node_ids):
        raise ValueError("trajectory nodes do not match the segmented network")
    if list(problem.index.segment_ids) != list(trajectory.segment_ids):
        raise ValueError("trajectory segments do not match the segmented network")
    return problem


def check_feasibility(trajectory: SolutionTrajectory, segnet: SegmentedNetwork,
                      scenario: Scenario, tol: float = 1e-5) -> AuditReport:
    """Re-evaluate all residuals and bounds with the exact |phi|.

    Residuals are dimensionless; bound checks are reported in physical
    units (tolerance interpreted in the same units as the bound).
    """
    problem = _rebuild_problem(trajectory, segnet, scenario)
    x = trajectory.to_variables(problem)
    report = AuditReport()
    c = problem.eq_constraints(x)
    off = problem.row_offset
    for k, fam in enumerate(problem.family_names):
        block = c[off[k]:off[k + 1]]
        worst = float(np.abs(block).max(initial=0.0))
        report.add(f"residual/{fam}", worst <= tol, worst, tol)
    ci = problem.ineq_constraints(x)
    p_tol = tol * problem.scales.p0
    low = float(np.max(problem.ineq_lb - ci, initial=0.0)) * problem.scales.p0
    high = float(np.max(ci - problem.ineq_ub, initial=0.0)) * problem.scales.p0
    report.add("bounds/pressure_lower", low <= p_tol, low, p_tol, detail="Pa")
    report.add("bounds/pressure_upper", high <= p_tol, high, p_tol, detail="Pa")
    bl = float(np.max(problem.lb - x, initial=0.0))
    bu = float(np.max(x - problem.ub, initial=0.0))
    report.add("bounds/variables_lower", bl <= tol, bl, tol)
    report.add("bounds/variables_upper", bu <= tol, bu, tol)
    return report


def conservation_audit(trajectory: SolutionTrajectory, segnet: SegmentedNetwork,
                       scenario: Scenario, tol: float = 1e-6) -> AuditReport:
    """Per-species net injected-minus-withdrawn mass over the cyclic horizon.

    Computed by direct accounting of boundary transfers (no reuse of the
    assembled residuals): over a full cycle the linepack returns to its
    starting value, so the nets must vanish relative to throughput.
    """
    tr = trajectory
    dt_s = tr.dt_hours * 3600.0 if tr.n_steps > 1 else scenario.dt * 3600.0
    node_by_id = {n.id: n for n in segnet.nodes}
    inj = {"H2": 0.0, "NG": 0.0}
    wdr = {"H2": 0.0, "NG": 0.0}
    for k, nid in enumerate(tr.supply_ids):
        eta_s = np.asarray(scenario.supply_fraction(node_by_id[nid], tr.times))
        inj["H2"] += float(np.sum(eta_s * tr.qs[k]) * dt_s)
        inj["NG"] += float(np.sum((1.0 - eta_s) * tr.qs[k]) * dt_s)
    for k, nid in enumerate(tr.withdrawal_ids):
        eta = tr.node_series(nid, "eta")
        wdr["H2"] += float(np.sum(eta * tr.qw[k]) * dt_s)
        wdr["NG"] += float(np.sum((1.0 - eta) * tr.qw[k]) * dt_s)
    report = AuditReport()
    # normalize by total gas throughput so a species with zero design flow
    # is not failed on numerical dust
    throughput = max(inj["H2"] + inj["NG"], wdr["H2"] + wdr["NG"], 1e-300)
    for sp in ("H2", "NG"):
        rel = abs(inj[sp] - wdr[sp]) / throughput
        report.add(f"conservation/{sp}", rel <= tol, rel, tol,
                   detail=f"injected {inj[sp]:.6e} kg, withdrawn {wdr[sp]:.6e} kg")
    return report


def lag_analysis(trajectory: SolutionTrajectory, upstream: str,
                 downstream: str) -> Optional[float]:
    """Transport delay (hours) between two nodal concentration series.

    Uses circular cross-correlation of the mean-removed series; the lag is
    mapped to [-T/2, T/2) and is positive when the downstream series lags.
    Returns None when either series is constant (lag undefined).
    """
    up = trajectory.node_series(upstream, "eta")
    down = trajectory.node_series(downstream, "eta")
    up = up - up.mean()
    down = down - down.mean()
    if np.abs(up).max(initial=0.0) < 1e-12 or np.abs(down).max(initial=0.0) < 1e-12:
        return None
    N = len(up)
    cc = np.array([float(np.dot(np.roll(up, k), down)) for k in range(N)])
    k_best = int(np.argmax(cc))
    dt = trajectory.dt_hours
    lag = k_best * dt
    period = N * dt
    if lag >= period / 2.0:
        lag -= period
    return lag


def flow_direction_audit(trajectory: SolutionTrajectory,
                         tol: float = 1e-9) -> AuditReport:
    """Flag pipe flow reversals; the edge-concentration aliasing used in
    the transcription assumes unidirectional design flow."""
    report = AuditReport()
    reversed_ids = []
    for e, sid in enumerate(trajectory.segment_ids):
        flows = np.concatenate([trajectory.f0[e], trajectory.fL[e]])
        if flows.max(initial=0.0) > tol and flows.min(initial=0.0) < -tol:
            reversed_ids.append(sid)
    report.add("flow_direction/aliasing", not reversed_ids,
               float(len(reversed_ids)), 0.0, advisory=True,
               detail=("flow sign changes on: " + ", ".join(reversed_ids))
               if reversed_ids else "all pipe flows unidirectional")
    return report


def periodicity_check(trajectory: SolutionTrajectory, cycles: int,
                      tol: float = 1e-4, advisory: bool = True) -> AuditReport:
    """Block periodicity: with data repeating ``cycles`` times over the
    horizon, compare the solution at t and t + T/cycles."""
    report = AuditReport()
    N = trajectory.n_steps
    if cycles < 2 or N % cycles != 0:
        report.add("periodicity/block", True, 0.0, tol, advisory=True,
                   detail="not applicable")
        return report
    shift = N // cycles
    worst = 0.0
    for name in ("p", "eta", "f0", "fL", "qw", "gE", "qs", "fc", "alpha"):
        a = getattr(trajectory, name)
        if a.size == 0:
            continue
        b = np.roll(a, -shift, axis=1)
        scale = max(1.0, float(np.abs(a).max(initial=0.0)))
        worst = max(worst, float(np.abs(a - b).max(initial=0.0)) / scale)
    report.add("periodicity/block", worst <= tol, worst, tol, advisory=advisory)
    return report


def derivative_check(problem: NlpProblem, n_points: int = 20,
                     step: float = 1e-6, seed: int = 0,
                     n_columns: int = 25) -> float:
    """Max relative error of the analytic Jacobian and gradient versus
    central differences at random interior points.

    Sampled flows are kept away from zero so the friction kink (smoothed
    in the model but sharply curved) does not distort the comparison.
    """
    rng = np.random.default_rng(seed)
    n = problem.index.total
    worst = 0.0
    for _ in range(n_points):
        x = rng.uniform(0.8, 2.0, n)
        for q in ("f0", "fl"):
            blk = problem.index.block(x, q)
            blk[:] = rng.uniform(0.5, 1.5, blk.shape)
        lo = np.where(np.isfinite(problem.lb), problem.lb, -np.inf)
        hi = np.where(np.isfinite(problem.ub), problem.ub, np.inf)
        x = np.clip(x, lo + 1e-3, hi - 1e-3)
        x = np.clip(x, lo, hi)
        J = problem.eq_jacobian(x).tocsc()
        g = problem.gradient(x)
        cols = rng.choice(n, size=min(n_columns, n), replace=False)
        for k in cols:
            xp = x.copy()
            xp[k] += step
            xm = x.copy()
            xm[k] -= step
            fd = (problem.eq_constraints(xp) - problem.eq_constraints(xm)) / (2 * step)
            ana = J[:, k].toarray().ravel()
            denom = max(1.0, float(np.abs(ana).max(initial=0.0)))
            worst = max(worst, float(np.abs(fd - ana).max(initial=0.0)) / denom)
            fd_g = (problem.objective(xp) - problem.objective(xm)) / (2 * step)
            worst = max(worst, abs(fd_g - g[k]) / max(1.0, abs(g[k])))
    return worst


def run_audits(trajectory: SolutionTrajectory, segnet: SegmentedNetwork,
               scenario: Scenario, feasibility_tol: float = 1e-5,
               conservation_tol: float = 1e-6,
               periodicity_cycles: int = 0) -> AuditReport:
    """Standard post-solve audit battery."""
    report = check_feasibility(trajectory, segnet, scenario, feasibility_tol)
    report.extend(conservation_audit(trajectory, segnet, scenario,
                                     conservation_tol))
    report.extend(flow_direction_audit(trajectory))
    if periodicity_cycles:
        report.extend(periodicity_check(trajectory, periodicity_cycles))
    return report
