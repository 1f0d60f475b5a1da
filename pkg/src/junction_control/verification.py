"""Monte Carlo checks of a computed value function.

The PDE value u must (a) be reproduced by the expected cost of the
feedback policy it induces, (b) lower-bound the cost of any other
admissible policy, and (c) satisfy the dynamic programming identity
u(t0, x0) = E[cost(t0, tau) + u(tau, X_tau)] at intermediate times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pde import FeedbackPolicy, SpaceTimeGrid, ValueGrid, extract_policy, solve_backward
from .problem import ControlProblem, EdgePoint
from .simulator import Ensemble, simulate_ensemble

MC_REL_TOL = 0.03
DPP_TOL = 0.03
JUNCTION_TOL = 1e-10


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    dt: float
    seed: int

    @classmethod
    def from_samples(cls, samples: np.ndarray, dt: float, seed: int) -> "McEstimate":
        n = samples.size
        se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(samples)), se, n, dt, seed)


def mc_value(problem: ControlProblem, policy: FeedbackPolicy, start: EdgePoint, t0: float | None,
             n_paths: int, dt: float, seed: int) -> McEstimate:
    ens = simulate_ensemble(problem, policy, start, dt, n_paths, seed, t0=t0)
    return McEstimate.from_samples(ens.total, dt, seed)


def constant_alternatives(problem: ControlProblem, policy: FeedbackPolicy) -> list[FeedbackPolicy]:
    """Constant edge controls (+kappa, -kappa, 0) and each vertex of A0."""
    kappa = np.array([e.kappa for e in problem.edges])
    I = problem.edge_count
    alts = [
        policy.with_constant(control=kappa, label="k=+kappa"),
        policy.with_constant(control=-kappa, label="k=-kappa"),
        policy.with_constant(control=0.0, label="k=0"),
    ]
    a = problem.junction.floor
    for j in range(I):
        alpha = np.full(I, a)
        alpha[j] = 1 - (I - 1) * a
        alts.append(policy.with_constant(alpha=alpha, label=f"alpha=vertex{j + 1}"))
    return alts


@dataclass
class DominanceRow:
    label: str
    estimate: McEstimate
    margin: float  # alternative mean - optimal mean
    combined_se: float

    @property
    def passed(self) -> bool:
        return self.margin >= -2 * self.combined_se


@dataclass
class DominanceReport:
    optimal: McEstimate
    rows: list[DominanceRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def dominance_check(problem: ControlProblem, optimal: FeedbackPolicy, alternatives: Sequence[FeedbackPolicy],
                    start: EdgePoint, t0: float | None, n_paths: int, dt: float, seed: int,
                    optimal_estimate: McEstimate | None = None) -> DominanceReport:
    """Every admissible alternative must cost at least the optimum, up to noise."""
    opt = optimal_estimate or mc_value(problem, optimal, start, t0, n_paths, dt, seed)
    rows = []
    for alt in alternatives:
        est = mc_value(problem, alt, start, t0, n_paths, dt, seed)
        rows.append(DominanceRow(alt.label, est, est.mean - opt.mean, float(np.hypot(est.std_error, opt.std_error))))
    return DominanceReport(opt, rows)


@dataclass(frozen=True)
class DppEstimate:
    residual: float
    pde_value: float
    estimate: McEstimate  # of cost(t0, tau) + u(tau, X_tau)

    @property
    def noise(self) -> float:
        return self.estimate.std_error / (1 + abs(self.pde_value))


def dpp_estimate(problem: ControlProblem, policy: FeedbackPolicy, vg: ValueGrid, start: EdgePoint,
                 t0: float, tau: float, n_paths: int, dt: float, seed: int,
                 stop_on_hit: bool = False) -> DppEstimate:
    m0 = vg.level_of(t0)
    mt = vg.level_of(tau)
    if mt < m0:
        raise ValueError("tau must not precede t0")
    u_start = float(vg.interpolate(m0, start.index, start.x))
    ens = simulate_ensemble(problem, policy, start, dt, n_paths, seed, t0=t0, until=tau, stop_on_hit=stop_on_hit)
    if stop_on_hit:
        u_end = vg.interpolate_time(ens.stop_time, ens.final_edge, ens.final_x)
    else:
        u_end = vg.interpolate(mt, ens.final_edge, ens.final_x)
    est = McEstimate.from_samples(ens.edge_cost + ens.junction_cost + u_end, dt, seed)
    return DppEstimate(abs(u_start - est.mean) / (1 + abs(u_start)), u_start, est)


def dpp_residual(problem: ControlProblem, policy: FeedbackPolicy, start: EdgePoint, t0: float, tau: float,
                 n_paths: int, dt: float, seed: int, vg: ValueGrid, stop_on_hit: bool = False) -> float:
    """|u(t0, x0) - E[cost(t0, tau) + u(tau, X_tau)]| / (1 + |u(t0, x0)|)."""
    return dpp_estimate(problem, policy, vg, start, t0, tau, n_paths, dt, seed, stop_on_hit).residual


@dataclass(frozen=True)
class CheckRow:
    name: str
    value: float
    tolerance: float
    passed: bool


@dataclass
class VerificationReport:
    start: EdgePoint
    pde_value: float
    mc_optimal: McEstimate
    mc_alternatives: list[tuple[str, McEstimate]]
    dpp_residual: float
    checks: list[CheckRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_text(self) -> str:
        s = self.start
        lines = [
            f"start: edge {s.edge}, x = {s.x:g}",
            f"PDE value u(t0, x0)       = {self.pde_value:.6f}",
            f"MC cost, optimal policy   = {self.mc_optimal.mean:.6f} +/- {self.mc_optimal.std_error:.6f}"
            f"  ({self.mc_optimal.n_paths} paths, dt = {self.mc_optimal.dt:g}, seed {self.mc_optimal.seed})",
        ]
        for label, est in self.mc_alternatives:
            lines.append(f"MC cost, {label:<17} = {est.mean:.6f} +/- {est.std_error:.6f}")
        lines.append(f"DPP residual (midpoint)   = {self.dpp_residual:.3e}")
        lines.append("")
        for c in self.checks:
            lines.append(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.value:.6e} (tol {c.tolerance:.3e})")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def run_verification(problem: ControlProblem, grid: SpaceTimeGrid, start: EdgePoint, n_paths: int, dt: float,
                     seed: int, tau: float | None = None, vg: ValueGrid | None = None) -> VerificationReport:
    """Solve, extract the feedback and run every Monte Carlo check."""
    vg = vg if vg is not None else solve_backward(problem, grid)
    policy = extract_policy(problem, vg)
    t0, T = problem.horizon.t0, problem.horizon.T
    if tau is None:
        tau = vg.times[vg.times.size // 2]
    u = float(vg.interpolate(0, start.index, start.x))
    alts = constant_alternatives(problem, policy)
    dom = dominance_check(problem, policy, alts, start, t0, n_paths, dt, seed)
    opt = dom.optimal
    dpp_mid = dpp_estimate(problem, policy, vg, start, t0, tau, n_paths, dt, seed)
    dpp_hit = dpp_estimate(problem, policy, vg, start, t0, T, n_paths, dt, seed, stop_on_hit=True)

    checks = []
    tol = max(MC_REL_TOL * abs(u), 3 * opt.std_error)
    checks.append(CheckRow("mc_vs_pde", abs(opt.mean - u), tol, abs(opt.mean - u) <= tol))
    for r in dom.rows:
        checks.append(CheckRow(f"dominance[{r.label}]", r.margin, -2 * r.combined_se, r.passed))
    checks.append(CheckRow("dpp_midpoint", dpp_mid.residual, DPP_TOL, dpp_mid.residual <= DPP_TOL))
    checks.append(CheckRow("dpp_first_hit", dpp_hit.residual, DPP_TOL, dpp_hit.residual <= DPP_TOL))
    jres = float(np.max(np.abs(vg.junction_residuals[:-1])))
    checks.append(CheckRow("junction_residual", jres, JUNCTION_TOL, jres <= JUNCTION_TOL))
    checks.append(CheckRow("control_bound_inactive", float(policy.clip_active), 0.0, policy.clip_active == 0))
    return VerificationReport(start, u, opt, [(r.label, r.estimate) for r in dom.rows], dpp_mid.residual, checks)
