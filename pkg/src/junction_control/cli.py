"""Command-line entry point.

    junction-control validate SCENARIO
    junction-control qp --p 3,1,2 --floor 0.1 --mode linear
    junction-control solve SCENARIO [--nx N --nt N --length L --out-dir DIR]
    junction-control simulate SCENARIO --seed S [--n-paths N --dt DT --traces K]
    junction-control verify SCENARIO --seed S [--n-paths N --dt DT]

SCENARIO is a JSON file or the name of a shipped scenario. Exit status is 0
when every check passes, 1 when a check fails and 2 on bad input.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import output
from .junction import junction_hamiltonian, solve_linear, solve_quadratic
from .pde import SolverError, extract_policy, solve_backward
from .problem import JunctionCost, ProblemError, validate_problem
from .scenario import SHIPPED, Scenario, ScenarioError, load_scenario
from .simulator import SimulationError, simulate_ensemble
from .verification import JUNCTION_TOL, run_verification

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="junction-control",
                                 description="Optimal control of diffusions on a star junction.")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, help_text, stochastic=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help=f"scenario JSON file or shipped name ({', '.join(SHIPPED)})")
        p.add_argument("--out-dir", type=Path, help="output directory (default: the scenario's)")
        p.add_argument("--length", type=float, help="override the edge truncation length L")
        if name != "validate":
            p.add_argument("--nx", type=_positive_int, help="override n_space")
            p.add_argument("--nt", type=_positive_int, help="override n_time")
        if stochastic:
            p.add_argument("--seed", type=int, help="RNG seed (mandatory unless the scenario sets one)")
            p.add_argument("--n-paths", type=_positive_int, help="override the number of paths")
            p.add_argument("--dt", type=float, help="override the simulation time step")
        return p

    scenario_cmd("validate", "check the standing assumptions")
    p = scenario_cmd("solve", "solve the HJB system and write values.csv and junction.csv")
    p.add_argument("--time-stride", type=_positive_int, help="write every k-th time level to values.csv")
    p = scenario_cmd("simulate", "simulate the optimally controlled process and write ensemble.csv", True)
    p.add_argument("--traces", type=int, nargs="?", const=10, default=0, metavar="K",
                   help="also write the first K path traces to traces.csv (default K = 10)")
    scenario_cmd("verify", "Monte Carlo verification of the PDE value", True)

    q = sub.add_parser("qp", help="evaluate the junction Hamiltonian H0(p)")
    q.add_argument("--p", type=_floats, required=True, help="comma-separated gradients, e.g. 3,1,2 (use --p=-1,2 "
                                                           "for a leading minus)")
    q.add_argument("--floor", type=float, required=True, help="lower bound on every weight")
    q.add_argument("--mode", choices=("linear", "quadratic"), default="linear")
    q.add_argument("--weights", type=_floats, help="quadratic weights sigma_i(0)^2 (quadratic mode)")
    return ap


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    return sc.with_overrides(
        n_paths=getattr(args, "n_paths", None), dt=getattr(args, "dt", None), seed=getattr(args, "seed", None),
        n_space=getattr(args, "nx", None), n_time=getattr(args, "nt", None), length=args.length,
        out_dir=args.out_dir, time_stride=getattr(args, "time_stride", None),
    )


def _seed(sc: Scenario) -> int:
    if sc.mc.seed is None:
        raise InputError("a seed is mandatory for stochastic commands: pass --seed or set mc.seed")
    return sc.mc.seed


def _check_validation(sc: Scenario, *, quiet: bool = False):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = validate_problem(sc.problem)
    if not quiet:
        for c in report.checks:
            if not c.passed:
                tag = "warning" if c.severity == "warning" else "note"
                print(f"{tag}: {c.name}: {c.detail}", file=sys.stderr)
    return report


def cmd_validate(args) -> int:
    sc = _scenario(args)
    report = _check_validation(sc, quiet=True)
    print(f"scenario: {sc.name}")
    print(report.to_text())
    if args.out_dir is not None:
        output.write_validation(args.out_dir, report)
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_qp(args) -> int:
    p = np.asarray(args.p, dtype=float)
    if p.size == 0:
        raise InputError("--p needs at least one value")
    if args.mode == "linear":
        if args.weights is not None:
            raise InputError("--weights only applies to --mode quadratic")
        res = solve_linear(p, args.floor)
    else:
        if args.weights is None or len(args.weights) != p.size:
            raise InputError("--mode quadratic needs --weights with one value per gradient")
        JunctionCost(args.floor, "quadratic", tuple(args.weights))  # validates floor and weights
        res = solve_quadratic(p, args.weights, args.floor)
    print("alpha = [" + ", ".join(f"{a:.12g}" for a in res.alpha) + "]")
    print(f"H0 = {res.value:.12g}")
    print(f"multiplier = {res.multiplier:.12g}")
    return EXIT_OK


def cmd_solve(args) -> int:
    sc = _scenario(args)
    _check_validation(sc)
    vg = solve_backward(sc.problem, sc.grid)
    out = Path(sc.output.dir)
    output.write_value_grid(out, vg, sc.output.time_stride)
    output.write_junction_table(out, vg, sc.problem)
    res = float(np.max(np.abs(vg.junction_residuals[:-1]))) if vg.times.size > 1 else 0.0
    print(f"scenario: {sc.name}  grid: n_time = {sc.grid.n_time}, n_space = {sc.grid.n_space}, "
          f"L = {sc.problem.geometry.length:g}")
    print(f"u(t0, vertex) = {vg.junction_values[0]:.10g}")
    print(f"alpha(t0)     = {junction_hamiltonian(vg.junction_gradients[0], sc.problem.junction).alpha.round(6).tolist()}")
    print(f"max junction residual = {res:.3e} (tol {JUNCTION_TOL:g})")
    print(f"wrote {out / 'values.csv'} and {out / 'junction.csv'}")
    return EXIT_OK if res <= JUNCTION_TOL else EXIT_FAIL


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    seed = _seed(sc)
    _check_validation(sc)
    vg = solve_backward(sc.problem, sc.grid)
    policy = extract_policy(sc.problem, vg)
    ens = simulate_ensemble(sc.problem, policy, sc.mc.start, sc.mc.dt, sc.mc.n_paths, seed)
    out = Path(sc.output.dir)
    output.write_ensemble(out, ens)
    if args.traces:
        traced = simulate_ensemble(sc.problem, policy, sc.mc.start, sc.mc.dt, min(args.traces, sc.mc.n_paths),
                                   seed, record=True)
        output.write_traces(out, traced)
    total = ens.total
    se = float(np.std(total, ddof=1) / np.sqrt(total.size)) if total.size > 1 else 0.0
    s = sc.mc.start
    print(f"scenario: {sc.name}  start: edge {s.edge}, x = {s.x:g}  paths: {ens.n_paths}  dt = {sc.mc.dt:g}  "
          f"seed = {seed}")
    print(f"mean cost      = {total.mean():.10g} +/- {se:.3g}")
    print(f"u(t0, x0)      = {float(vg.interpolate(0, s.index, s.x)):.10g}")
    print(f"mean l(T)      = {ens.local_time.mean():.10g}")
    print(f"mean hits      = {ens.hits.mean():.6g}")
    print(f"wrote {out / 'ensemble.csv'}" + (f" and {out / 'traces.csv'}" if args.traces else ""))
    return EXIT_OK


def cmd_verify(args) -> int:
    sc = _scenario(args)
    seed = _seed(sc)
    _check_validation(sc)
    report = run_verification(sc.problem, sc.grid, sc.mc.start, sc.mc.n_paths, sc.mc.dt, seed, tau=sc.mc.tau)
    out = Path(sc.output.dir)
    output.write_verification(out, report)
    print(f"scenario: {sc.name}")
    print(report.to_text())
    print(f"wrote {out / 'verification.csv'}, {out / 'estimates.csv'} and {out / 'report.txt'}")
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {"validate": cmd_validate, "qp": cmd_qp, "solve": cmd_solve, "simulate": cmd_simulate,
            "verify": cmd_verify}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ProblemError, SolverError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit as exc:  # argparse usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
