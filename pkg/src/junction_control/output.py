"""CSV and text writers.

Every CSV starts with a header row. Reals are written as ``%.17e`` so that
the files round-trip exactly and do not depend on the locale; identical
inputs give byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .junction import junction_hamiltonian
from .pde import ValueGrid
from .problem import ControlProblem, ValidationReport
from .simulator import Ensemble
from .verification import VerificationReport


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17e}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def _levels(n_levels: int, stride: int) -> list[int]:
    levels = list(range(0, n_levels, stride))
    if levels[-1] != n_levels - 1:
        levels.append(n_levels - 1)
    return levels


def write_value_grid(out_dir: Path, vg: ValueGrid, time_stride: int = 1) -> Path:
    """values.csv: one row per (edge, time index, space index) with u and du/dx."""
    I = vg.values.shape[0]

    def rows():
        for i in range(I):
            for m in _levels(vg.times.size, time_stride):
                t = vg.times[m]
                for j, x in enumerate(vg.xs):
                    yield i + 1, m, j, t, x, vg.values[i, m, j], vg.gradients[i, m, j]

    return write_csv(Path(out_dir) / "values.csv", ["edge", "time_index", "space_index", "t", "x", "u", "dudx"],
                     rows())


def write_junction_table(out_dir: Path, vg: ValueGrid, problem: ControlProblem) -> Path:
    """junction.csv: vertex value, one-sided gradients, weights and H0 residual per time level."""
    I = problem.edge_count
    header = ["time_index", "t", "u0"] + [f"p_{i + 1}" for i in range(I)] + [f"alpha_{i + 1}" for i in range(I)]
    header.append("h0_residual")

    def rows():
        for m, t in enumerate(vg.times):
            p = vg.junction_gradients[m]
            alpha = junction_hamiltonian(p, problem.junction).alpha
            yield [m, t, vg.junction_values[m], *p, *alpha, vg.junction_residuals[m]]

    return write_csv(Path(out_dir) / "junction.csv", header, rows())


def write_ensemble(out_dir: Path, ens: Ensemble) -> Path:
    """ensemble.csv: per-path cost decomposition, local time and vertex hits."""
    header = ["path", "total", "edge_cost", "junction_cost", "terminal_cost", "local_time", "hits",
              "final_edge", "final_x"]
    total = ens.total
    rows = (
        [r, total[r], ens.edge_cost[r], ens.junction_cost[r], ens.terminal_cost[r], ens.local_time[r],
         int(ens.hits[r]), int(ens.final_edge[r]) + 1, ens.final_x[r]]
        for r in range(ens.n_paths)
    )
    return write_csv(Path(out_dir) / "ensemble.csv", header, rows)


def write_traces(out_dir: Path, ens: Ensemble) -> Path:
    """traces.csv: (path, time, edge, x, local time) for every retained step."""
    def rows():
        for p in ens.paths:
            for n in range(p.times.size):
                yield p.index, p.times[n], int(p.edges[n]), p.xs[n], p.local_time[n]

    return write_csv(Path(out_dir) / "traces.csv", ["path", "t", "edge", "x", "local_time"], rows())


def write_validation(out_dir: Path, report: ValidationReport) -> Path:
    rows = ([c.name, c.severity, c.passed, c.value, c.detail] for c in report.checks)
    return write_csv(Path(out_dir) / "validation.csv", ["check", "severity", "pass", "value", "detail"], rows)


def write_verification(out_dir: Path, report: VerificationReport) -> list[Path]:
    """verification.csv (check rows), estimates.csv (Monte Carlo means) and report.txt."""
    out_dir = Path(out_dir)
    checks = write_csv(out_dir / "verification.csv", ["check", "value", "tolerance", "pass"],
                       ([c.name, c.value, c.tolerance, c.passed] for c in report.checks))
    ests = [("optimal", report.mc_optimal)] + list(report.mc_alternatives)
    estimates = write_csv(out_dir / "estimates.csv", ["policy", "mean", "std_error", "n_paths", "dt", "seed"],
                          ([label, e.mean, e.std_error, e.n_paths, e.dt, e.seed] for label, e in ests))
    text = out_dir / "report.txt"
    text.write_text(report.to_text() + "\n", encoding="ascii")
    return [checks, estimates, text]
