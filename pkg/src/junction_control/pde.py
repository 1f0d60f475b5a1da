"""Backward HJB system on the truncated junction.

    du_i/dt + 1/2 sigma_i^2 d2u_i/dx2 + H_i(x, du_i/dx) = 0   on (t0, T) x (0, L)
    H0(du_1/dx(t, 0), ..., du_I/dx(t, 0)) = 0                  at the vertex
    u_i(T, x) = g_i(x)

Time stepping is IMEX: the Hamiltonian is taken explicitly from the later
time level with centred gradients, the diffusion implicitly (one banded
solve for all edges). Interior values are affine in the shared vertex
value u0, so the vertex condition becomes a scalar monotone equation in u0
that is solved by bisection. At x = L the second difference is set to zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .hamiltonians import edge_hamiltonian_closed
from .junction import junction_hamiltonian
from .problem import ControlProblem, JunctionCost

log = logging.getLogger(__name__)

JUNCTION_TOL = 1e-12  # tighter than the 1e-10 contract: stored gradients are re-rounded
BRACKET_LIMIT = 1e6


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    n_time: int
    n_space: int

    def __post_init__(self):
        if self.n_time < 1:
            raise ValueError(f"n_time must be >= 1, got {self.n_time}")
        if self.n_space < 3:
            raise ValueError(f"n_space must be >= 3, got {self.n_space}")

    def refined(self, factor: int) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.n_time * factor, self.n_space * factor)


@dataclass
class ValueGrid:
    """u_i(t_m, x_j) for all edges, with gradients and the vertex table.

    ``values`` and ``gradients`` have shape (I, n_time + 1, n_space + 1).
    """

    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray
    gradients: np.ndarray
    junction_values: np.ndarray
    junction_gradients: np.ndarray  # (n_time + 1, I)
    junction_residuals: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.xs[1] - self.xs[0])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def edge_count(self) -> int:
        return self.values.shape[0]

    def level_of(self, t: float) -> int:
        """Index of grid time ``t``; raises if ``t`` is not a grid time."""
        m = int(round((t - self.times[0]) / self.dt))
        if m < 0 or m >= self.times.size or abs(self.times[m] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the solver grid")
        return m

    def interpolate(self, m: int, edge, x):
        """Linear interpolation in x of u at level m on 0-based ``edge``."""
        edge = np.asarray(edge)
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.xs[-1])
        s = x / self.dx
        j = np.minimum(np.floor(s).astype(int), self.xs.size - 2)
        w = s - j
        row = self.values[edge, m]
        if row.ndim == 1:
            return (1 - w) * row[j] + w * row[j + 1]
        idx = np.arange(row.shape[0])
        return (1 - w) * row[idx, j] + w * row[idx, j + 1]

    def interpolate_time(self, t, edge, x):
        """Bilinear interpolation in (t, x); vectorised over paths."""
        t = np.asarray(t, dtype=float)
        s = np.clip((t - self.times[0]) / self.dt, 0, self.times.size - 1)
        m = np.minimum(np.floor(s).astype(int), self.times.size - 2)
        w = s - m
        return (1 - w) * self.interpolate_rows(m, edge, x) + w * self.interpolate_rows(m + 1, edge, x)

    def interpolate_rows(self, m, edge, x):
        m = np.asarray(m)
        edge = np.asarray(edge)
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.xs[-1])
        s = x / self.dx
        j = np.minimum(np.floor(s).astype(int), self.xs.size - 2)
        w = s - j
        return (1 - w) * self.values[edge, m, j] + w * self.values[edge, m, j + 1]


@dataclass
class FeedbackPolicy:
    """Tabulated feedback: edge controls per node and vertex weights per level."""

    t0: float
    dt: float
    dx: float
    edge_controls: np.ndarray  # (I, n_time + 1, n_space + 1)
    junction_weights: np.ndarray  # (n_time + 1, I)
    clip_active: int = 0
    label: str = "optimal"

    @property
    def n_levels(self) -> int:
        return self.junction_weights.shape[0]

    @property
    def T(self) -> float:
        return self.t0 + self.dt * (self.n_levels - 1)

    def level(self, t):
        """Piecewise-constant lookup: the level whose interval [t_m, t_m+1) holds t."""
        m = np.floor((np.asarray(t, dtype=float) - self.t0) / self.dt + 1e-9).astype(int)
        return np.clip(m, 0, self.n_levels - 2)

    def node(self, x):
        j = np.rint(np.asarray(x, dtype=float) / self.dx).astype(int)
        return np.clip(j, 0, self.edge_controls.shape[2] - 1)

    def with_constant(self, control: float | None = None, alpha=None, label: str = "") -> "FeedbackPolicy":
        """Same grid, with the edge control and/or the vertex weights frozen."""
        if control is None:
            controls = self.edge_controls
        else:
            per_edge = np.broadcast_to(np.asarray(control, dtype=float), (self.edge_controls.shape[0],))
            controls = np.empty_like(self.edge_controls)
            controls[:] = per_edge[:, None, None]
        weights = self.junction_weights if alpha is None else np.tile(np.asarray(alpha, float), (self.n_levels, 1))
        return FeedbackPolicy(self.t0, self.dt, self.dx, controls, weights, 0, label or self.label)


def one_sided_gradient(u0, u1, u2, dx):
    return (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * dx)


def junction_condition_root(interior, dx: float, cost: JunctionCost, guess: float = 0.0,
                            sensitivity=None, tol: float = JUNCTION_TOL) -> float:
    """Common vertex value u0 with H0(p(u0)) = 0.

    ``interior`` holds (u_i1, u_i2), the two nodes nearest the vertex on each
    edge. When those values themselves depend affinely on u0 (implicit
    coupling) pass their derivatives in ``sensitivity``. The one-sided
    gradients decrease in u0 and H0 increases in each gradient, so
    phi(u0) = H0(p(u0)) is strictly decreasing and its root is unique.
    """
    interior = np.asarray(interior, dtype=float)
    sens = np.zeros_like(interior) if sensitivity is None else np.asarray(sensitivity, dtype=float)
    if not np.all(np.isfinite(interior)):
        raise SolverError("non-finite interior values at the vertex")
    base = (4.0 * interior[:, 0] - interior[:, 1]) / (2.0 * dx)
    slope = (-3.0 + 4.0 * sens[:, 0] - sens[:, 1]) / (2.0 * dx)
    if np.any(slope >= 0):
        raise SolverError("vertex gradients are not decreasing in u0")

    def phi(u):
        return junction_hamiltonian(base + slope * u, cost).value

    f = phi(guess)
    if abs(f) <= tol:
        return float(guess)
    # |phi(u) - phi(root)| >= min|slope| |u - root|, so this step nearly brackets at once
    step = max(abs(f) / float(np.min(-slope)), 1e-12 * (1.0 + abs(guess)))
    direction = 1.0 if f > 0 else -1.0
    lo = hi = float(guess)
    while True:
        far = guess + direction * step * (1 + 1e-9)
        if abs(far) > BRACKET_LIMIT:
            raise SolverError(f"vertex root bracket exceeded {BRACKET_LIMIT:g}")
        if (phi(far) > 0) == (f > 0):
            step *= 2.0
            continue
        lo, hi = (guess, far) if direction > 0 else (far, guess)
        break

    # phi(lo) > 0 > phi(hi)
    while True:
        mid = 0.5 * (lo + hi)
        fm = phi(mid)
        if abs(fm) <= tol or mid in (lo, hi):
            return float(mid)
        if fm > 0:
            lo = mid
        else:
            hi = mid


def _diffusion_bands(problem: ControlProblem, xs: np.ndarray, dt: float) -> np.ndarray:
    """Banded matrix (scipy layout) of I - dt/2 sigma^2 D2 on all interior nodes.

    Edges occupy consecutive blocks of n - 1 rows; the last row of each
    block is the zero-second-difference closure at x = L.
    """
    n = xs.size - 1
    m = n - 1
    dx = xs[1] - xs[0]
    I = problem.edge_count
    ab = np.zeros((3, I * m))
    for i, e in enumerate(problem.edges):
        r = dt * e.sigma_at(xs[1:n]) ** 2 / (2 * dx * dx)
        r[-1] = 0.0
        sl = slice(i * m, (i + 1) * m)
        ab[1, sl] = 1 + 2 * r
        upper = -r.copy()
        upper[-1] = 0.0
        lower = -r.copy()
        lower[0] = 0.0
        # scipy banded: ab[0, j+1] = A[j, j+1]; ab[2, j-1] = A[j, j-1]
        ab[0, sl][1:] = upper[:-1]
        ab[2, sl][:-1] = lower[1:]
    return ab


def _gradients(u: np.ndarray, dx: float) -> np.ndarray:
    g = np.empty_like(u)
    g[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * dx)
    g[:, 0] = one_sided_gradient(u[:, 0], u[:, 1], u[:, 2], dx)
    g[:, -1] = (3.0 * u[:, -1] - 4.0 * u[:, -2] + u[:, -3]) / (2 * dx)
    return g


def solve_backward(problem: ControlProblem, grid: SpaceTimeGrid) -> ValueGrid:
    """March the HJB system from T back to t0."""
    problem.junction.check_size(problem.edge_count)
    I = problem.edge_count
    n = grid.n_space
    L = problem.geometry.length
    t0, T = problem.horizon.t0, problem.horizon.T
    if T <= t0:
        raise SolverError("empty time interval")
    xs = np.linspace(0.0, L, n + 1)
    times = np.linspace(t0, T, grid.n_time + 1)
    dx = L / n
    dt = (T - t0) / grid.n_time

    values = np.empty((I, grid.n_time + 1, n + 1))
    grads = np.empty_like(values)
    ju = np.empty(grid.n_time + 1)
    jg = np.empty((grid.n_time + 1, I))
    jres = np.empty(grid.n_time + 1)

    top = grid.n_time
    for i in range(I):
        values[i, top] = problem.terminal(i, xs)
        grads[i, top] = problem.terminal.derivative(i, xs)
    ju[top] = values[0, top, 0]
    jg[top] = grads[:, top, 0]
    jres[top] = junction_hamiltonian(jg[top], problem.junction).value

    ab = _diffusion_bands(problem, xs, dt)
    m_int = n - 1
    unit = np.zeros((I, m_int))
    for i, e in enumerate(problem.edges):
        unit[i, 0] = dt * float(e.sigma_at(xs[1])) ** 2 / (2 * dx * dx)
    sens = solve_banded((1, 1), ab, unit.ravel()).reshape(I, m_int)

    x_int = xs[1:n]
    u0 = ju[top]
    for m in range(grid.n_time - 1, -1, -1):
        later = values[:, m + 1]
        p = (later[:, 2:] - later[:, :-2]) / (2 * dx)
        rhs = later[:, 1:n].copy()
        max_speed = 0.0
        for i, e in enumerate(problem.edges):
            ev = edge_hamiltonian_closed(e, x_int, p[i])
            rhs[i] += dt * ev.value
            speed = abs(e.drift) if e.family == "constant" else np.max(np.abs(ev.argmin * np.sin(x_int)))
            max_speed = max(max_speed, float(speed))
        if dt * 2 * max_speed > dx * (1 + 1e-12):
            need = int(np.ceil((T - t0) * 2 * max_speed / dx))
            raise SolverError(
                f"time step too large at level {m}: dt = {dt:g} > dx / (2 max|dH/dp|) = "
                f"{dx / (2 * max_speed):g}; use n_time >= {need}"
            )
        base = solve_banded((1, 1), ab, rhs.ravel()).reshape(I, m_int)
        try:
            u0 = junction_condition_root(base[:, :2], dx, problem.junction, guess=u0, sensitivity=sens[:, :2])
        except SolverError as exc:
            raise SolverError(f"vertex root failed at time level {m} (t = {times[m]:g}): {exc}") from exc
        u = values[:, m]
        u[:, 0] = u0
        u[:, 1:n] = base + u0 * sens
        u[:, n] = 2 * u[:, n - 1] - u[:, n - 2]
        if not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite values at time level {m} (t = {times[m]:g})")
        grads[:, m] = _gradients(u, dx)
        ju[m] = u0
        jg[m] = grads[:, m, 0]
        jres[m] = junction_hamiltonian(jg[m], problem.junction).value

    return ValueGrid(times, xs, values, grads, ju, jg, jres)


def extract_policy(problem: ControlProblem, vg: ValueGrid) -> FeedbackPolicy:
    """Tabulate kbar_i(x, du_i/dx) at every node and alphabar(du/dx(t, 0)) at every level."""
    if not np.all(np.isfinite(vg.values)):
        raise SolverError("value grid contains non-finite entries")
    I, nt1, nx1 = vg.values.shape
    controls = np.empty_like(vg.values)
    clipped = 0
    for i, e in enumerate(problem.edges):
        ev = edge_hamiltonian_closed(e, vg.xs[None, :], vg.gradients[i])
        controls[i] = ev.argmin
        if e.family == "sin_quadratic":
            k_star = -(vg.gradients[i] * np.sin(vg.xs[None, :]) + e.lam) / (2 * e.theta)
            clipped += int(np.count_nonzero(np.abs(k_star) > e.kappa))
    weights = np.array([junction_hamiltonian(p, problem.junction).alpha for p in vg.junction_gradients])
    if clipped:
        log.warning("control bound active at %d nodes; kappa may be too small", clipped)
    return FeedbackPolicy(float(vg.times[0]), vg.dt, vg.dx, controls, weights, clipped)


@dataclass
class ConvergenceReport:
    grids: list[SpaceTimeGrid]
    vertex_values: list[float]
    differences: list[float]  # max-norm on the coarsest grid between successive levels
    ratio: float
    order: float
    errors: list[float] = field(default_factory=list)  # vs oracle, when one is given


def refine_and_compare(problem: ControlProblem, grid: SpaceTimeGrid, factor: int = 2,
                       oracle: float | None = None) -> ConvergenceReport:
    """Solve on three nested grids and measure successive differences."""
    if factor < 2:
        raise ValueError("factor must be >= 2")
    grids = [grid, grid.refined(factor), grid.refined(factor * factor)]
    coarse = []
    vertex = []
    for k, gr in enumerate(grids):
        vg = solve_backward(problem, gr)
        s = factor**k
        coarse.append(vg.values[:, ::s, ::s])
        vertex.append(float(vg.junction_values[0]))
    diffs = [float(np.max(np.abs(coarse[k] - coarse[k + 1]))) for k in range(2)]
    if diffs[1] == 0:
        ratio = np.inf if diffs[0] > 0 else 1.0
    else:
        ratio = diffs[0] / diffs[1]
    order = float(np.log(ratio) / np.log(factor)) if np.isfinite(ratio) and ratio > 0 else np.nan
    errors = [abs(v - oracle) for v in vertex] if oracle is not None else []
    return ConvergenceReport(grids, vertex, diffs, float(ratio), order, errors)
