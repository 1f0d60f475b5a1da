"""Control problem data on a star-shaped junction.

A junction is I half-lines glued at a vertex 0. Each edge carries a
controlled diffusion (sigma, drift b(x, k), running cost h(x, k)) with the
control k restricted to [-kappa, kappa]. At the vertex the controller picks
dispatch weights alpha in the floored simplex

    A0 = {alpha : floor <= alpha_i <= 1, sum(alpha) = 1}

and pays h0(alpha) per unit of local time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EDGE_FAMILIES = ("constant", "sin_quadratic")
JUNCTION_MODES = ("linear", "quadratic")
TERMINAL_FAMILIES = ("zero", "linear", "tanh", "gaussian")

TOL_COMPAT = 1e-8


class ProblemError(ValueError):
    """Raised when problem data violates a hard structural assumption."""


class TerminalGrowthWarning(UserWarning):
    pass


@dataclass(frozen=True)
class JunctionGeometry:
    edge_count: int
    length: float

    def __post_init__(self):
        if self.edge_count < 1:
            raise ProblemError(f"edge_count must be >= 1, got {self.edge_count}")
        if not self.length > 0:
            raise ProblemError(f"truncation length must be > 0, got {self.length}")


@dataclass(frozen=True)
class EdgePoint:
    """A point (x, i) of the junction. ``edge`` is 1-based."""

    edge: int
    x: float

    def __post_init__(self):
        if self.edge < 1:
            raise ProblemError(f"edge index is 1-based, got {self.edge}")
        if self.x < 0:
            raise ProblemError(f"coordinate must be >= 0, got {self.x}")

    @property
    def index(self) -> int:
        return self.edge - 1

    def same_point(self, other: "EdgePoint") -> bool:
        if self.x == 0 and other.x == 0:
            return True
        return self.edge == other.edge and self.x == other.x


def junction_distance(p: EdgePoint, q: EdgePoint) -> float:
    """Geodesic distance on the junction: |x - y| on one edge, x + y across."""
    if p.edge == q.edge:
        return abs(p.x - q.x)
    return p.x + q.x


@dataclass(frozen=True)
class EdgeDynamics:
    """Coefficients of one edge.

    ``constant``:      b = drift,        h = cost
    ``sin_quadratic``: b = k sin(x),     h = theta k^2 + gamma sin(x) + lam k + rho

    The diffusion coefficient is the constant ``sigma`` in both families.
    """

    family: str
    sigma: float
    kappa: float
    drift: float = 0.0
    cost: float = 0.0
    theta: float = 0.0
    gamma: float = 0.0
    lam: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        if self.family not in EDGE_FAMILIES:
            raise ProblemError(f"unknown edge family {self.family!r}")
        if not self.kappa > 0:
            raise ProblemError(f"kappa must be > 0, got {self.kappa}")
        if not self.sigma >= 0:
            raise ProblemError(f"sigma must be >= 0, got {self.sigma}")
        if self.family == "sin_quadratic" and not self.theta > 0:
            raise ProblemError(f"sin_quadratic needs theta > 0, got {self.theta}")
        if self.family == "constant" and (self.theta or self.gamma or self.lam or self.rho):
            raise ProblemError("constant family takes only sigma, kappa, drift, cost")
        if self.family == "sin_quadratic" and (self.drift or self.cost):
            raise ProblemError("sin_quadratic family takes no drift/cost constants")

    def sigma_at(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.sigma)

    @property
    def drift_bound(self) -> float:
        """sup |b| + Lipschitz constant of b in x over the control set."""
        if self.family == "constant":
            return abs(self.drift)
        return 2.0 * self.kappa

    @property
    def growth_constant(self) -> float:
        """A constant M1 with |H(x, p)| <= M1 (1 + |p|)^2 for all x, p."""
        if self.family == "constant":
            return abs(self.drift) + abs(self.cost)
        th, lam = self.theta, self.lam
        return 1 / (2 * th) + abs(lam) / th + lam**2 / (2 * th) + abs(self.gamma) + abs(self.rho)


def eval_coefficients(dyn: EdgeDynamics, x, k):
    """Return (sigma, b, h) at (x, k). Works elementwise on arrays."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(np.abs(k) > dyn.kappa * (1 + 1e-12)):
        raise ProblemError(f"control outside [-{dyn.kappa}, {dyn.kappa}]")
    sigma = dyn.sigma_at(x) if x.ndim else dyn.sigma
    if dyn.family == "constant":
        shape = np.broadcast(x, k).shape
        b = np.full(shape, dyn.drift) if shape else dyn.drift
        h = np.full(shape, dyn.cost) if shape else dyn.cost
        return sigma, b, h
    s = np.sin(x)
    b = k * s
    h = dyn.theta * k * k + dyn.gamma * s + dyn.lam * k + dyn.rho
    if b.ndim == 0:
        return sigma, float(b), float(h)
    return sigma, b, h


@dataclass(frozen=True)
class JunctionCost:
    floor: float
    mode: str = "linear"
    quad_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0 < self.floor < 1:
            raise ProblemError(f"floor must lie in (0, 1), got {self.floor}")
        if self.mode not in JUNCTION_MODES:
            raise ProblemError(f"unknown junction mode {self.mode!r}")
        if self.mode == "quadratic":
            if self.quad_weights is None:
                raise ProblemError("quadratic mode needs quad_weights")
            if any(not w > 0 for w in self.quad_weights):
                raise ProblemError("quad_weights must all be > 0")

    def check_size(self, edge_count: int):
        if edge_count * self.floor > 1 + 1e-15:
            raise ProblemError(
                f"A0 is empty: I * floor = {edge_count * self.floor:g} > 1"
            )
        if self.quad_weights is not None and len(self.quad_weights) != edge_count:
            raise ProblemError("quad_weights length differs from edge count")

    def cost(self, alpha) -> float:
        """h0(alpha)."""
        if self.mode == "linear":
            return 0.0
        alpha = np.asarray(alpha, dtype=float)
        return 0.5 * float(np.dot(alpha * alpha, self.quad_weights))


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal cost families, all with g_i(0) = value on every edge.

    ``linear``:   g_i(x) = value + slope_i x
    ``tanh``:     g_i(x) = value + slope_i s tanh(x / s)
    ``gaussian``: g_i(x) = value + a_i (1 - exp(-x^2 / (2 s^2)))

    The first two have g_i'(0+) = slope_i; the gaussian family is flat at 0.
    """

    family: str = "zero"
    value: float = 0.0
    slopes: tuple[float, ...] = ()
    scale: float = 1.0
    amplitudes: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in TERMINAL_FAMILIES:
            raise ProblemError(f"unknown terminal family {self.family!r}")
        if self.family in ("tanh", "gaussian") and not self.scale > 0:
            raise ProblemError(f"{self.family} terminal needs scale > 0")
        if self.family == "zero" and (self.value or any(self.slopes) or any(self.amplitudes)):
            raise ProblemError("zero terminal takes no value/slopes")
        if self.family == "gaussian" and self.slopes:
            raise ProblemError("gaussian terminal takes amplitudes, not slopes")
        if self.family != "gaussian" and self.amplitudes:
            raise ProblemError(f"{self.family} terminal takes no amplitudes")

    @property
    def coefficients(self) -> tuple[float, ...]:
        return self.amplitudes if self.family == "gaussian" else self.slopes

    def slope(self, i: int) -> float:
        return self.slopes[i] if self.slopes else 0.0

    def __call__(self, i: int, x):
        x = np.asarray(x, dtype=float)
        if self.family == "zero":
            return np.zeros_like(x) if x.ndim else 0.0
        if self.family == "gaussian":
            out = self.value + self.amplitudes[i] * -np.expm1(-0.5 * (x / self.scale) ** 2)
        elif self.family == "linear":
            out = self.value + self.slope(i) * x
        else:
            out = self.value + self.slope(i) * self.scale * np.tanh(x / self.scale)
        return out if x.ndim else float(out)

    def derivative(self, i: int, x):
        x = np.asarray(x, dtype=float)
        s = self.slope(i)
        if self.family == "tanh":
            out = s / np.cosh(x / self.scale) ** 2
        elif self.family == "gaussian":
            out = self.amplitudes[i] * x / self.scale**2 * np.exp(-0.5 * (x / self.scale) ** 2)
        else:
            out = np.full_like(x, s)
        return out if x.ndim else float(out)

    def at_edges(self, edge, x):
        """Vectorised g over arrays of 0-based edge indices and coordinates."""
        edge = np.asarray(edge)
        x = np.asarray(x, dtype=float)
        if self.family == "zero":
            return np.zeros_like(x)
        if self.family == "gaussian":
            a = np.asarray(self.amplitudes, dtype=float)[edge]
            return self.value + a * -np.expm1(-0.5 * (x / self.scale) ** 2)
        s = np.asarray(self.slopes, dtype=float)[edge]
        if self.family == "linear":
            return self.value + s * x
        return self.value + s * self.scale * np.tanh(x / self.scale)

    @property
    def bounded(self) -> bool:
        return self.family != "linear" or not any(self.slopes)


@dataclass(frozen=True)
class Horizon:
    T: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ProblemError(f"horizon T must be > 0, got {self.T}")
        if not 0 <= self.t0 <= self.T:
            raise ProblemError(f"initial time {self.t0} outside [0, {self.T}]")


@dataclass(frozen=True)
class ControlProblem:
    geometry: JunctionGeometry
    edges: tuple[EdgeDynamics, ...]
    junction: JunctionCost
    terminal: TerminalCondition
    horizon: Horizon
    ellipticity: float = 0.05
    growth_constant: float | None = None
    name: str = "problem"

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        if len(self.edges) != self.geometry.edge_count:
            raise ProblemError(
                f"{len(self.edges)} edge dynamics for {self.geometry.edge_count} edges"
            )
        t = self.terminal
        if t.family != "zero" and len(t.coefficients) != self.geometry.edge_count:
            raise ProblemError(f"terminal {'amplitudes' if t.family == 'gaussian' else 'slopes'} "
                               "length differs from edge count")
        if self.junction.quad_weights is not None and len(self.junction.quad_weights) != self.geometry.edge_count:
            raise ProblemError("quad_weights length differs from edge count")

    @property
    def edge_count(self) -> int:
        return self.geometry.edge_count

    @property
    def sigma0_squared(self) -> np.ndarray:
        return np.array([float(e.sigma_at(0.0)) ** 2 for e in self.edges])

    def terminal_gradients(self) -> np.ndarray:
        return np.array([self.terminal.slope(i) for i in range(self.edge_count)])


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str
    value: float = math.nan
    severity: str = "error"  # "error" checks gate the report, "warning" ones don't


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.severity == "error")

    @property
    def warnings(self) -> list[Check]:
        return [c for c in self.checks if c.severity == "warning" and not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            tag = "PASS" if c.passed else ("WARN" if c.severity == "warning" else "FAIL")
            lines.append(f"[{tag}] {c.name}: {c.detail}")
        lines.append("overall: " + ("PASS" if self.ok else "FAIL"))
        return "\n".join(lines)


def validate_problem(problem: ControlProblem, n_grid: int = 201, n_samples: int = 2000,
                     tol_compat: float = TOL_COMPAT) -> ValidationReport:
    """Check the standing assumptions on ``problem``.

    An empty junction action set or a diffusion below the ellipticity floor
    raises ProblemError. Everything else lands in the report.
    """
    # deferred: hamiltonians/junction import this module
    from .hamiltonians import quadratic_growth_check
    from .junction import junction_hamiltonian

    I = problem.edge_count
    problem.junction.check_size(I)
    grid = np.linspace(0.0, problem.geometry.length, n_grid)
    report = ValidationReport()

    min_sigma = min(float(np.min(e.sigma_at(grid))) for e in problem.edges)
    if min_sigma < problem.ellipticity:
        raise ProblemError(
            f"sigma drops to {min_sigma:g} below the ellipticity floor {problem.ellipticity:g}"
        )
    report.checks.append(Check("ellipticity", True, f"min sigma {min_sigma:g} >= c = {problem.ellipticity:g}", min_sigma))
    report.checks.append(Check(
        "junction_set", True,
        f"I * floor = {I * problem.junction.floor:g} <= 1", I * problem.junction.floor,
    ))

    b_bound = max(e.drift_bound for e in problem.edges)
    s_bound = max(abs(e.sigma) for e in problem.edges)
    report.checks.append(Check("bounded_coefficients", math.isfinite(b_bound + s_bound),
                               f"|b| <= {b_bound:g}, |sigma| <= {s_bound:g}", b_bound))

    if problem.junction.mode == "quadratic":
        w = np.asarray(problem.junction.quad_weights)
        match = bool(np.allclose(w, problem.sigma0_squared, rtol=1e-12, atol=0))
        report.checks.append(Check("junction_cost_weights", match,
                                   "quad weights equal sigma_i(0)^2" if match
                                   else f"quad weights {w.tolist()} != sigma_i(0)^2 {problem.sigma0_squared.tolist()}"))

    rng = np.random.default_rng(0)
    xs = rng.uniform(0.0, problem.geometry.length, n_samples)
    ps = rng.uniform(-100.0, 100.0, n_samples)
    for i, e in enumerate(problem.edges):
        m1 = problem.growth_constant if problem.growth_constant is not None else e.growth_constant
        res = quadratic_growth_check(e, (xs, ps), m1)
        detail = f"M1 = {m1:g}" if res.passed else f"M1 = {m1:g} violated at (x, p) = {res.witness}"
        report.checks.append(Check(f"quadratic_growth[{i + 1}]", res.passed, detail, m1))

    if not problem.terminal.bounded:
        warnings.warn("terminal condition is unbounded (linear family)", TerminalGrowthWarning, stacklevel=2)
    report.checks.append(Check("terminal_bounded", problem.terminal.bounded,
                               "g bounded" if problem.terminal.bounded else "g grows linearly",
                               severity="warning"))

    grads = problem.terminal_gradients()
    h0 = junction_hamiltonian(grads, problem.junction).value
    report.checks.append(Check(
        "compatibility", abs(h0) <= tol_compat,
        f"H0(g'(0+)) = {h0:.3e}, tol {tol_compat:g}", h0,
    ))
    return report
