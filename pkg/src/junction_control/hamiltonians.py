"""Edge Hamiltonians H_i(x, p) = min_{|k| <= kappa} b_i(x, k) p + h_i(x, k)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .problem import EdgeDynamics, eval_coefficients


class HamiltonianEval(NamedTuple):
    value: np.ndarray | float
    argmin: np.ndarray | float


def _scalar_or_array(a):
    return float(a) if np.ndim(a) == 0 else a


def edge_hamiltonian_closed(dyn: EdgeDynamics, x, p) -> HamiltonianEval:
    """Closed-form minimiser and value; vectorised over x and p.

    For the sin-quadratic family the objective in k is
    theta k^2 + k (p sin x + lam) + gamma sin x + rho, minimised at
    k* = -(p sin x + lam) / (2 theta). When k* leaves [-kappa, kappa] the
    clipped control is used and the objective evaluated there.
    The constant family does not depend on k; ties go to k = -kappa.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if dyn.family == "constant":
        value = dyn.drift * p + dyn.cost + 0.0 * x
        argmin = np.full(value.shape, -dyn.kappa)
        return HamiltonianEval(_scalar_or_array(value), _scalar_or_array(argmin))

    s = np.sin(x)
    c = p * s + dyn.lam
    k_star = -c / (2 * dyn.theta)
    k = np.clip(k_star, -dyn.kappa, dyn.kappa)
    inside = k == k_star
    value = np.where(
        inside,
        -c * c / (4 * dyn.theta) + dyn.gamma * s + dyn.rho,
        dyn.theta * k * k + c * k + dyn.gamma * s + dyn.rho,
    )
    return HamiltonianEval(_scalar_or_array(value), _scalar_or_array(k))


def edge_hamiltonian_grid(dyn: EdgeDynamics, x: float, p: float, steps: int) -> HamiltonianEval:
    """Brute-force minimum over ``steps`` equally spaced controls in K_i.

    Ties are resolved toward the smallest control.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    k = np.linspace(-dyn.kappa, dyn.kappa, steps)
    _, b, h = eval_coefficients(dyn, float(x), k)  # scalar x broadcasts against the control grid
    obj = b * p + h
    j = int(np.argmin(obj))  # first occurrence -> smallest k
    return HamiltonianEval(float(obj[j]), float(k[j]))


def edge_hamiltonian(dyn: EdgeDynamics, x, p) -> HamiltonianEval:
    return edge_hamiltonian_closed(dyn, x, p)


def hamiltonian_p_derivative(dyn: EdgeDynamics, x, p):
    """dH/dp = b(x, kbar(x, p)) (envelope theorem)."""
    x = np.asarray(x, dtype=float)
    if dyn.family == "constant":
        return np.full(np.broadcast(x, p).shape, dyn.drift)
    k = edge_hamiltonian_closed(dyn, x, p).argmin
    return k * np.sin(x)


@dataclass(frozen=True)
class GrowthCheck:
    passed: bool
    witness: tuple[float, float] | None = None
    ratio: float = 0.0  # worst |H| / (1 + |p|)^2 seen

    def __bool__(self):
        return self.passed


def quadratic_growth_check(dyn: EdgeDynamics, samples, m1: float) -> GrowthCheck:
    """Check |H(x, p)| <= m1 (1 + |p|)^2 on sampled (x, p) pairs."""
    xs, ps = (np.asarray(a, dtype=float) for a in samples)
    value = np.asarray(edge_hamiltonian_closed(dyn, xs, ps).value)
    ratio = np.abs(value) / (1 + np.abs(ps)) ** 2
    bad = np.abs(value) > m1 * (1 + np.abs(ps)) ** 2
    if np.any(bad):
        j = int(np.argmax(bad))  # first violating sample
        return GrowthCheck(False, (float(xs[j]), float(ps[j])), float(ratio.max()))
    return GrowthCheck(True, None, float(ratio.max(initial=0.0)))
