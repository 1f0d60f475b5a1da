"""Junction Hamiltonian H0(p) = min over A0 of sum(alpha_i p_i) + h0(alpha)."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .problem import JunctionCost, ProblemError


class JunctionEval(NamedTuple):
    value: float
    alpha: np.ndarray
    multiplier: float  # Lagrange multiplier of sum(alpha) = 1


def _check_floor(n: int, floor: float):
    if n * floor > 1 + 1e-15:
        raise ProblemError(f"A0 is empty: I * floor = {n * floor:g} > 1")


def solve_linear(p, floor: float) -> JunctionEval:
    """All spare mass on the edge with the smallest gradient (lowest index on ties)."""
    p = np.asarray(p, dtype=float)
    n = p.size
    _check_floor(n, floor)
    j = int(np.argmin(p))
    alpha = np.full(n, floor)
    alpha[j] = max(1.0 - (n - 1) * floor, floor)  # I * floor == 1 up to round-off
    return JunctionEval(float(np.dot(alpha, p)), alpha, float(p[j]))


def _clipped(mu, p, w, floor):
    return np.clip((mu - p) / w, floor, 1.0)


def solve_quadratic(p, weights, floor: float) -> JunctionEval:
    """Minimise sum(alpha p) + 0.5 sum(w alpha^2) over A0.

    KKT gives alpha_i(mu) = clip((mu - p_i) / w_i, floor, 1) with mu chosen so
    that the weights sum to one. The sum is nondecreasing and piecewise
    linear in mu with kinks at p_i + floor w_i and p_i + w_i, so the root is
    bracketed by bisecting the sorted kinks and then solved exactly on the
    bracketing linear piece.
    """
    p = np.asarray(p, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = p.size
    _check_floor(n, floor)
    if np.any(w <= 0):
        raise ProblemError("quadratic weights must be > 0")
    if n * floor >= 1 - 1e-15:
        alpha = np.full(n, floor)
        mu = float(np.min(p + floor * w))  # every coordinate sits on its floor
        return JunctionEval(float(alpha @ p + 0.5 * (alpha * alpha) @ w), alpha, mu)

    kinks = np.sort(np.concatenate([p + floor * w, p + w]))
    sums = _clipped(kinks[:, None], p, w, floor).sum(axis=1)
    k = int(np.searchsorted(sums, 1.0, side="left"))
    k = min(max(k, 1), kinks.size - 1)
    lo, hi = kinks[k - 1], kinks[k]
    mu = 0.5 * (lo + hi)
    # exact solve on the linear piece: free coordinates are those strictly between their kinks
    free = (p + floor * w < mu) & (mu < p + w)
    if np.any(free):
        fixed = np.where(p[~free] + w[~free] <= mu, 1.0, floor)
        mu = (1.0 - fixed.sum() + np.sum(p[free] / w[free])) / np.sum(1.0 / w[free])
    else:
        mu = hi
    alpha = _clipped(mu, p, w, floor)
    if np.any(free):
        # push the rounding residue onto the free coordinates
        alpha[free] += (1.0 - alpha.sum()) / free.sum()
    value = float(alpha @ p + 0.5 * (alpha * alpha) @ w)
    return JunctionEval(value, alpha, float(mu))


def junction_hamiltonian(p, cost: JunctionCost) -> JunctionEval:
    if cost.mode == "linear":
        return solve_linear(p, cost.floor)
    return solve_quadratic(p, cost.quad_weights, cost.floor)


def h0_monotonicity_probe(p, q, cost: JunctionCost) -> bool:
    """H0(p) <= H0(q) for componentwise p <= q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p > q):
        raise ValueError("probe needs p <= q componentwise")
    return junction_hamiltonian(p, cost).value <= junction_hamiltonian(q, cost).value
