"""Euler scheme for the controlled diffusion on the junction.

On edge i the radial coordinate follows

    x' = x + b_i(x, k) dt + sigma_i(x) sqrt(dt) xi.

When x' < 0 the path has crossed the vertex: it is reflected to |x'|, the
local time grows by 2|x'| (so that x_new = x' + dl, the discrete form of
dx = sigma dW + b dt + dl) and the new edge is drawn from the vertex weights
alpha in force at the left end of the step. A step that ends on the edge
may still have touched the vertex in between; that happens with the
Brownian-bridge probability exp(-2 x x' / (sigma^2 dt)), and such a path is
redispatched the same way (without local time, whose mean is already carried
by the reflection increments). Edge cost accrues h_i dt, vertex
cost h0(alpha) dl, and g(X_T) is paid at the horizon.

Every path owns a Philox stream keyed by the seed with the path index in
the high counter word, so a path is reproducible on its own regardless of
how the ensemble is batched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .pde import FeedbackPolicy
from .problem import ControlProblem, EdgePoint

_BLOCK_STEPS = 512
_CHUNK_FLOATS = 1 << 23


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RngStream:
    seed: int
    index: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed, counter=[0, 0, 0, self.index]))


@dataclass
class PathSample:
    times: np.ndarray
    edges: np.ndarray  # 1-based edge of each retained state
    xs: np.ndarray
    local_time: np.ndarray
    edge_cost: float
    junction_cost: float
    terminal_cost: float
    hits: int
    index: int = 0

    @property
    def total(self) -> float:
        return self.edge_cost + self.junction_cost + self.terminal_cost

    def state(self, n: int) -> EdgePoint:
        return EdgePoint(int(self.edges[n]), float(self.xs[n]))


@dataclass
class Ensemble:
    seed: int
    dt: float
    t0: float
    t_end: float
    start: EdgePoint
    edge_cost: np.ndarray
    junction_cost: np.ndarray
    terminal_cost: np.ndarray
    local_time: np.ndarray
    hits: np.ndarray
    sup_x2: np.ndarray
    final_edge: np.ndarray  # 0-based
    final_x: np.ndarray
    stop_time: np.ndarray
    occupancy: dict[float, np.ndarray] = field(default_factory=dict)
    band: dict[float, np.ndarray] = field(default_factory=dict)
    paths: list[PathSample] = field(default_factory=list)

    @property
    def total(self) -> np.ndarray:
        return self.edge_cost + self.junction_cost + self.terminal_cost

    @property
    def n_paths(self) -> int:
        return self.edge_cost.size

    def __len__(self):
        return self.n_paths


class _EdgeTable:
    """Per-edge coefficient parameters laid out for gathering by edge index.

    Both families reduce to
        b = drift + ksin * k sin(x)
        h = cost + theta k^2 + gamma sin(x) + lam k + rho
    """

    names = ("sigma", "drift", "ksin", "cost", "theta", "gamma", "lam", "rho")

    def __init__(self, problem: ControlProblem):
        cols = {n: [] for n in self.names}
        for e in problem.edges:
            cols["sigma"].append(e.sigma)
            cols["drift"].append(e.drift)
            cols["ksin"].append(1.0 if e.family == "sin_quadratic" else 0.0)
            for n in ("cost", "theta", "gamma", "lam", "rho"):
                cols[n].append(getattr(e, n))
        self.arrays = {n: np.asarray(v, dtype=float) for n, v in cols.items()}
        self.uses_sin = bool(np.any(self.arrays["ksin"]) or np.any(self.arrays["gamma"]))
        self.sigma0_sq = np.array([float(e.sigma_at(0.0)) ** 2 for e in problem.edges])



def _n_steps(t0: float, t1: float, dt: float) -> int:
    n = int(round((t1 - t0) / dt))
    if n < 0 or abs(n * dt - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise ValueError(f"dt = {dt} does not divide the interval [{t0}, {t1}]")
    return n


@njit(cache=True)
def _advance_block(Z, U, lev, t_first, dt, edge, x, l, ec, jc, hits, supx, alive, stop_time,
                   controls, inv_dx, h0_levels, cum_alpha, tab, s0sq_tab, uses_sin,
                   occ_eps, occ_acc, band_eps, band_acc, stop_on_hit, record, rec_edge, rec_x, rec_l, rec_col):
    """Advance every path through one block of pre-drawn normals Z and uniforms U.

    tab rows follow _EdgeTable.names: sigma, drift, ksin, cost, theta, gamma, lam, rho.
    """
    n, nb = Z.shape
    n_nodes = controls.shape[2]
    n_edges = cum_alpha.shape[1]
    sqdt = np.sqrt(dt)
    for r in range(n):
        e = edge[r]
        xr = x[r]
        for s in range(nb):
            if alive[r]:
                m = lev[s]
                for q in range(occ_eps.size):
                    if xr < occ_eps[q]:
                        occ_acc[q, r] += 1.0
                for q in range(band_eps.size):
                    if xr <= band_eps[q]:
                        band_acc[q, r] += s0sq_tab[e]
                j = int(np.rint(xr * inv_dx))
                j = min(max(j, 0), n_nodes - 1)
                k = controls[e, m, j]
                sig = tab[0, e]
                sx = np.sin(xr) if uses_sin else 0.0
                drift = tab[1, e] + tab[2, e] * k * sx
                h = tab[3, e] + tab[4, e] * k * k + tab[5, e] * sx + tab[6, e] * k + tab[7, e]
                xn = xr + drift * dt + sig * sqdt * Z[r, s]
                ec[r] += h * dt
                u = U[r, s]
                if xn < 0.0:
                    dl = -2.0 * xn
                    l[r] += dl
                    jc[r] += h0_levels[m] * dl
                    xn = -xn
                    p_hit = 1.0
                else:
                    # a step ending on the edge may still have touched the vertex
                    var = sig * sig * dt
                    p_hit = np.exp(-2.0 * xr * xn / var) if var > 0.0 else 0.0
                if u < p_hit:
                    hits[r] += 1
                    v = u / p_hit
                    ne = 0
                    while ne < n_edges - 1 and cum_alpha[m, ne] <= v:
                        ne += 1
                    e = ne
                    if stop_on_hit:
                        stop_time[r] = t_first + (s + 1) * dt
                        alive[r] = False
                xr = xn
                if xr > supx[r]:
                    supx[r] = xr
            if record:
                rec_edge[r, rec_col + s] = e
                rec_x[r, rec_col + s] = xr
                rec_l[r, rec_col + s] = l[r]
        edge[r] = e
        x[r] = xr


def _run_chunk(problem, policy, table, start, t0, dt, n_steps, seed, indices, *, terminal,
               stop_on_hit, occupancy_eps, band_eps, record):
    n = indices.size
    gens = [RngStream(seed, int(k)).generator() for k in indices]

    edge = np.full(n, start.index, dtype=np.int64)
    x = np.full(n, float(start.x))
    l = np.zeros(n)
    ec = np.zeros(n)
    jc = np.zeros(n)
    hits = np.zeros(n, dtype=np.int64)
    supx = x.copy()
    alive = np.ones(n, dtype=bool)
    stop_time = np.full(n, t0 + n_steps * dt)
    occ_eps = np.asarray(occupancy_eps, dtype=float)
    band_eps = np.asarray(band_eps, dtype=float)
    occ = np.zeros((occ_eps.size, n))
    band = np.zeros((band_eps.size, n))
    tab = np.stack([table.arrays[name] for name in table.names])
    h0_levels = np.array([problem.junction.cost(a) for a in policy.junction_weights])
    cum_alpha = np.ascontiguousarray(np.cumsum(policy.junction_weights, axis=1))
    levels = np.asarray(policy.level(t0 + dt * np.arange(n_steps)), dtype=np.int64)
    controls = np.ascontiguousarray(policy.edge_controls, dtype=float)
    if record:
        tr_edge = np.empty((n, n_steps + 1), dtype=np.int64)
        tr_x = np.empty((n, n_steps + 1))
        tr_l = np.empty((n, n_steps + 1))
        tr_edge[:, 0], tr_x[:, 0], tr_l[:, 0] = edge, x, l
    else:
        tr_edge = np.empty((0, 0), dtype=np.int64)
        tr_x = tr_l = np.empty((0, 0))

    for b0 in range(0, n_steps, _BLOCK_STEPS):
        nb = min(_BLOCK_STEPS, n_steps - b0)
        Z = np.empty((n, nb))
        U = np.empty((n, nb))
        for r, g in enumerate(gens):
            Z[r] = g.standard_normal(nb)
            U[r] = g.random(nb)
        _advance_block(Z, U, levels[b0:b0 + nb], t0 + b0 * dt, dt, edge, x, l, ec, jc, hits, supx, alive,
                       stop_time, controls, 1.0 / policy.dx, h0_levels, cum_alpha, tab, table.sigma0_sq,
                       table.uses_sin, occ_eps, occ, band_eps, band, stop_on_hit, record,
                       tr_edge, tr_x, tr_l, b0 + 1)
        if not np.all(np.isfinite(x)):
            bad = int(indices[np.argmax(~np.isfinite(x))])
            raise SimulationError(f"path {bad} left the finite range before t = {t0 + (b0 + nb) * dt:g}")

    occ = {eps: occ[q] for q, eps in enumerate(occupancy_eps)}
    band = {eps: band[q] for q, eps in enumerate(band_eps)}
    tc = problem.terminal.at_edges(edge, x) if terminal else np.zeros(n)
    out = dict(
        edge_cost=ec, junction_cost=jc, terminal_cost=np.asarray(tc, dtype=float), local_time=l, hits=hits,
        sup_x2=supx * supx, final_edge=edge, final_x=x, stop_time=stop_time,
        occupancy={eps: acc * dt for eps, acc in occ.items()},
        band={eps: acc * dt / (2 * eps) for eps, acc in band.items()},
    )
    if record:
        times = t0 + dt * np.arange(n_steps + 1)
        out["paths"] = [
            PathSample(times, tr_edge[r] + 1, tr_x[r], tr_l[r], float(ec[r]), float(jc[r]), float(out["terminal_cost"][r]),
                       int(hits[r]), int(indices[r]))
            for r in range(n)
        ]
    return out


def simulate_ensemble(problem: ControlProblem, policy: FeedbackPolicy, start: EdgePoint, dt: float,
                      n_paths: int, seed: int, *, t0: float | None = None, until: float | None = None,
                      stop_on_hit: bool = False, occupancy_eps: Sequence[float] = (),
                      band_eps: Sequence[float] = (), record: bool = False,
                      first_path: int = 0) -> Ensemble:
    """Simulate ``n_paths`` independent paths from ``start`` at time ``t0``.

    ``until`` stops the paths at an earlier deterministic time (no terminal
    cost is paid then); ``stop_on_hit`` additionally freezes each path at the
    end of the first step that reaches the vertex.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if start.edge > problem.edge_count:
        raise ValueError(f"start edge {start.edge} > {problem.edge_count}")
    T = problem.horizon.T
    t0 = problem.horizon.t0 if t0 is None else t0
    t_end = T if until is None else until
    if t0 < policy.t0 - 1e-12 or t_end > policy.T + 1e-9:
        raise ValueError("policy does not cover the simulated time range")
    n_steps = _n_steps(t0, t_end, dt)
    terminal = abs(t_end - T) <= 1e-12 and not stop_on_hit
    table = _EdgeTable(problem)

    chunk = max(1, min(n_paths, _CHUNK_FLOATS // max(1, 2 * min(n_steps, _BLOCK_STEPS))))
    parts = []
    for c0 in range(0, n_paths, chunk):
        idx = np.arange(first_path + c0, first_path + min(n_paths, c0 + chunk))
        parts.append(_run_chunk(problem, policy, table, start, t0, dt, n_steps, seed, idx,
                                terminal=terminal, stop_on_hit=stop_on_hit,
                                occupancy_eps=tuple(occupancy_eps), band_eps=tuple(band_eps), record=record))

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    return Ensemble(
        seed=seed, dt=dt, t0=t0, t_end=t_end, start=start,
        edge_cost=cat("edge_cost"), junction_cost=cat("junction_cost"), terminal_cost=cat("terminal_cost"),
        local_time=cat("local_time"), hits=cat("hits"), sup_x2=cat("sup_x2"),
        final_edge=cat("final_edge"), final_x=cat("final_x"), stop_time=cat("stop_time"),
        occupancy={eps: np.concatenate([p["occupancy"][eps] for p in parts]) for eps in occupancy_eps},
        band={eps: np.concatenate([p["band"][eps] for p in parts]) for eps in band_eps},
        paths=[q for p in parts for q in p.get("paths", [])],
    )


def simulate_path(problem: ControlProblem, policy: FeedbackPolicy, start: EdgePoint, dt: float,
                  stream: RngStream, t0: float | None = None) -> PathSample:
    ens = simulate_ensemble(problem, policy, start, dt, 1, stream.seed, t0=t0, record=True,
                            first_path=stream.index)
    return ens.paths[0]


def band_local_time(path: PathSample, eps: float, problem: ControlProblem) -> float:
    """Occupation-band estimate of l(T): (1 / 2eps) sum_j sigma_j(0)^2 |{s : 0 <= x(s) <= eps, edge j}|."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    s0sq = np.array([float(e.sigma_at(0.0)) ** 2 for e in problem.edges])
    dt = np.diff(path.times)
    inside = path.xs[:-1] <= eps
    return float(np.sum(dt * inside * s0sq[path.edges[:-1] - 1]) / (2 * eps))


def occupancy_fraction(ensemble, eps: float) -> float:
    """Mean over paths of the time spent below ``eps``."""
    if isinstance(ensemble, Ensemble):
        if eps in ensemble.occupancy:
            return float(np.mean(ensemble.occupancy[eps]))
        paths = ensemble.paths
        if not paths:
            raise ValueError(f"ensemble tracked no occupancy for eps = {eps} and kept no traces")
    else:
        paths = list(ensemble)
    if not paths:
        raise ValueError("empty ensemble")
    vals = [float(np.sum(np.diff(p.times) * (p.xs[:-1] < eps))) for p in paths]
    return float(np.mean(vals))
