"""Symmetric exclusion process: exact generator checks and event-driven KMC.

The simulation attaches an exponential clock of rate h^{-2} sum_y W(x, y) to
each occupied vertex; on firing, a target is drawn proportionally to the
edge weights and the jump is suppressed if the target is occupied.  For
occupancy observables this is the same law as exchange dynamics, since
exchanges across equal occupancies are invisible.  Pending events are kept
in a binary heap and invalidated through per-vertex version stamps.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .errors import EventBudgetError
from .sampling import Configuration

Array = np.ndarray


def exchange(config: Configuration, x: int, y: int) -> Configuration:
    """Configuration with the occupancies of x and y exchanged."""
    if x == y:
        raise ValueError("exchange needs two distinct vertices")
    occ = config.occupancy.copy()
    occ[x], occ[y] = occ[y], occ[x]
    return Configuration(occ, config.particle_count)


def sep_generator_apply(graph, f: Callable[[Array], float],
                        eta: Configuration) -> float:
    """sum over unordered edges of W(x,y) (f(eta^{x,y}) - f(eta)).

    Explicit evaluation for diagnostics; refuse anything but small graphs.
    """
    n = graph.n_vertices
    if n > 20:
        raise ValueError("explicit SEP generator is a diagnostic for <= 20 vertices")
    occ = eta.occupancy
    base = float(f(occ))
    total = 0.0
    for x in range(n):
        nbrs, w = graph.neighbors(x)
        sel = nbrs > x
        for y, wxy in zip(nbrs[sel], w[sel]):
            if occ[x] == occ[y]:
                continue  # exchange is a no-op, exact zero contribution
            swapped = occ.copy()
            swapped[x], swapped[y] = swapped[y], swapped[x]
            total += wxy * (float(f(swapped)) - base)
    return total


def duality_check(graph, phi_vals: Array) -> float:
    """max over ALL configurations of |L^SEP <phi, sum eta delta> - <L^RW phi, .>|.

    Enumerates 2^V configurations; requires at most 12 vertices.
    """
    from .walkers import rw_generator_apply

    n = graph.n_vertices
    if n > 12:
        raise ValueError("duality enumeration limited to 12 vertices")
    phi_vals = np.asarray(phi_vals, dtype=float)
    gen_phi = rw_generator_apply(graph, phi_vals, rescale=1.0)

    def pairing(occ):
        return float(occ @ phi_vals)

    worst = 0.0
    for mask in range(1 << n):
        occ = np.array([(mask >> k) & 1 for k in range(n)], dtype=np.uint8)
        eta = Configuration.from_occupancy(occ)
        lhs = sep_generator_apply(graph, pairing, eta)
        rhs = float(occ @ gen_phi)
        worst = max(worst, abs(lhs - rhs))
    return worst


@dataclass
class Trajectory:
    """Observable pairings of one SEP run on a fixed time grid."""

    times: Array
    pairings: Dict[str, Array]
    particle_counts: Array
    n_events: int
    n_moves: int
    seed: int
    pairing_norm: float
    final: Configuration


def simulate(graph, eta0: Configuration, t_end: float, seed: int,
             observables: Dict[str, Array], rate_scale: Optional[float] = None,
             time_points: int = 51, max_events: float = 2e7) -> Trajectory:
    """Kinetic Monte Carlo run of the diffusively rescaled SEP.

    ``observables`` maps names to per-vertex value arrays v; the trajectory
    records <v, pi_t> = (1/norm) sum_x eta_t(x) v(x) on the time grid, with
    norm the graph's pairing normalisation (N, or N N' lifted).
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    n = graph.n_vertices
    occ = eta0.occupancy.copy()
    if occ.shape[0] != n:
        raise ValueError("configuration size does not match the graph")
    if rate_scale is None:
        rate_scale = graph.h ** (-2.0)
    rates = rate_scale * graph.rowsums()
    est = float(rates[occ == 1].sum()) * t_end
    if est > max_events:
        raise EventBudgetError(
            f"estimated {est:.3g} events exceed the budget {max_events:.3g}; "
            "shorten t_end, lower the rate scale, or raise max_events")

    cumw = np.cumsum(graph.weights)
    indptr, indices = graph.indptr, graph.indices
    norm = graph.pairing_norm
    names = list(observables)
    obs_vecs = [np.asarray(observables[k], dtype=float) for k in names]
    current = [float(v[occ == 1].sum()) / norm for v in obs_vecs]

    times = np.linspace(0.0, t_end, time_points)
    recorded = {k: np.empty(time_points) for k in names}
    counts = np.empty(time_points, dtype=np.int64)

    rng = np.random.Generator(np.random.PCG64(seed))
    versions = np.zeros(n, dtype=np.int64)
    heap = []
    for x in np.nonzero(occ)[0]:
        if rates[x] > 0:
            heapq.heappush(heap, (rng.exponential() / rates[x], int(x), 0))

    def record_until(limit, next_obs):
        while next_obs < time_points and times[next_obs] <= limit:
            for k, name in enumerate(names):
                recorded[name][next_obs] = current[k]
            counts[next_obs] = int(occ.sum())
            next_obs += 1
        return next_obs

    next_obs = record_until(0.0, 0)
    n_events = 0
    n_moves = 0
    while heap:
        t, x, ver = heapq.heappop(heap)
        if t > t_end:
            break
        if versions[x] != ver or occ[x] == 0:
            continue
        next_obs = record_until(t, next_obs)
        n_events += 1
        # draw the jump target proportionally to the row weights
        lo, hi = indptr[x], indptr[x + 1]
        base = cumw[lo - 1] if lo > 0 else 0.0
        target = base + rng.uniform() * (cumw[hi - 1] - base)
        pos = min(np.searchsorted(cumw[lo:hi], target, side="right") + lo, hi - 1)
        y = int(indices[pos])
        if occ[y] == 1:
            heapq.heappush(heap, (t + rng.exponential() / rates[x], x, ver))
            continue
        occ[x] = 0
        occ[y] = 1
        n_moves += 1
        versions[x] += 1
        versions[y] += 1
        for k in range(len(names)):
            current[k] += (obs_vecs[k][y] - obs_vecs[k][x]) / norm
        if rates[y] > 0:
            heapq.heappush(heap, (t + rng.exponential() / rates[y], int(y),
                                  int(versions[y])))
    record_until(t_end, next_obs)
    return Trajectory(times, recorded, counts, n_events, n_moves, seed, norm,
                      Configuration.from_occupancy(occ))


# ---------------------------------------------------------------------------
# Dynkin martingale diagnostics


@dataclass
class MartingaleDiagnostics:
    times: Array
    residual: Array
    qv_bound: float


def dynkin_observables(graph, phi_vals: Array,
                       rate_scale: Optional[float] = None) -> Dict[str, Array]:
    """Observable pair (phi, rescaled generator of phi) for a Dynkin run."""
    from .walkers import rw_generator_apply

    gen = rw_generator_apply(graph, np.asarray(phi_vals, dtype=float),
                             rescale=rate_scale)
    return {"phi": np.asarray(phi_vals, dtype=float), "gen_phi": gen}


def dynkin_qv_bound(graph, phi_vals: Array,
                    rate_scale: Optional[float] = None) -> float:
    """(1/N^2) sum_y |phi(y) (h^{-2} L phi)(y)|."""
    from .walkers import rw_generator_apply

    phi_vals = np.asarray(phi_vals, dtype=float)
    gen = rw_generator_apply(graph, phi_vals, rescale=rate_scale)
    return float(np.abs(phi_vals * gen).sum()) / graph.pairing_norm ** 2


def dynkin_diagnostics(traj: Trajectory, graph, phi_vals: Array,
                       phi_name: str = "phi",
                       gen_name: str = "gen_phi") -> MartingaleDiagnostics:
    """Residual M_t = <phi, pi_t> - <phi, pi_0> - int_0^t <Lphi, pi_s> ds.

    The time integral uses the trapezoid rule on the observation grid.
    """
    p = traj.pairings[phi_name]
    g = traj.pairings[gen_name]
    dt = np.diff(traj.times)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * dt * (g[1:] + g[:-1]))])
    residual = p - p[0] - integral
    return MartingaleDiagnostics(traj.times, residual,
                                 dynkin_qv_bound(graph, phi_vals))


def suggested_grid_step(graph, phi_vals: Array,
                        rate_scale: Optional[float] = None,
                        budget: float = 0.1) -> float:
    """Grid step keeping |drift| * step below the budget (trapezoid bias)."""
    from .walkers import rw_generator_apply

    gen = rw_generator_apply(graph, np.asarray(phi_vals, dtype=float),
                             rescale=rate_scale)
    peak = float(np.abs(gen).max(initial=0.0))
    return budget / peak if peak > 0 else np.inf


def save_trajectory(traj: Trajectory, path_csv, replica_id: int = 0,
                    metadata: Optional[dict] = None):
    """Trajectory CSV (time, function id, pairing, replica, particle count)
    plus a run-metadata JSON next to it."""
    import csv as csv_mod
    import json

    path_csv = str(path_csv)
    with open(path_csv, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["time", "function", "pairing", "replica",
                         "particle_count"])
        for name in traj.pairings:
            for t, v, c in zip(traj.times, traj.pairings[name],
                               traj.particle_counts):
                writer.writerow([repr(float(t)), name, repr(float(v)),
                                 replica_id, int(c)])
    meta = {"seed": traj.seed, "pairing_norm": traj.pairing_norm,
            "n_events": traj.n_events, "n_moves": traj.n_moves,
            "t_end": float(traj.times[-1])}
    meta.update(metadata or {})
    with open(path_csv.rsplit(".", 1)[0] + "_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
