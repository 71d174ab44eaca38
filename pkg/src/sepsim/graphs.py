"""Neighbourhood graphs with symmetric kernel weights, and their lifts.

Construction uses a uniform cell list with toroidal wrap (cell edge >= h), so
radius queries touch only adjacent cells.  Edges include ties at d = h.
Weights carry an explicit 1/N (lifted: 1/(N N')) factor so that the
diffusively rescaled generator stays O(1) as N grows.

For the large sweeps the module offers matrix-free accumulation of the
density estimator and of the generator applied to a fixed test function;
the lifted variants delegate their inner loops to ``_accel``.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from .geometry import Potential, Torus
from .kernels import Kernel, ProductKernel
from .sampling import LiftedCloud, PointCloud

log = logging.getLogger(__name__)

Array = np.ndarray

VARIANTS = ("gibbs_sqrt", "alpha_estimator", "lifted", "lifted_alpha")


@dataclass
class WeightScheme:
    """Choice of symmetric edge weights; ``alpha`` is used by the estimator
    variants."""

    variant: str = "gibbs_sqrt"
    alpha: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise KeyError(f"unknown weight scheme {self.variant!r}; one of {VARIANTS}")

    @property
    def lifted(self) -> bool:
        return self.variant.startswith("lifted")

    @property
    def uses_estimator(self) -> bool:
        return self.variant in ("alpha_estimator", "lifted_alpha")


# ---------------------------------------------------------------------------
# pair sweeps


def _cells_per_axis(torus: Torus, h: float) -> np.ndarray:
    ncells = np.maximum(np.floor(torus.sides / h).astype(int), 1)
    # guard against float division putting the cell edge below h
    for i in range(torus.dim):
        while ncells[i] > 1 and torus.sides[i] / ncells[i] < h:
            ncells[i] -= 1
    return ncells


def _pair_blocks_brute(points: Array, torus: Torus, h: float, chunk: int):
    n = points.shape[0]
    rows_per = max(1, chunk // max(n, 1))
    for r0 in range(0, n, rows_per):
        rows = points[r0:r0 + rows_per]
        d = torus.distance(rows[:, None, :], points[None, :, :])
        gi = r0 + np.arange(rows.shape[0])
        mask = (d <= h) & (np.arange(n)[None, :] > gi[:, None])
        ai, aj = np.nonzero(mask)
        if ai.size:
            yield gi[ai], aj, d[ai, aj]


def _pair_blocks(points: Array, torus: Torus, h: float, chunk: int = 4_000_000):
    """Yield (i, j, d) arrays covering every unordered pair with d <= h once."""
    n = points.shape[0]
    ncells = _cells_per_axis(torus, h)
    if n < 512 or np.any(ncells < 3):
        yield from _pair_blocks_brute(points, torus, h, chunk)
        return
    sizes = torus.sides / ncells
    ci = np.minimum((points / sizes).astype(int), ncells - 1)
    flat = np.ravel_multi_index(tuple(ci.T), tuple(ncells))
    order = np.argsort(flat, kind="stable").astype(np.int64)
    sp = points[order]
    counts = np.bincount(flat, minlength=int(np.prod(ncells)))
    starts = np.concatenate([[0], np.cumsum(counts)])

    # canonical half-stencil: visit each unordered cell pair exactly once
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=torus.dim)
               if o > (0,) * torus.dim]

    for cell in np.ndindex(*ncells):
        c = int(np.ravel_multi_index(cell, tuple(ncells)))
        a0, a1 = starts[c], starts[c + 1]
        if a0 == a1:
            continue
        a_pts = sp[a0:a1]
        rows_per = max(1, chunk // max(a1 - a0, 1))
        # within-cell pairs, upper triangle
        for r0 in range(0, a1 - a0, rows_per):
            rows = a_pts[r0:r0 + rows_per]
            d = torus.distance(rows[:, None, :], a_pts[None, :, :])
            loc_i = r0 + np.arange(rows.shape[0])
            mask = (d <= h) & (np.arange(a1 - a0)[None, :] > loc_i[:, None])
            ai, aj = np.nonzero(mask)
            if ai.size:
                yield order[a0 + loc_i[ai]], order[a0 + aj], d[ai, aj]
        for o in offsets:
            c2 = tuple((np.asarray(cell) + o) % ncells)
            c2f = int(np.ravel_multi_index(c2, tuple(ncells)))
            b0, b1 = starts[c2f], starts[c2f + 1]
            if b0 == b1:
                continue
            b_pts = sp[b0:b1]
            rows_per = max(1, chunk // max(b1 - b0, 1))
            for r0 in range(0, a1 - a0, rows_per):
                rows = a_pts[r0:r0 + rows_per]
                d = torus.distance(rows[:, None, :], b_pts[None, :, :])
                mask = d <= h
                ai, aj = np.nonzero(mask)
                if ai.size:
                    yield order[a0 + r0 + ai], order[b0 + aj], d[ai, aj]


def density_field(cloud: PointCloud, kernel: Kernel, h: float) -> Array:
    """kbar at every cloud point, matrix-free (self term included)."""
    n = cloud.count
    acc = np.full(n, float(kernel.profile(0.0)))
    for gi, gj, d in _pair_blocks(cloud.points, cloud.torus, h):
        y = kernel.profile(d / h)
        acc += np.bincount(gi, weights=y, minlength=n)
        acc += np.bincount(gj, weights=y, minlength=n)
    return acc * h ** (-cloud.torus.dim) / cloud.level


def rw_apply_streamed(cloud: PointCloud, kernel: Kernel, scheme: WeightScheme,
                      h: float, phi_vals: Array, potential: Potential,
                      kbar: Optional[Array] = None, rescale: Optional[float] = None):
    """h^{-2} L^RW phi at every vertex without materialising the graph.

    Returns (applied, kbar); kbar is None for the Gibbs scheme.
    """
    if scheme.lifted:
        raise ValueError("use lifted_rw_apply_streamed for lifted schemes")
    n = cloud.count
    if scheme.uses_estimator and kbar is None:
        kbar = density_field(cloud, kernel, h)
    if scheme.uses_estimator and np.any(kbar == 0.0):
        bad = np.nonzero(kbar == 0.0)[0][:5]
        raise ValueError(f"estimator kbar vanishes at vertices {bad.tolist()}; "
                         "weights undefined (kernel with k(0) = 0 on isolated point?)")
    if rescale is None:
        rescale = h ** (-2.0)
    scale = h ** (-cloud.torus.dim) / cloud.level
    ew = None
    if scheme.variant == "gibbs_sqrt":
        ew = np.exp(0.5 * potential.value(cloud.points))
    dens = kbar ** (-scheme.alpha) if scheme.uses_estimator else None
    acc = np.zeros(n)
    for gi, gj, d in _pair_blocks(cloud.points, cloud.torus, h):
        y = kernel.profile(d / h) * scale
        if scheme.variant == "gibbs_sqrt":
            w = y * ew[gi] * ew[gj]
        else:
            w = y * dens[gi] * dens[gj]
        diff = phi_vals[gj] - phi_vals[gi]
        acc += np.bincount(gi, weights=w * diff, minlength=n)
        acc -= np.bincount(gj, weights=w * diff, minlength=n)
    return rescale * acc, kbar


# ---------------------------------------------------------------------------
# materialised base graphs


@dataclass
class NeighbourhoodGraph:
    """Compressed sparse adjacency with symmetric weights."""

    cloud: PointCloud
    scheme: WeightScheme
    kernel_name: str
    h: float
    indptr: Array
    indices: Array
    weights: Array
    _rowsums: Optional[Array] = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self) -> int:
        return self.indices.shape[0] // 2

    @property
    def level(self) -> int:
        return self.cloud.level

    @property
    def pairing_norm(self) -> float:
        return float(self.cloud.level)

    def rowsums(self) -> Array:
        if self._rowsums is None:
            rows = np.repeat(np.arange(self.n_vertices), np.diff(self.indptr))
            self._rowsums = np.bincount(rows, weights=self.weights,
                                        minlength=self.n_vertices)
        return self._rowsums

    def neighbors(self, i: int):
        sl = slice(self.indptr[i], self.indptr[i + 1])
        return self.indices[sl], self.weights[sl]

    def weight(self, i: int, j: int) -> float:
        nbrs, w = self.neighbors(i)
        k = np.searchsorted(nbrs, j)
        if k < nbrs.shape[0] and nbrs[k] == j:
            return float(w[k])
        return 0.0


def _assemble_csr(n: int, gi: Array, gj: Array, w: Array):
    src = np.concatenate([gi, gj])
    dst = np.concatenate([gj, gi])
    ww = np.concatenate([w, w])
    order = np.lexsort((dst, src))
    src, dst, ww = src[order], dst[order], ww[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst.astype(np.int32), ww


def build_graph(cloud: PointCloud, kernel: Kernel, scheme: WeightScheme,
                h: float) -> NeighbourhoodGraph:
    """Materialise the neighbourhood graph under the given weight scheme."""
    torus = cloud.torus
    if not 0 < h < torus.half_min_side:
        raise ValueError("need 0 < h < half the shortest side")
    if scheme.lifted:
        raise ValueError("lifted schemes require build_lifted_graph")
    kbar = None
    dens = None
    if scheme.uses_estimator:
        kbar = density_field(cloud, kernel, h)
        if np.any(kbar == 0.0):
            bad = np.nonzero(kbar == 0.0)[0][:5]
            raise ValueError(
                f"estimator kbar vanishes at vertices {bad.tolist()}; "
                "weights undefined (kernel with k(0) = 0 on isolated point?)")
        dens = kbar ** (-scheme.alpha)
    else:
        ew = np.exp(0.5 * potential_values(cloud))
    scale = h ** (-torus.dim) / cloud.level
    gis, gjs, ws = [], [], []
    for gi, gj, d in _pair_blocks(cloud.points, torus, h):
        y = kernel.profile(d / h) * scale
        if scheme.uses_estimator:
            w = y * dens[gi] * dens[gj]
        else:
            w = y * ew[gi] * ew[gj]
        gis.append(gi.astype(np.int32))
        gjs.append(gj.astype(np.int32))
        ws.append(w)
    n = cloud.count
    if gis:
        gi = np.concatenate(gis)
        gj = np.concatenate(gjs)
        w = np.concatenate(ws)
    else:
        gi = np.zeros(0, dtype=np.int32)
        gj = np.zeros(0, dtype=np.int32)
        w = np.zeros(0)
    indptr, indices, weights = _assemble_csr(n, gi, gj, w)
    graph = NeighbourhoodGraph(cloud, scheme, kernel.name, h, indptr, indices, weights)
    if n:
        log.debug("graph N=%d n=%d edges=%d max_degree=%d",
                  cloud.level, n, graph.n_edges, int(np.diff(indptr).max()))
    return graph


def potential_values(cloud: PointCloud) -> Array:
    return cloud.potential.value(cloud.points)


def density_diagnostic(graph, window) -> float:
    """#{vertices in the box window} / N (N the cloud level).

    Accepts a graph or a bare cloud; the window is a half-open box (lo, hi).
    """
    lo, hi = window
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pts = getattr(graph, "cloud", graph).points
    inside = np.all((pts >= lo) & (pts < hi), axis=1)
    return float(inside.sum()) / graph.level


def save_graph(graph: NeighbourhoodGraph, path_csv):
    """Edge list CSV (i < j) plus a JSON header."""
    path_csv = str(path_csv)
    with open(path_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "weight"])
        for i in range(graph.n_vertices):
            nbrs, w = graph.neighbors(i)
            sel = nbrs > i
            for j, wij in zip(nbrs[sel], w[sel]):
                writer.writerow([i, int(j), repr(float(wij))])
    header = {
        "N": graph.level,
        "h": graph.h,
        "scheme": graph.scheme.variant,
        "alpha": graph.scheme.alpha,
        "kernel": graph.kernel_name,
        "seed": graph.cloud.seed,
        "n_vertices": graph.n_vertices,
    }
    with open(path_csv.rsplit(".", 1)[0] + "_header.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_graph(path_csv, cloud: PointCloud) -> NeighbourhoodGraph:
    path_csv = str(path_csv)
    with open(path_csv.rsplit(".", 1)[0] + "_header.json") as fh:
        header = json.load(fh)
    gi, gj, w = [], [], []
    with open(path_csv, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            gi.append(int(row[0]))
            gj.append(int(row[1]))
            w.append(float(row[2]))
    indptr, indices, weights = _assemble_csr(
        header["n_vertices"],
        np.asarray(gi, dtype=np.int32), np.asarray(gj, dtype=np.int32),
        np.asarray(w))
    scheme = WeightScheme(header["scheme"], header.get("alpha", 0.5))
    return NeighbourhoodGraph(cloud, scheme, header["kernel"], header["h"],
                              indptr, indices, weights)


# ---------------------------------------------------------------------------
# lifted graphs


@dataclass
class CompositeLayout:
    """Indexing of composite vertices (base point, fibre angle).

    Composite ids run over base points in order, fibre angles sorted
    ascending within each fibre.
    """

    offsets: Array          # (n_base + 1,)
    angles: Array           # flat sorted angles
    base_index: Array       # composite -> base point index

    @property
    def count(self) -> int:
        return self.angles.shape[0]


def composite_layout(lifted: LiftedCloud) -> CompositeLayout:
    sizes = np.array([f.shape[0] for f in lifted.fibre_points], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    angles = np.concatenate([np.sort(f) for f in lifted.fibre_points]) \
        if lifted.fibre_points else np.zeros(0)
    base_index = np.repeat(np.arange(len(sizes)), sizes)
    return CompositeLayout(offsets, angles, base_index)


@dataclass
class LiftedGraph:
    """Neighbourhood graph on composite vertices of a lifted cloud."""

    lifted: LiftedCloud
    layout: CompositeLayout
    scheme: WeightScheme
    kernel_name: str
    h: float
    h_fibre: float
    indptr: Array
    indices: Array
    weights: Array
    _rowsums: Optional[Array] = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self) -> int:
        return self.indices.shape[0] // 2

    @property
    def level(self) -> int:
        return self.lifted.base.level

    @property
    def pairing_norm(self) -> float:
        return float(self.lifted.base.level * self.lifted.fibre_level)

    # shared duck-typed surface with NeighbourhoodGraph
    rowsums = NeighbourhoodGraph.rowsums
    neighbors = NeighbourhoodGraph.neighbors
    weight = NeighbourhoodGraph.weight

    @property
    def cloud(self):
        return self.lifted.base


def _base_pair_arrays(cloud: PointCloud, h: float):
    gis, gjs, ds = [], [], []
    for gi, gj, d in _pair_blocks(cloud.points, cloud.torus, h):
        gis.append(gi)
        gjs.append(gj)
        ds.append(d)
    if gis:
        return (np.concatenate(gis).astype(np.int64),
                np.concatenate(gjs).astype(np.int64),
                np.concatenate(ds))
    return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))


def _circ_dist_matrix(u: Array, q: Array, beta: float) -> Array:
    d = np.mod(u[:, None] - q[None, :], beta)
    return np.minimum(d, beta - d)


def build_lifted_graph(lifted: LiftedCloud, pk: ProductKernel,
                       scheme: WeightScheme, h: float, hp: float) -> LiftedGraph:
    """Materialise the lifted graph (intended for moderate sizes).

    Edge rule: base distance <= h and transported fibre distance <= hp.
    """
    cloud, bundle = lifted.base, lifted.bundle
    torus = cloud.torus
    if not 0 < h < torus.half_min_side:
        raise ValueError("need 0 < h < half the shortest side")
    if not 0 < hp < bundle.fibre_circumference / 2:
        raise ValueError("need 0 < h' < half the fibre circumference")
    if not scheme.lifted:
        raise ValueError("base schemes require build_graph")
    layout = composite_layout(lifted)
    beta = bundle.fibre_circumference
    A = bundle.connection
    norm = h ** (-torus.dim) * hp ** (-1.0) / (cloud.level * lifted.fibre_level)

    bi, bj, bd = _base_pair_arrays(cloud, h)
    # include the intra-fibre pairs (i == j, zero displacement)
    n_base = cloud.count
    pair_i = np.concatenate([bi, np.arange(n_base, dtype=np.int64)])
    pair_j = np.concatenate([bj, np.arange(n_base, dtype=np.int64)])
    pair_d = np.concatenate([bd, np.zeros(n_base)])
    shifts = -cloud.torus.displacement(cloud.points[pair_i],
                                       cloud.points[pair_j]) @ A

    sorted_angles = [layout.angles[layout.offsets[i]:layout.offsets[i + 1]]
                     for i in range(n_base)]

    kbar = None
    if scheme.uses_estimator:
        # the i == j pair matrix already covers every intra-fibre target,
        # diagonal self term included
        kbar = np.zeros(layout.count)
        for i, j, d, s in zip(pair_i, pair_j, pair_d, shifts):
            u, q = sorted_angles[i], sorted_angles[j]
            if u.size == 0 or q.size == 0:
                continue
            dm = _circ_dist_matrix(np.mod(u + s, beta), q, beta)
            kv = pk.profile2(d / h, dm / hp)
            kbar[layout.offsets[i]:layout.offsets[i] + u.size] += kv.sum(axis=1)
            if i != j:
                kbar[layout.offsets[j]:layout.offsets[j] + q.size] += kv.sum(axis=0)
        kbar *= norm
        if np.any(kbar == 0.0):
            raise ValueError("lifted estimator vanishes at some composite vertex")
    dens = kbar ** (-scheme.alpha) if kbar is not None else None
    eu = np.exp(0.5 * cloud.potential.value(cloud.points))

    srcs, dsts, ws = [], [], []
    for i, j, d, s in zip(pair_i, pair_j, pair_d, shifts):
        u, q = sorted_angles[i], sorted_angles[j]
        if u.size == 0 or q.size == 0:
            continue
        dm = _circ_dist_matrix(np.mod(u + s, beta), q, beta)
        mask = dm <= hp
        if i == j:
            mask &= np.triu(np.ones_like(mask, dtype=bool), k=1)
        ai, bjx = np.nonzero(mask)
        if ai.size == 0:
            continue
        ca = layout.offsets[i] + ai
        cb = layout.offsets[j] + bjx
        kv = pk.profile2(d / h, dm[ai, bjx] / hp) * norm
        if scheme.variant == "lifted":
            w = kv * eu[i] * eu[j]
        else:
            w = kv * dens[ca] * dens[cb]
        srcs.append(ca)
        dsts.append(cb)
        ws.append(w)
    if srcs:
        src = np.concatenate(srcs)
        dst = np.concatenate(dsts)
        w = np.concatenate(ws)
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
        w = np.zeros(0)
    indptr, indices, weights = _assemble_csr(layout.count, src, dst, w)
    return LiftedGraph(lifted, layout, scheme, pk.name, h, hp,
                       indptr, indices, weights)


# ---------------------------------------------------------------------------
# streamed lifted sweeps (separable kernels with indicator fibre factor)


def _directed_base_structure(lifted: LiftedCloud, h: float, base_kernel: Kernel,
                             fold: Optional[Array] = None):
    """Directed base adjacency (self edges included) for the numba sweeps."""
    cloud = lifted.base
    n = cloud.count
    bi, bj, bd = _base_pair_arrays(cloud, h)
    src = np.concatenate([bi, bj, np.arange(n, dtype=np.int64)])
    dst = np.concatenate([bj, bi, np.arange(n, dtype=np.int64)])
    dd = np.concatenate([bd, bd, np.zeros(n)])
    disp = cloud.torus.displacement(cloud.points[src], cloud.points[dst])
    shift = -(disp @ lifted.bundle.connection)
    kval = base_kernel.profile(dd / h)
    if fold is not None:
        kval = kval * fold[dst]
    order = np.lexsort((dst, src))
    src, dst, kval, shift = src[order], dst[order], kval[order], shift[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return (indptr, np.ascontiguousarray(src), np.ascontiguousarray(dst),
            np.ascontiguousarray(kval), np.ascontiguousarray(shift))


def _ext_angles(layout: CompositeLayout, beta: float):
    n_base = layout.offsets.shape[0] - 1
    ext_offsets = np.zeros(n_base + 1, dtype=np.int64)
    ext_offsets[1:] = 3 * np.diff(layout.offsets)
    np.cumsum(ext_offsets, out=ext_offsets)
    ext = np.empty(3 * layout.count)
    for i in range(n_base):
        q = layout.angles[layout.offsets[i]:layout.offsets[i + 1]]
        base = ext_offsets[i]
        nq = q.shape[0]
        ext[base:base + nq] = q - beta
        ext[base + nq:base + 2 * nq] = q
        ext[base + 2 * nq:base + 3 * nq] = q + beta
    return ext, ext_offsets


def _ext_prefix_interleaved(layout: CompositeLayout, w: Array, wphi: Array):
    """Interleaved leading-zero prefix sums of (w, w*phi) over the 3x copies.

    Per fibre the block holds P0[t], P1[t] pairs for t = 0..3n, so both
    window sums come from adjacent memory.
    """
    n_base = layout.offsets.shape[0] - 1
    pref_offsets = np.zeros(n_base + 1, dtype=np.int64)
    pref_offsets[1:] = 3 * np.diff(layout.offsets) + 1
    np.cumsum(pref_offsets, out=pref_offsets)
    pref = np.empty(2 * pref_offsets[-1])
    for i in range(n_base):
        v0 = w[layout.offsets[i]:layout.offsets[i + 1]]
        v1 = wphi[layout.offsets[i]:layout.offsets[i + 1]]
        b0 = np.concatenate([[0.0], np.tile(v0, 3)])
        b1 = np.concatenate([[0.0], np.tile(v1, 3)])
        np.cumsum(b0, out=b0)
        np.cumsum(b1, out=b1)
        lo, hi = 2 * pref_offsets[i], 2 * pref_offsets[i + 1]
        pref[lo:hi:2] = b0
        pref[lo + 1:hi:2] = b1
    return pref, pref_offsets


def _require_fast_lifted(pk: ProductKernel):
    if not pk.separable_indicator_fibre:
        raise ValueError(
            "streamed lifted sweeps need a separable product kernel with an "
            "indicator fibre factor; use build_lifted_graph instead")


def lifted_density_field(lifted: LiftedCloud, pk: ProductKernel, h: float,
                         hp: float, layout: Optional[CompositeLayout] = None):
    """Lifted estimator kbar at every composite vertex (sorted-angle order)."""
    _require_fast_lifted(pk)
    if layout is None:
        layout = composite_layout(lifted)
    beta = lifted.bundle.fibre_circumference
    indptr, src, dst, kval, shift = _directed_base_structure(lifted, h, pk.base)
    ext, ext_offsets = _ext_angles(layout, beta)
    out = np.zeros(layout.count)
    _accel.lifted_count_sweep(indptr, src, dst, kval, shift,
                              layout.angles, layout.offsets, ext, ext_offsets,
                              beta, hp, out)
    norm = h ** (-lifted.base.torus.dim) * hp ** (-1.0) / (
        lifted.base.level * lifted.fibre_level)
    return out * norm


def lifted_rw_apply_streamed(lifted: LiftedCloud, pk: ProductKernel,
                             scheme: WeightScheme, h: float, hp: float,
                             phi_comp: Array, potential: Potential,
                             layout: Optional[CompositeLayout] = None,
                             kbar: Optional[Array] = None,
                             rescale: Optional[float] = None,
                             source_mask: Optional[Array] = None):
    """h^{-2} L phi on composite vertices, matrix-free.

    ``source_mask`` (boolean per base point) restricts evaluation to the
    fibres over the masked points; the estimator and the target sums stay
    exact over the full cloud.  Returns (applied, kbar); entries of masked-
    out fibres are zero, and kbar is None for the plain lifted scheme.
    """
    _require_fast_lifted(pk)
    if not scheme.lifted:
        raise ValueError("need a lifted weight scheme")
    if layout is None:
        layout = composite_layout(lifted)
    cloud = lifted.base
    beta = lifted.bundle.fibre_circumference
    if rescale is None:
        rescale = h ** (-2.0)
    if scheme.variant == "lifted_alpha":
        if kbar is None:
            kbar = lifted_density_field(lifted, pk, h, hp, layout)
        if np.any(kbar == 0.0):
            raise ValueError("lifted estimator vanishes at some composite vertex")
        wtarget = kbar ** (-scheme.alpha)
        out_factor = wtarget
        fold = None
    else:
        eu = np.exp(0.5 * cloud.potential.value(cloud.points))
        wtarget = np.ones(layout.count)
        out_factor = eu[layout.base_index]
        fold = eu
    indptr, src, dst, kval, shift = _directed_base_structure(lifted, h, pk.base,
                                                             fold=fold)
    if source_mask is not None:
        keep = source_mask[src]
        src, dst, kval, shift = src[keep], dst[keep], kval[keep], shift[keep]
        indptr = np.zeros(cloud.count + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=cloud.count), out=indptr[1:])
    ext, ext_offsets = _ext_angles(layout, beta)
    phi_comp = np.ascontiguousarray(phi_comp, dtype=float)
    p01, pref_offsets = _ext_prefix_interleaved(layout, wtarget,
                                                wtarget * phi_comp)
    out = np.zeros(layout.count)
    _accel.lifted_prefix_sweep(indptr, src, dst, kval, shift,
                               layout.angles, layout.offsets, ext, ext_offsets,
                               p01, pref_offsets, beta, hp, phi_comp, out)
    norm = h ** (-cloud.torus.dim) * hp ** (-1.0) / (cloud.level * lifted.fibre_level)
    applied = rescale * norm * out_factor * out
    return applied, kbar
