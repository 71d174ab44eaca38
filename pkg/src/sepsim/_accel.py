"""Numba kernels for lifted-graph sweeps.

The lifted estimator and generator sums run over (base neighbour) x (fibre
window) pairs, ~1e10 touches at the experiment sizes, so the inner loops are
jitted.  Both kernels exploit a separable product kernel whose fibre factor
is the indicator: the fibre sum over a circular window of half-width h'
reduces to a count (or a prefix-sum difference) over sorted fibre angles.

Fibre angles are stored sorted per base point, concatenated flat, together
with a 3x "extended" copy [q - beta, q, q + beta] so circular windows become
plain intervals.  Queries are the source fibre's angles shifted by the
parallel-transport offset of the base pair; within a pair they split into
two ascending runs around the wrap point, so two monotone pointers sweep the
window bounds in amortised O(1) per query.

The sweeps are blocked: a prange block of consecutive source fibres visits
its outgoing pairs sorted by target, which keeps each target's extended and
prefix arrays cache-resident across the ~block_size pairs that hit it.
Writes stay race-free because a block only writes its own source fibres.
"""

import numpy as np
from numba import njit, prange

BLOCK = 64


@njit(cache=True)
def _wrap(x, beta):
    y = x % beta
    if y < 0.0:
        y += beta
    return y


@njit(cache=True, inline="always", fastmath=True)
def _pair_count(u, n_i, s, qx, nq, hp, beta, kval, out, o0):
    split = np.searchsorted(u, beta - s)
    lo_ptr = 0
    hi_ptr = 0
    # wrapped run first (smallest query centres), then the plain run
    for block in range(2):
        if block == 0:
            a_start, a_stop, off = split, n_i, s - beta
        else:
            a_start, a_stop, off = 0, split, s
        for a in range(a_start, a_stop):
            c = u[a] + off
            lo = c - hp
            hi = c + hp
            while lo_ptr < nq and qx[lo_ptr] < lo:
                lo_ptr += 1
            if hi_ptr < lo_ptr:
                hi_ptr = lo_ptr
            while hi_ptr < nq and qx[hi_ptr] <= hi:
                hi_ptr += 1
            out[o0 + a] += kval * (hi_ptr - lo_ptr)


@njit(cache=True, inline="always", fastmath=True)
def _pair_prefix(u, n_i, s, qx, nq, p01, hp, beta, kval, phi, out, o0):
    """Accumulate kval * (S1 - phi_a S0) per query, with S0, S1 window sums
    of w and w*phi read from the interleaved prefix array
    (p01[2t] = P0[t], p01[2t+1] = P1[t])."""
    split = np.searchsorted(u, beta - s)
    lo_ptr = 0
    hi_ptr = 0
    for block in range(2):
        if block == 0:
            a_start, a_stop, off = split, n_i, s - beta
        else:
            a_start, a_stop, off = 0, split, s
        for a in range(a_start, a_stop):
            c = u[a] + off
            lo = c - hp
            hi = c + hp
            while lo_ptr < nq and qx[lo_ptr] < lo:
                lo_ptr += 1
            if hi_ptr < lo_ptr:
                hi_ptr = lo_ptr
            while hi_ptr < nq and qx[hi_ptr] <= hi:
                hi_ptr += 1
            s0 = p01[2 * hi_ptr] - p01[2 * lo_ptr]
            s1 = p01[2 * hi_ptr + 1] - p01[2 * lo_ptr + 1]
            out[o0 + a] += kval * (s1 - phi[o0 + a] * s0)


@njit(cache=True, parallel=True)
def lifted_count_sweep(nb_indptr, nb_src, nb_indices, nb_kval, nb_shift,
                       fib_sorted, fib_offsets, fib_ext, ext_offsets,
                       beta, hp, out):
    """out[(i,a)] += sum_j kval_ij * #{b : circdist(u_a + s_ij, q_jb) <= hp}."""
    n_base = nb_indptr.shape[0] - 1
    n_blocks = (n_base + BLOCK - 1) // BLOCK
    for b in prange(n_blocks):
        i0 = b * BLOCK
        i1 = min(i0 + BLOCK, n_base)
        e0 = nb_indptr[i0]
        e1 = nb_indptr[i1]
        if e1 == e0:
            continue
        order = np.argsort(nb_indices[e0:e1])
        for t in range(e1 - e0):
            e = e0 + order[t]
            i = nb_src[e]
            j = nb_indices[e]
            u0 = fib_offsets[i]
            n_i = fib_offsets[i + 1] - u0
            q0 = ext_offsets[j]
            nq = ext_offsets[j + 1] - q0
            if n_i == 0 or nq == 0:
                continue
            u = fib_sorted[u0:u0 + n_i]
            qx = fib_ext[q0:q0 + nq]
            s = _wrap(nb_shift[e], beta)
            _pair_count(u, n_i, s, qx, nq, hp, beta, nb_kval[e], out, u0)


@njit(cache=True, parallel=True)
def lifted_prefix_sweep(nb_indptr, nb_src, nb_indices, nb_kval, nb_shift,
                        fib_sorted, fib_offsets, fib_ext, ext_offsets,
                        p01_ext, pref_offsets,
                        beta, hp, phi_comp, out):
    """out[(i,a)] += sum_j kval_ij (S1 - phi_(i,a) S0) over fibre windows,
    with S0, S1 the window sums of w and w*phi per target fibre."""
    n_base = nb_indptr.shape[0] - 1
    n_blocks = (n_base + BLOCK - 1) // BLOCK
    for b in prange(n_blocks):
        i0 = b * BLOCK
        i1 = min(i0 + BLOCK, n_base)
        e0 = nb_indptr[i0]
        e1 = nb_indptr[i1]
        if e1 == e0:
            continue
        order = np.argsort(nb_indices[e0:e1])
        for t in range(e1 - e0):
            e = e0 + order[t]
            i = nb_src[e]
            j = nb_indices[e]
            u0 = fib_offsets[i]
            n_i = fib_offsets[i + 1] - u0
            q0 = ext_offsets[j]
            nq = ext_offsets[j + 1] - q0
            if n_i == 0 or nq == 0:
                continue
            u = fib_sorted[u0:u0 + n_i]
            qx = fib_ext[q0:q0 + nq]
            pq = pref_offsets[j]
            p01 = p01_ext[2 * pq:2 * (pq + nq + 1)]
            s = _wrap(nb_shift[e], beta)
            _pair_prefix(u, n_i, s, qx, nq, p01, hp, beta, nb_kval[e],
                         phi_comp, out, u0)
