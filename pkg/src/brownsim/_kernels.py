"""Numba inner loops.

Accumulation order is part of the contract: every kernel that sums into a
per-particle slot does so in a fixed ascending order (pairs in storage order,
interaction sources in ascending index within fixed-size tiles), so results
are bit-identical across runs and across thread counts. Parallelism is only
over independent output slots. No fastmath anywhere; IEEE semantics are what
make the naive-oracle comparisons exact.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from numba import njit, prange


@njit(inline="always")
def _mi(d, L):
    # shortest periodic image of a coordinate difference, ties to -L/2
    return d - math.floor(d / L + 0.5) * L


@njit(cache=True, parallel=True)
def long_range_kernel(pos, alpha, mu, L, tile):
    """All-pairs f(r) = r / r^3 forces, no action-reaction shortcut.

    Outer loop parallel over receivers; the source index k runs in ascending
    order, staged in tile-sized chunks. err[i] = k+1 flags a zero-separation
    pair (i, k); the pair is skipped so the scan can finish and report.
    """
    n = pos.shape[0]
    out = np.zeros_like(pos)
    err = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        mi_ = mu[i]
        fx = xi * 0.0
        fy = xi * 0.0
        for t0 in range(0, n, tile):
            t1 = min(t0 + tile, n)
            for k in range(t0, t1):
                if k == i:
                    continue
                dx = _mi(xi - pos[k, 0], L)
                dy = _mi(yi - pos[k, 1], L)
                r2 = dx * dx + dy * dy
                if r2 == 0.0:
                    err[i] = k + 1
                    continue
                w = mi_ * alpha[k] / (r2 * math.sqrt(r2))
                fx += w * dx
                fy += w * dy
        out[i, 0] = fx
        out[i, 1] = fy
    return out, err


@njit(cache=True)
def short_range_kernel(pos, alpha, mu, pair_a, pair_b, L, r_cutoff):
    """Cutoff f(r) = r / r^7 forces over stored half-pairs.

    Both directed terms of each unordered pair are accumulated; the
    sequential pair loop fixes the summation order.
    """
    n = pos.shape[0]
    out = np.zeros_like(pos)
    err = np.zeros(n, dtype=np.int64)
    rc2 = r_cutoff * r_cutoff
    for p in range(pair_a.shape[0]):
        a = pair_a[p]
        b = pair_b[p]
        dx = _mi(pos[a, 0] - pos[b, 0], L)
        dy = _mi(pos[a, 1] - pos[b, 1], L)
        r2 = dx * dx + dy * dy
        if r2 > rc2:
            continue
        if r2 == 0.0:
            err[a] = b + 1
            continue
        inv7 = 1.0 / (r2 * r2 * r2 * math.sqrt(r2))
        wa = mu[a] * alpha[b] * inv7
        wb = mu[b] * alpha[a] * inv7
        out[a, 0] += wa * dx
        out[a, 1] += wa * dy
        out[b, 0] -= wb * dx
        out[b, 1] -= wb * dy
    return out, err


@njit(cache=True)
def overlap_pass_kernel(pos, pair_a, pair_b, L, sigma, resolve_frac):
    """One overlap-correction sweep: accumulate bounce displacements.

    A pair counts as overlapping when r < sigma * resolve_frac; each member
    receives a displacement of magnitude (sigma - r) directly away from the
    other. Sequential over pairs for a fixed accumulation order.
    """
    n = pos.shape[0]
    disp = np.zeros_like(pos)
    flags = np.zeros(n, dtype=np.bool_)
    thresh = sigma * resolve_frac
    count = 0
    for p in range(pair_a.shape[0]):
        a = pair_a[p]
        b = pair_b[p]
        dx = _mi(pos[b, 0] - pos[a, 0], L)
        dy = _mi(pos[b, 1] - pos[a, 1], L)
        r = math.sqrt(dx * dx + dy * dy)
        if r >= thresh or r == 0.0:
            continue
        count += 1
        delta = sigma - r
        ux = dx / r
        uy = dy / r
        disp[a, 0] -= delta * ux
        disp[a, 1] -= delta * uy
        disp[b, 0] += delta * ux
        disp[b, 1] += delta * uy
        flags[a] = True
        flags[b] = True
    return disp, flags, count


@njit(cache=True)
def max_sq_displacement(pos, snapshot, L):
    """Largest squared periodic displacement of any particle since snapshot."""
    worst = 0.0
    for i in range(pos.shape[0]):
        dx = _mi(pos[i, 0] - snapshot[i, 0], L)
        dy = _mi(pos[i, 1] - snapshot[i, 1], L)
        d2 = dx * dx + dy * dy
        if d2 > worst:
            worst = d2
    return worst


@njit(cache=True)
def _cell_pairs_count(pos, order, cell_start, ncx, L, r_list):
    rl2 = r_list * r_list
    count = 0
    ncells = ncx * ncx
    for c in range(ncells):
        cx = c % ncx
        cy = c // ncx
        a0 = cell_start[c]
        a1 = cell_start[c + 1]
        # same cell, a < b
        for ia in range(a0, a1):
            a = order[ia]
            for ib in range(ia + 1, a1):
                b = order[ib]
                dx = _mi(pos[a, 0] - pos[b, 0], L)
                dy = _mi(pos[a, 1] - pos[b, 1], L)
                if dx * dx + dy * dy <= rl2:
                    count += 1
        # half neighborhood so each unordered cell pair is visited once
        for off in range(4):
            if off == 0:
                ox, oy = 1, 0
            elif off == 1:
                ox, oy = -1, 1
            elif off == 2:
                ox, oy = 0, 1
            else:
                ox, oy = 1, 1
            d = ((cx + ox) % ncx) + ((cy + oy) % ncx) * ncx
            b0 = cell_start[d]
            b1 = cell_start[d + 1]
            for ia in range(a0, a1):
                a = order[ia]
                for ib in range(b0, b1):
                    b = order[ib]
                    dx = _mi(pos[a, 0] - pos[b, 0], L)
                    dy = _mi(pos[a, 1] - pos[b, 1], L)
                    if dx * dx + dy * dy <= rl2:
                        count += 1
    return count


@njit(cache=True)
def _cell_pairs_fill(pos, order, cell_start, ncx, L, r_list, pair_a, pair_b):
    rl2 = r_list * r_list
    k = 0
    ncells = ncx * ncx
    for c in range(ncells):
        cx = c % ncx
        cy = c // ncx
        a0 = cell_start[c]
        a1 = cell_start[c + 1]
        for ia in range(a0, a1):
            a = order[ia]
            for ib in range(ia + 1, a1):
                b = order[ib]
                dx = _mi(pos[a, 0] - pos[b, 0], L)
                dy = _mi(pos[a, 1] - pos[b, 1], L)
                if dx * dx + dy * dy <= rl2:
                    pair_a[k] = a
                    pair_b[k] = b
                    k += 1
        for off in range(4):
            if off == 0:
                ox, oy = 1, 0
            elif off == 1:
                ox, oy = -1, 1
            elif off == 2:
                ox, oy = 0, 1
            else:
                ox, oy = 1, 1
            d = ((cx + ox) % ncx) + ((cy + oy) % ncx) * ncx
            b0 = cell_start[d]
            b1 = cell_start[d + 1]
            for ia in range(a0, a1):
                a = order[ia]
                for ib in range(b0, b1):
                    b = order[ib]
                    dx = _mi(pos[a, 0] - pos[b, 0], L)
                    dy = _mi(pos[a, 1] - pos[b, 1], L)
                    if dx * dx + dy * dy <= rl2:
                        pair_a[k] = a
                        pair_b[k] = b
                        k += 1
    return k


def cell_pairs(pos, order, cell_start, ncx, L, r_list):
    """All unordered pairs within r_list, via a half neighborhood cell scan."""
    count = _cell_pairs_count(pos, order, cell_start, ncx, L, r_list)
    pair_a = np.empty(count, dtype=np.int64)
    pair_b = np.empty(count, dtype=np.int64)
    filled = _cell_pairs_fill(pos, order, cell_start, ncx, L, r_list, pair_a, pair_b)
    assert filled == count
    return pair_a, pair_b


@njit(cache=True)
def _brute_overlaps_count(pos, L, thresh):
    n = pos.shape[0]
    t2 = thresh * thresh
    count = 0
    for a in range(n):
        for b in range(a + 1, n):
            dx = _mi(pos[b, 0] - pos[a, 0], L)
            dy = _mi(pos[b, 1] - pos[a, 1], L)
            if dx * dx + dy * dy < t2:
                count += 1
    return count


@njit(cache=True)
def _brute_overlaps_fill(pos, L, thresh, pair_a, pair_b):
    n = pos.shape[0]
    t2 = thresh * thresh
    k = 0
    for a in range(n):
        for b in range(a + 1, n):
            dx = _mi(pos[b, 0] - pos[a, 0], L)
            dy = _mi(pos[b, 1] - pos[a, 1], L)
            if dx * dx + dy * dy < t2:
                pair_a[k] = a
                pair_b[k] = b
                k += 1
    return k


def brute_force_overlaps(pos, L, thresh):
    """O(N^2) oracle: every unordered pair with separation < thresh."""
    count = _brute_overlaps_count(pos, L, thresh)
    pair_a = np.empty(count, dtype=np.int64)
    pair_b = np.empty(count, dtype=np.int64)
    _brute_overlaps_fill(pos, L, thresh, pair_a, pair_b)
    return pair_a, pair_b


def set_threads(n: int | None):
    """Cap numba's thread pool; None leaves the default."""
    if n is not None and n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
