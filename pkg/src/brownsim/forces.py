"""Pairwise forces and neighbor structures.

Two interaction laws: the long-range law f(r) = r / r^3 evaluated exactly
over all directed pairs (charges can be non-reciprocal, so no Newton's-third
shortcut exists), and the short-range law f(r) = r / r^7 truncated at a
cutoff, evaluated over Verlet half-lists built from a periodic cell grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import ConfigError, ParticleSystem, PeriodicBox, SingularityError, min_image_disp

LONG_RANGE = "long-range"
SHORT_RANGE = "short-range"


@dataclass(frozen=True)
class ForceLaw:
    """Interaction law; the exponent is implied by the kind."""

    kind: str
    r_cutoff: float | None = None

    def __post_init__(self):
        if self.kind not in (LONG_RANGE, SHORT_RANGE):
            raise ConfigError(f"unknown force kind {self.kind!r}")
        if self.kind == SHORT_RANGE and (self.r_cutoff is None or self.r_cutoff <= 0):
            raise ConfigError("short-range law requires a positive r_cutoff")


def pair_force(law: ForceLaw, mu_i: float, alpha_k: float, r_ik) -> np.ndarray:
    """Force on the receiver i from source k, r_ik = r_i - r_k (minimum image)."""
    r_ik = np.asarray(r_ik, dtype=np.float64)
    r = math.sqrt(float(r_ik[0]) ** 2 + float(r_ik[1]) ** 2)
    if r == 0.0:
        raise SingularityError("pair at zero separation")
    if law.kind == LONG_RANGE:
        return mu_i * alpha_k * r_ik / r**3
    if r > law.r_cutoff:
        return np.zeros(2)
    return mu_i * alpha_k * r_ik / r**7


def long_range_forces(sys: ParticleSystem, box: PeriodicBox, tile: int = 32) -> np.ndarray:
    """Exact all-pairs forces into sys.forces; O(N^2) directed terms."""
    out, err = _kernels.long_range_kernel(
        sys.positions, sys.alpha, sys.mu, sys.dtype.type(box.length), tile
    )
    bad = np.flatnonzero(err)
    if bad.size:
        i = int(bad[0])
        raise SingularityError(f"particles {i} and {int(err[i]) - 1} at zero separation")
    sys.forces[...] = out
    return sys.forces


# ---------------------------------------------------------------------------
# cell grid and Verlet lists


@dataclass
class CellGrid:
    """Uniform periodic bins; order/cell_start form CSR-style cell membership."""

    cells_per_axis: int
    cell_edge: float
    order: np.ndarray       # particle ids sorted by cell, index order within a cell
    cell_start: np.ndarray  # (ncells + 1,) slice bounds into order

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis * self.cells_per_axis


def build_cell_grid(positions: np.ndarray, box: PeriodicBox, cell_edge: float) -> CellGrid | None:
    """Bin wrapped positions into cells of edge >= cell_edge.

    Returns None when fewer than 3 cells fit per axis; the caller should fall
    back to brute-force pairing (the half-neighborhood scan needs +1 and -1
    offsets to land in distinct cells).
    """
    ncx = int(math.floor(box.length / cell_edge))
    if ncx < 3:
        return None
    edge = box.length / ncx
    ij = np.floor(positions / edge).astype(np.int64)
    np.clip(ij, 0, ncx - 1, out=ij)  # guard the x == L rounding corner
    cell_id = ij[:, 0] + ij[:, 1] * ncx
    order = np.argsort(cell_id, kind="stable")
    counts = np.bincount(cell_id, minlength=ncx * ncx)
    cell_start = np.zeros(ncx * ncx + 1, dtype=np.int64)
    np.cumsum(counts, out=cell_start[1:])
    return CellGrid(ncx, edge, order.astype(np.int64), cell_start)


@dataclass
class VerletList:
    """Half-list of unordered pairs within r_list, with a position snapshot."""

    pair_a: np.ndarray
    pair_b: np.ndarray
    snapshot: np.ndarray
    r_list: float
    skin: float
    # subset of pairs close enough at build time to possibly overlap
    overlap_a: np.ndarray = field(default=None, repr=False)
    overlap_b: np.ndarray = field(default=None, repr=False)

    @property
    def n_pairs(self) -> int:
        return self.pair_a.shape[0]


def build_verlet(
    grid: CellGrid | None,
    positions: np.ndarray,
    box: PeriodicBox,
    r_list: float,
    skin: float,
    overlap_margin: float | None = None,
) -> VerletList:
    """Every unordered pair with minimum-image distance <= r_list, once.

    With a grid, pairs come from scanning each cell against itself and its
    half neighborhood; without one (tiny box), from the all-pairs scan.
    overlap_margin, when given, selects the sub-list of pairs within that
    snapshot distance (the overlap-correction candidates).
    """
    L = positions.dtype.type(box.length)
    if grid is None:
        n = positions.shape[0]
        a, b = np.triu_indices(n, k=1)
        d = min_image_disp(box, positions[a], positions[b])
        keep = (d * d).sum(axis=1) <= r_list * r_list
        pa, pb = a[keep].astype(np.int64), b[keep].astype(np.int64)
    else:
        pa, pb = _kernels.cell_pairs(positions, grid.order, grid.cell_start, grid.cells_per_axis, L, r_list)
    vl = VerletList(pa, pb, positions.copy(), float(r_list), float(skin))
    if overlap_margin is not None:
        d = min_image_disp(box, positions[pa], positions[pb])
        near = (d * d).sum(axis=1) <= overlap_margin * overlap_margin
        vl.overlap_a = pa[near]
        vl.overlap_b = pb[near]
    return vl


def verlet_needs_rebuild(vl: VerletList, positions: np.ndarray, box: PeriodicBox) -> bool:
    """True once any particle moved more than skin/2 since the snapshot."""
    worst = _kernels.max_sq_displacement(positions, vl.snapshot, positions.dtype.type(box.length))
    return bool(worst > (vl.skin / 2.0) ** 2)


def short_range_forces(
    sys: ParticleSystem, vl: VerletList, box: PeriodicBox, r_cutoff: float
) -> np.ndarray:
    """Truncated forces over the Verlet pairs into sys.forces."""
    out, err = _kernels.short_range_kernel(
        sys.positions, sys.alpha, sys.mu, vl.pair_a, vl.pair_b,
        sys.dtype.type(box.length), sys.dtype.type(r_cutoff),
    )
    bad = np.flatnonzero(err)
    if bad.size:
        i = int(bad[0])
        raise SingularityError(f"particles {i} and {int(err[i]) - 1} at zero separation")
    sys.forces[...] = out
    return sys.forces
