"""Step orchestration: Euler-Maruyama drift + clamped noise, triangulation
maintenance with rollback, iterative overlap correction, and the active
Brownian particle variant.

Every phase is deterministic for a fixed seed: noise comes from one
counter-based stream consumed in a fixed order, force kernels accumulate in
ascending index order, and overlap sweeps run over pairs in storage order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import (
    BrownsimError,
    NonConvergenceError,
    ParticleSystem,
    RngStream,
    SimParams,
    StepFailure,
    clamped_normals,
    wrap,
)
from .forces import (
    VerletList,
    build_cell_grid,
    build_verlet,
    long_range_forces,
    short_range_forces,
    verlet_needs_rebuild,
)
from .triangulation import PeriodicTriangulation, build_initial

RESOLVE_FRAC = 1.0 - 1e-9  # a pair is resolved once r >= sigma * RESOLVE_FRAC


@dataclass
class StepStats:
    """Per-step counters and phase timings (milliseconds)."""

    step: int
    dt_used: float
    overlap_iterations: int = 0
    flip_passes: int = 0
    inversion_repairs: int = 0
    rollbacks: int = 0
    n_overlapping: int = 0  # particles flagged by overlap correction
    force_ms: float = 0.0
    maintain_ms: float = 0.0
    overlap_ms: float = 0.0
    step_ms: float = 0.0
    overlap_flags: np.ndarray | None = field(default=None, repr=False)


@dataclass
class AbpState:
    """Director angles and self-propulsion parameters."""

    angles: np.ndarray          # (N,) radians, unbounded
    speed: float                # fixed self-propulsion speed
    rot_diffusion: float        # rotational diffusion amplitude


class MissedOverlapError(BrownsimError):
    """Debug scan found an overlapping pair the neighbor provider missed."""


def integrate(sys: ParticleSystem, forces: np.ndarray, params: SimParams,
              rng: RngStream, dt: float | None = None) -> np.ndarray:
    """One Euler-Maruyama update of all positions; returns box crossings.

    positions_prev receives the pre-move snapshot first (double buffer), then
    r += F * dt + xi * sqrt(D * dt) with xi clamped per component, and the
    result is wrapped. Crossings count how many box lengths each particle
    jumped, which the triangulation needs to keep its image shifts aligned.
    """
    if dt is None:
        dt = params.dt
    if not np.all(np.isfinite(forces)):
        bad = int(np.flatnonzero(~np.isfinite(forces).all(axis=1))[0])
        raise StepFailure(f"non-finite force on particle {bad}")
    sys.snapshot_prev()
    scale = math.sqrt(params.diffusion * dt)
    xi = clamped_normals(rng, (sys.n, 2), clamp=params.noise_clamp, dtype=sys.dtype)
    new = sys.positions + forces * sys.dtype.type(dt) + xi * sys.dtype.type(scale)
    wrapped = wrap(sys.box, new)
    crossings = np.rint((new - wrapped) / sys.dtype.type(sys.box.length)).astype(np.int64)
    sys.positions[...] = wrapped
    return crossings


def correct_overlaps(sys: ParticleSystem, pair_a: np.ndarray, pair_b: np.ndarray,
                     params: SimParams, tri: PeriodicTriangulation | None = None,
                     flags_out: np.ndarray | None = None) -> int:
    """Push overlapping neighbor pairs apart until none remain.

    Per sweep: displacements of magnitude (sigma - r) away from the partner
    are accumulated per particle over all overlapping pairs, each particle's
    total displacement is truncated to the cap (sigma/4 by default, rescaled
    so the direction survives), positions are applied and wrapped once. The
    pair set is fixed for the whole loop. Returns the number of sweeps that
    corrected something.
    """
    L = sys.dtype.type(sys.box.length)
    cap = sys.dtype.type(params.displacement_cap)
    iterations = 0
    for _ in range(params.max_overlap_iters):
        disp, flags, count = _kernels.overlap_pass_kernel(
            sys.positions, pair_a, pair_b, L, sys.dtype.type(params.sigma), RESOLVE_FRAC
        )
        if count == 0:
            return iterations
        iterations += 1
        if flags_out is not None:
            flags_out |= flags
        norm = np.sqrt((disp * disp).sum(axis=1))
        factor = np.ones_like(norm)
        over = norm > cap
        factor[over] = cap / norm[over]
        new = sys.positions + disp * factor[:, None]
        wrapped = wrap(sys.box, new)
        if tri is not None:
            crossings = np.rint((new - wrapped) / L).astype(np.int64)
            tri.apply_crossings(crossings)
        sys.positions[...] = wrapped
    raise NonConvergenceError(
        f"overlap correction still unresolved after {params.max_overlap_iters} sweeps"
    )


def _debug_overlap_scan(sys: ParticleSystem, params: SimParams):
    """O(N^2) oracle: raise if any pair anywhere is still overlapping."""
    pa, pb = _kernels.brute_force_overlaps(
        sys.positions, sys.dtype.type(sys.box.length),
        sys.dtype.type(params.sigma * RESOLVE_FRAC),
    )
    if pa.size:
        raise MissedOverlapError(
            f"{pa.size} overlapping pairs missed by the neighbor provider, "
            f"first pair ({int(pa[0])}, {int(pb[0])})"
        )


class _SimulationBase:
    """Shared run loop; subclasses implement step()."""

    def __init__(self, sys: ParticleSystem, params: SimParams, rng: RngStream,
                 debug_scan: bool = False, collect_flags: bool = False):
        self.sys = sys
        self.params = params
        self.rng = rng
        self.debug_scan = debug_scan
        self.collect_flags = collect_flags
        self.step_index = 0
        self.last_overlap_flags = np.zeros(sys.n, dtype=np.bool_)

    def step(self) -> StepStats:  # pragma: no cover - abstract
        raise NotImplementedError

    def run(self, steps: int, on_step=None) -> list[StepStats]:
        out = []
        for _ in range(steps):
            st = self.step()
            if self.debug_scan:
                _debug_overlap_scan(self.sys, self.params)
            out.append(st)
            if on_step is not None:
                on_step(self, st)
        return out


class LongRangeSimulation(_SimulationBase):
    """All-pairs forces with a continuously maintained triangulation.

    Per step: forces on the pre-move positions, integrate, check for edge
    pass-throughs, repair inverted triangles, restore the Delaunay property,
    then correct overlaps using the triangulation edges as the pair set.
    A pass-through or an unrepairable inversion rolls the step back and
    retries with half the time step; the nominal dt returns next step.
    """

    def __init__(self, sys, params, rng, tri: PeriodicTriangulation | None = None, **kw):
        super().__init__(sys, params, rng, **kw)
        self.tri = tri if tri is not None else build_initial(sys.positions, sys.box)

    def step(self) -> StepStats:
        sys, params, tri = self.sys, self.params, self.tri
        t0 = time.perf_counter()
        long_range_forces(sys, sys.box, tile=params.tile)
        t1 = time.perf_counter()

        tri_backup = tri.save_state()
        dt_try = params.dt
        rollbacks = 0
        maintain_s = 0.0
        overlap_s = 0.0
        while True:
            crossings = integrate(sys, sys.forces, params, self.rng, dt_try)
            m0 = time.perf_counter()
            tri.apply_crossings(crossings)
            repairs = 0
            flip_passes = 0
            failed = tri.edge_inversion_present(sys.positions_prev, sys.positions)
            if not failed:
                rep = tri.repair_inversions(sys.positions, prev=sys.positions_prev)
                repairs = rep.flips
                failed = rep.needs_rollback
            if not failed:
                flip_passes = tri.restore_delaunay(sys.positions)
            maintain_s += time.perf_counter() - m0

            if not failed:
                # Alternate overlap sweeps with triangulation maintenance:
                # the kicks move particles, which can both stale the edge set
                # (new overlaps between non-neighbors) and invert triangles.
                # Converged means a freshly maintained edge set reports clean.
                iters = 0
                self.last_overlap_flags[:] = False
                for _ in range(params.max_overlap_iters):
                    o0 = time.perf_counter()
                    round_iters = correct_overlaps(
                        sys, tri.edge_v[:, 0].astype(np.int64),
                        tri.edge_v[:, 1].astype(np.int64),
                        params, tri=tri, flags_out=self.last_overlap_flags,
                    )
                    overlap_s += time.perf_counter() - o0
                    iters += round_iters
                    if round_iters == 0:
                        break  # clean on a freshly maintained edge set
                    m1 = time.perf_counter()
                    failed = tri.edge_inversion_present(sys.positions_prev, sys.positions)
                    if not failed:
                        rep2 = tri.repair_inversions(sys.positions, prev=sys.positions_prev)
                        repairs += rep2.flips
                        failed = rep2.needs_rollback
                    if not failed:
                        flip_passes += tri.restore_delaunay(sys.positions)
                    maintain_s += time.perf_counter() - m1
                    if failed:
                        break
                else:
                    raise NonConvergenceError(
                        f"step {self.step_index}: overlap correction and edge "
                        f"maintenance did not reach a joint fixed point"
                    )
            if not failed:
                break
            rollbacks += 1
            if rollbacks > params.max_rollbacks:
                raise StepFailure(
                    f"step {self.step_index}: {rollbacks} rollbacks without a valid "
                    f"move (last dt {dt_try}); system too fast for the time step"
                )
            sys.restore_prev()
            tri.restore_state(tri_backup)
            dt_try *= 0.5

        t3 = time.perf_counter()
        st = StepStats(
            step=self.step_index, dt_used=dt_try,
            overlap_iterations=iters, flip_passes=flip_passes,
            inversion_repairs=repairs, rollbacks=rollbacks,
            n_overlapping=int(self.last_overlap_flags.sum()),
            force_ms=(t1 - t0) * 1e3, maintain_ms=maintain_s * 1e3,
            overlap_ms=overlap_s * 1e3, step_ms=(t3 - t0) * 1e3,
            overlap_flags=self.last_overlap_flags.copy() if self.collect_flags else None,
        )
        self.step_index += 1
        return st


class _VerletNeighborMixin:
    """Verlet-list plumbing shared by the modes that do not keep a
    triangulation. Subclasses set r_list, skin and overlap_margin."""

    def _ensure_fresh_list(self):
        if self.verlet is None or verlet_needs_rebuild(self.verlet, self.sys.positions, self.sys.box):
            grid = build_cell_grid(self.sys.positions, self.sys.box, self.r_list)
            self.verlet = build_verlet(
                grid, self.sys.positions, self.sys.box, self.r_list, self.skin,
                overlap_margin=self.overlap_margin,
            )
            self.rebuilds += 1

    def _overlap_rounds(self) -> int:
        """Overlap sweeps, rebuilding the candidate list whenever motion since
        the snapshot exceeds skin/2 (the same margin that makes the candidate
        subset provably complete)."""
        sys, params = self.sys, self.params
        iters = 0
        for _ in range(params.max_overlap_iters):
            iters += correct_overlaps(
                sys, self.verlet.overlap_a, self.verlet.overlap_b, params,
                flags_out=self.last_overlap_flags,
            )
            if not verlet_needs_rebuild(self.verlet, sys.positions, sys.box):
                return iters
            self._ensure_fresh_list()
        raise NonConvergenceError("overlap correction kept invalidating the neighbor list")


class ShortRangeSimulation(_VerletNeighborMixin, _SimulationBase):
    """Cutoff forces over Verlet lists; no triangulation is maintained.

    The neighbor list covers max(r_cutoff, sigma) + skin and is rebuilt once
    any particle has moved more than skin/2 since the list snapshot (overlap
    kicks count). Overlap candidates are the pairs within sigma + skin at
    build time.
    """

    def __init__(self, sys, params, rng, skin: float | None = None, **kw):
        super().__init__(sys, params, rng, **kw)
        if params.r_cutoff is None:
            raise BrownsimError("short-range simulation requires r_cutoff")
        self.skin = 0.5 * params.sigma if skin is None else float(skin)
        self.r_list = max(params.r_cutoff, params.sigma) + self.skin
        self.overlap_margin = params.sigma + self.skin
        self.verlet: VerletList | None = None
        self.rebuilds = 0

    def step(self) -> StepStats:
        sys, params = self.sys, self.params
        t0 = time.perf_counter()
        self._ensure_fresh_list()
        t1 = time.perf_counter()
        short_range_forces(sys, self.verlet, sys.box, params.r_cutoff)
        t2 = time.perf_counter()
        integrate(sys, sys.forces, params, self.rng)
        self.last_overlap_flags[:] = False
        iters = self._overlap_rounds()
        t3 = time.perf_counter()
        st = StepStats(
            step=self.step_index, dt_used=params.dt,
            overlap_iterations=iters,
            n_overlapping=int(self.last_overlap_flags.sum()),
            force_ms=(t2 - t1) * 1e3, maintain_ms=(t1 - t0) * 1e3,
            overlap_ms=(t3 - t2) * 1e3, step_ms=(t3 - t0) * 1e3,
            overlap_flags=self.last_overlap_flags.copy() if self.collect_flags else None,
        )
        self.step_index += 1
        return st


class AbpSimulation(_VerletNeighborMixin, _SimulationBase):
    """Active Brownian particles: fixed-speed motion along a diffusing director.

    positions advance ballistically by V0 * (cos theta, sin theta) * dt, the
    angles pick up sqrt(2 D dt) Gaussian increments (unclamped: angular noise
    cannot cause overshoot into a neighbor), then overlaps are corrected with
    Verlet-list candidates.
    """

    def __init__(self, sys, params, rng, abp: AbpState, skin: float | None = None,
                 clamp_angle_noise: bool = False, **kw):
        super().__init__(sys, params, rng, **kw)
        self.abp = abp
        self.skin = 0.5 * params.sigma if skin is None else float(skin)
        self.r_list = params.sigma + self.skin
        self.overlap_margin = self.r_list
        self.clamp_angle_noise = clamp_angle_noise
        self.verlet: VerletList | None = None
        self.rebuilds = 0

    def step(self) -> StepStats:
        sys, params, abp = self.sys, self.params, self.abp
        t0 = time.perf_counter()
        self._ensure_fresh_list()
        t1 = time.perf_counter()

        sys.snapshot_prev()
        dt = params.dt
        heading = np.stack([np.cos(abp.angles), np.sin(abp.angles)], axis=1).astype(sys.dtype)
        new = sys.positions + sys.dtype.type(abp.speed * dt) * heading
        sys.positions[...] = wrap(sys.box, new)
        ang_scale = math.sqrt(2.0 * abp.rot_diffusion * dt)
        if self.clamp_angle_noise:
            ni = clamped_normals(self.rng, sys.n, clamp=params.noise_clamp)
        else:
            ni = self.rng.normals(sys.n)
        abp.angles += ang_scale * ni

        self.last_overlap_flags[:] = False
        iters = self._overlap_rounds()
        t2 = time.perf_counter()
        st = StepStats(
            step=self.step_index, dt_used=dt,
            overlap_iterations=iters,
            n_overlapping=int(self.last_overlap_flags.sum()),
            maintain_ms=(t1 - t0) * 1e3, overlap_ms=(t2 - t1) * 1e3,
            step_ms=(t2 - t0) * 1e3,
            overlap_flags=self.last_overlap_flags.copy() if self.collect_flags else None,
        )
        self.step_index += 1
        return st
