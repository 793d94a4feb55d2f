"""Integration, overlap correction, rollback, and the ABP variant."""

import math

import numpy as np
import pytest
from scipy import integrate as sp_integrate
from scipy import stats as sp_stats

from brownsim.core import ParticleSystem, PeriodicBox, RngStream, SimParams, StepFailure
from brownsim.dynamics import (
    AbpSimulation,
    AbpState,
    LongRangeSimulation,
    ShortRangeSimulation,
    correct_overlaps,
    integrate,
)
from brownsim.initial import InitConfig, init_system


def clamped_variance():
    body, _ = sp_integrate.quad(lambda z: z * z * sp_stats.norm.pdf(z), -3, 3)
    return body + 9.0 * 2.0 * sp_stats.norm.sf(3.0)


def make_system(positions, box_length, alpha=None, mu=None):
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    alpha = np.zeros(n) if alpha is None else np.asarray(alpha, float)
    mu = np.zeros(n) if mu is None else np.asarray(mu, float)
    return ParticleSystem(positions, np.zeros(n, np.int32), alpha, mu,
                          PeriodicBox(box_length))


class TestIntegrate:
    def test_frozen_without_forces_or_noise(self):
        sys_ = make_system([[1.0, 1.0], [3.0, 3.0]], 10.0)
        params = SimParams(n=2, sigma=1.0, dt=0.01, diffusion=0.0)
        before = sys_.positions.copy()
        integrate(sys_, np.zeros((2, 2)), params, RngStream(0))
        assert np.array_equal(sys_.positions, before)
        assert np.array_equal(sys_.positions_prev, before)

    def test_pure_drift(self):
        sys_ = make_system([[1.0, 1.0]], 10.0)
        params = SimParams(n=1, sigma=1.0, dt=0.01, diffusion=0.0)
        integrate(sys_, np.array([[1.0, 0.0]]), params, RngStream(0))
        assert np.allclose(sys_.positions[0], (1.01, 1.0), atol=1e-15)

    def test_displacement_variance_matches_clamped_moment(self):
        n = 20_000
        rng = RngStream(3)
        sys_ = make_system(np.full((n, 2), 50.0), 100.0)
        params = SimParams(n=n, sigma=1.0, dt=0.01, diffusion=0.01)
        zero = np.zeros((n, 2))
        steps = 50
        disp = np.zeros((n, 2))
        for _ in range(steps):
            before = sys_.positions.copy()
            integrate(sys_, zero, params, rng)
            disp += sys_.positions - before  # no wrapping happens here
        expected = clamped_variance() * params.diffusion * params.dt * steps
        assert disp.var(axis=0) == pytest.approx([expected, expected], rel=0.02)

    def test_crossings_reported(self):
        sys_ = make_system([[9.99, 5.0]], 10.0)
        params = SimParams(n=1, sigma=1.0, dt=1.0, diffusion=0.0)
        crossings = integrate(sys_, np.array([[0.02, 0.0]]), params, RngStream(0))
        assert crossings[0, 0] == 1
        assert 0.0 <= sys_.positions[0, 0] < 0.02

    def test_nonfinite_force_aborts(self):
        sys_ = make_system([[1.0, 1.0]], 10.0)
        params = SimParams(n=1, sigma=1.0, dt=0.01, diffusion=0.0)
        with pytest.raises(StepFailure):
            integrate(sys_, np.array([[np.nan, 0.0]]), params, RngStream(0))


class TestCorrectOverlaps:
    def pair_args(self, n):
        import itertools
        pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64)
        return pairs[:, 0].copy(), pairs[:, 1].copy()

    def test_isolated_pair_bounce_closed_form(self):
        sys_ = make_system([[5.0, 5.0], [5.8, 5.0]], 20.0)
        params = SimParams(n=2, sigma=1.0, dt=0.01, diffusion=0.01)
        iters = correct_overlaps(sys_, *self.pair_args(2), params)
        assert iters == 1
        assert np.allclose(sys_.positions[0], (4.8, 5.0), atol=1e-14)
        assert np.allclose(sys_.positions[1], (6.0, 5.0), atol=1e-14)
        # separation is exactly 2*sigma - r
        assert sys_.positions[1, 0] - sys_.positions[0, 0] == pytest.approx(1.2, abs=1e-12)

    def test_no_overlap_is_a_bitwise_noop(self):
        sys_ = make_system([[2.0, 2.0], [4.0, 2.0]], 10.0)
        params = SimParams(n=2, sigma=1.0, dt=0.01, diffusion=0.01)
        before = sys_.positions.copy()
        assert correct_overlaps(sys_, *self.pair_args(2), params) == 0
        assert np.array_equal(sys_.positions, before)

    def test_accumulated_displacement_is_capped(self):
        # two overlappers push the middle particle in the same direction;
        # its summed displacement exceeds sigma/4 and is rescaled to exactly it
        a = [5.0 - 0.6, 5.0 - 0.4]
        b = [5.0 - 0.6, 5.0 + 0.4]
        c = [5.0, 5.0]
        sys_ = make_system([a, b, c], 20.0)
        params = SimParams(n=3, sigma=1.0, dt=0.01, diffusion=0.01)
        before = sys_.positions.copy()
        correct_overlaps(sys_, np.array([0, 1], np.int64), np.array([2, 2], np.int64), params)
        # manual first sweep: c receives (sigma - r) * u from both neighbors
        d = before[2] - before[:2]
        r = np.linalg.norm(d, axis=1)
        push = ((1.0 - r)[:, None] * (d / r[:, None])).sum(axis=0)
        assert np.linalg.norm(push) > 0.25
        first = before[2] + push / np.linalg.norm(push) * 0.25
        # c's net move in sweep one equals the cap exactly
        assert np.linalg.norm(first - before[2]) == pytest.approx(0.25, abs=1e-12)

    def test_postcondition_no_overlaps_left(self):
        rng = np.random.default_rng(5)
        pos = rng.uniform(4.0, 6.0, size=(12, 2))  # deliberately jammed
        sys_ = make_system(pos, 20.0)
        params = SimParams(n=12, sigma=1.0, dt=0.01, diffusion=0.01)
        iters = correct_overlaps(sys_, *self.pair_args(12), params)
        assert iters > 0
        from brownsim.core import min_image_disp
        i, j = self.pair_args(12)
        d = min_image_disp(sys_.box, sys_.positions[i], sys_.positions[j])
        assert (np.sqrt((d * d).sum(1)) >= 1.0 * (1 - 1e-9)).all()

    def test_flags_mark_participants(self):
        sys_ = make_system([[5.0, 5.0], [5.5, 5.0], [8.0, 8.0]], 20.0)
        params = SimParams(n=3, sigma=1.0, dt=0.01, diffusion=0.01)
        flags = np.zeros(3, dtype=np.bool_)
        correct_overlaps(sys_, *self.pair_args(3), params, flags_out=flags)
        assert flags.tolist() == [True, True, False]


def small_long_range_sim(n=64, rho=0.2, seed=0, charges=((1.0, 1.0),), **kw):
    """Equal-fraction types from (alpha, mu) tuples."""
    from brownsim.core import box_length_for_density
    box = PeriodicBox(box_length_for_density(n, 1.0, rho))
    k = len(charges)
    types = [(1.0 / k, a, m) for a, m in charges]
    sys_ = init_system(InitConfig(n=n, box=box, sigma=1.0, types=types, seed=seed))
    params = SimParams(n=n, sigma=1.0, dt=0.01, diffusion=0.01)
    return LongRangeSimulation(sys_, params, RngStream(seed, stream=2), **kw)


class TestLongRangeStep:
    def test_dilute_run_is_quiet(self):
        sim = small_long_range_sim(n=128, rho=0.05, charges=((0.5, 0.5),),
                                   debug_scan=True)
        series = sim.run(30)
        assert all(s.rollbacks == 0 for s in series)
        assert np.mean([s.overlap_iterations for s in series]) <= 1.0
        assert sim.tri.audit(sim.sys.positions).ok

    def test_attracting_pair_respects_excluded_volume(self):
        box = PeriodicBox(30.0)
        sys_ = ParticleSystem(
            np.array([[14.0, 15.0], [16.0, 15.0], [5.0, 5.0], [25.0, 25.0]]),
            np.zeros(4, np.int32),
            np.array([5.0, -5.0, 0.0, 0.0]), np.array([5.0, -5.0, 0.0, 0.0]), box,
        )
        params = SimParams(n=4, sigma=1.0, dt=0.01, diffusion=0.0)
        sim = LongRangeSimulation(sys_, params, RngStream(1), debug_scan=True)
        sim.run(200)
        from brownsim.core import min_image_disp
        d = min_image_disp(box, sys_.positions[0], sys_.positions[1])
        assert np.linalg.norm(d) >= 1.0 * (1 - 1e-9)

    def test_pathological_dt_triggers_rollback_and_halving(self):
        sim = small_long_range_sim(n=64, rho=0.35, charges=((3.0, 3.0), (-3.0, -3.0)))
        sim.params.dt = 10.0  # absurd time step forces pass-throughs
        st = sim.step()
        assert st.rollbacks >= 1
        assert st.dt_used < 10.0
        assert st.dt_used == 10.0 * 0.5**st.rollbacks

    def test_rollback_restores_positions_bitwise(self):
        # drive the retry loop by hand: integrate, then roll back
        sim = small_long_range_sim(n=64, rho=0.2)
        sys_ = sim.sys
        p0 = sys_.positions.copy()
        integrate(sys_, np.zeros_like(sys_.positions), sim.params, sim.rng)
        assert not np.array_equal(sys_.positions, p0)
        sys_.restore_prev()
        assert np.array_equal(sys_.positions, p0)

    def test_rollback_budget_exhaustion_raises(self):
        sim = small_long_range_sim(n=64, rho=0.35, charges=((3.0, 3.0), (-3.0, -3.0)))
        sim.params.dt = 1e9
        sim.params.max_rollbacks = 2
        with pytest.raises(StepFailure):
            for _ in range(5):
                sim.step()

    def test_deterministic_repeat_run(self):
        a = small_long_range_sim(n=128, rho=0.25, seed=7,
                                 charges=((2.0, 2.0), (-2.0, -2.0)))
        b = small_long_range_sim(n=128, rho=0.25, seed=7,
                                 charges=((2.0, 2.0), (-2.0, -2.0)))
        sa = a.run(40)
        sb = b.run(40)
        assert np.array_equal(a.sys.positions, b.sys.positions)
        assert [s.overlap_iterations for s in sa] == [s.overlap_iterations for s in sb]
        assert [s.flip_passes for s in sa] == [s.flip_passes for s in sb]


class TestShortRangeStep:
    def make(self, n=256, rho=0.3, seed=2, debug=True):
        from brownsim.core import box_length_for_density
        box = PeriodicBox(box_length_for_density(n, 1.0, rho))
        sys_ = init_system(InitConfig(
            n=n, box=box, sigma=1.0,
            types=[(0.5, 2.0, 2.0), (0.5, -2.0, -2.0)], seed=seed))
        params = SimParams(n=n, sigma=1.0, dt=0.01, diffusion=0.01, r_cutoff=2.5)
        return ShortRangeSimulation(sys_, params, RngStream(seed, stream=2),
                                    debug_scan=debug)

    def test_runs_clean_and_rebuilds(self):
        sim = self.make()
        series = sim.run(60)
        assert sim.rebuilds >= 1
        assert all(s.flip_passes == 0 for s in series)  # no triangulation here

    def test_isolated_particles_follow_pure_brownian(self):
        from brownsim.core import box_length_for_density
        n = 16
        box = PeriodicBox(box_length_for_density(n, 1.0, 0.001))
        sys_ = init_system(InitConfig(n=n, box=box, sigma=1.0,
                                      types=[(1.0, 3.0, 3.0)], seed=1))
        params = SimParams(n=n, sigma=1.0, dt=0.01, diffusion=0.01, r_cutoff=2.5)
        sim = ShortRangeSimulation(sys_, params, RngStream(9, stream=2))
        start = sys_.positions.copy()
        series = sim.run(50)
        assert all(s.overlap_iterations == 0 for s in series)
        # forces are all zero beyond the cutoff: trajectory equals raw noise
        rng = RngStream(9, stream=2)
        from brownsim.core import clamped_normals, wrap
        pos = start.copy()
        for _ in range(50):
            xi = clamped_normals(rng, (n, 2))
            pos = wrap(box, pos + xi * math.sqrt(0.01 * 0.01))
        assert np.array_equal(pos, sys_.positions)

    def test_matches_bruteforce_neighbor_reference(self):
        # same seed, Verlet pairs vs all-pairs candidates: identical trajectories
        sim_fast = self.make(n=128, rho=0.3, seed=4)
        sim_fast.run(50)

        from brownsim.core import box_length_for_density
        n = 128
        box = PeriodicBox(box_length_for_density(n, 1.0, 0.3))
        sys_ref = init_system(InitConfig(
            n=n, box=box, sigma=1.0,
            types=[(0.5, 2.0, 2.0), (0.5, -2.0, -2.0)], seed=4))
        params = SimParams(n=n, sigma=1.0, dt=0.01, diffusion=0.01, r_cutoff=2.5)
        rng = RngStream(4, stream=2)
        import itertools
        from brownsim.forces import short_range_forces, build_verlet
        pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64)
        pa, pb = pairs[:, 0].copy(), pairs[:, 1].copy()
        for _ in range(50):
            vl = build_verlet(None, sys_ref.positions, box, 3.0, skin=0.5)
            short_range_forces(sys_ref, vl, box, 2.5)
            integrate(sys_ref, sys_ref.forces, params, rng)
            correct_overlaps(sys_ref, pa, pb, params)
        assert np.allclose(sim_fast.sys.positions, sys_ref.positions, atol=1e-12)


class TestAbpStep:
    def make(self, n, rho, v0, seed=0, angles=None, diffusion=0.01):
        from brownsim.core import box_length_for_density
        box = PeriodicBox(box_length_for_density(n, 1.0, rho))
        sys_ = init_system(InitConfig(n=n, box=box, sigma=1.0,
                                      types=[(1.0, 0.0, 0.0)], seed=seed))
        params = SimParams(n=n, sigma=1.0, dt=0.01, diffusion=diffusion)
        if angles is None:
            angles = RngStream(seed, stream=3).uniform(n) * 2 * math.pi
        abp = AbpState(angles=np.asarray(angles, float), speed=v0, rot_diffusion=diffusion)
        return AbpSimulation(sys_, params, RngStream(seed, stream=2), abp)

    def test_ballistic_displacement(self):
        sim = self.make(4, rho=0.01, v0=1.0, angles=np.zeros(4), diffusion=0.0)
        before = sim.sys.positions.copy()
        sim.step()
        moved = sim.sys.positions - before
        assert np.allclose(moved, [[0.01, 0.0]] * 4, atol=1e-14)
        assert np.array_equal(sim.abp.angles, np.zeros(4))

    def test_angle_variance(self):
        n = 4096
        sim = self.make(n, rho=0.01, v0=0.0, angles=np.zeros(n))
        steps = 25
        sim.run(steps)
        expected = 2 * 0.01 * 0.01 * steps
        assert sim.abp.angles.var() == pytest.approx(expected, rel=0.05)
        before = init_system(InitConfig(
            n=n, box=sim.sys.box, sigma=1.0, types=[(1.0, 0.0, 0.0)], seed=0)).positions
        assert np.array_equal(sim.sys.positions, before)  # v0 = 0 freezes positions

    def test_single_particle_straight_line(self):
        sim = self.make(1, rho=0.001, v0=1.0, angles=[math.pi / 4], diffusion=0.0)
        y0 = sim.sys.positions[0, 1] - sim.sys.positions[0, 0]
        sim.run(100)
        assert sim.sys.positions[0, 1] - sim.sys.positions[0, 0] == pytest.approx(y0, abs=1e-9)

    def test_excluded_volume_holds_dense(self):
        sim = self.make(256, rho=0.6, v0=0.3, seed=3)
        sim.debug_scan = True
        sim.run(80)  # debug scan raises on any missed overlap
