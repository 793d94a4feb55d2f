"""Core geometry, parameters, particle storage and noise generation.

Everything here is dtype-preserving: arrays stay float32 or float64 as
allocated, so the single-precision mode does not silently upcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Densest packing of equal disks in the plane (hexagonal), pi / (2*sqrt(3)).
HEX_PACKING_BOUND = math.pi / (2.0 * math.sqrt(3.0))


class BrownsimError(Exception):
    """Base class for all simulation errors."""


class ConfigError(BrownsimError):
    """Invalid configuration. Carries the full list of violations."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class BuildError(BrownsimError):
    """Triangulation (or other structure) could not be constructed."""


class NonConvergenceError(BrownsimError):
    """An iterative procedure exceeded its iteration cap."""


class SingularityError(BrownsimError):
    """Two particles at zero separation inside a force kernel."""


class StepFailure(BrownsimError):
    """A simulation step could not be completed (rollback budget spent)."""


# ---------------------------------------------------------------------------
# periodic box


@dataclass(frozen=True)
class PeriodicBox:
    """Square periodic domain [0, L) x [0, L)."""

    length: float

    def __post_init__(self):
        if not (self.length > 0.0) or not math.isfinite(self.length):
            raise ConfigError(f"box length must be positive and finite, got {self.length}")

    def wrap(self, p: np.ndarray) -> np.ndarray:
        return wrap(self, p)

    def min_image(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return min_image_disp(self, a, b)


def wrap(box: PeriodicBox, p) -> np.ndarray:
    """Map coordinates into [0, L) per axis, idempotent on in-range input.

    A tiny negative coordinate can round to exactly L after adding L; the
    final where() folds that back to 0 so the half-open invariant holds.
    """
    p = np.asarray(p)
    L = p.dtype.type(box.length) if p.dtype.kind == "f" else float(box.length)
    q = p - np.floor(p / L) * L
    return np.where(q >= L, q - L, q)


def min_image_disp(box: PeriodicBox, a, b) -> np.ndarray:
    """Shortest periodic displacement from a to b, components in [-L/2, L/2).

    Ties at exactly L/2 resolve to -L/2 (round-half-up inside the floor).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    d = b - a
    L = d.dtype.type(box.length) if d.dtype.kind == "f" else float(box.length)
    return d - np.floor(d / L + 0.5) * L


def box_length_for_density(n: int, sigma: float, rho: float) -> float:
    """Box side that puts n disks of diameter sigma at packing fraction rho."""
    if n < 1:
        raise ConfigError(f"need at least one particle, got n={n}")
    if sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if not (0.0 < rho < HEX_PACKING_BOUND):
        raise ConfigError(
            f"packing fraction {rho} outside (0, {HEX_PACKING_BOUND:.4f}); "
            "equal disks cannot pack denser than the hexagonal bound"
        )
    return math.sqrt(n * math.pi * (sigma / 2.0) ** 2 / rho)


# ---------------------------------------------------------------------------
# random streams


class RngStream:
    """Counter-based random stream (Philox) keyed by (seed, stream id).

    The same (seed, stream) always yields the bit-identical sequence, and
    distinct stream ids are statistically independent, so substreams can be
    created in any order without affecting each other.
    """

    algorithm = "philox4x64"

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream: int) -> "RngStream":
        """Independent stream under the same seed."""
        return RngStream(self.seed, stream)

    def normals(self, shape, dtype=np.float64) -> np.ndarray:
        """Standard normal draws; exactly one variate consumed per element."""
        return self._gen.standard_normal(size=shape, dtype=dtype)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high=high, size=size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size=size)


def clamped_gaussian(rng: RngStream, clamp: float = 3.0) -> float:
    """One standard normal draw truncated to [-clamp, clamp].

    Consumes exactly one variate per call (truncation, not rerolling).
    """
    z = float(rng.normals(()))
    return min(max(z, -clamp), clamp)


def clamped_normals(rng: RngStream, shape, clamp: float = 3.0, dtype=np.float64) -> np.ndarray:
    """Vectorized clamped_gaussian; same per-element consumption and values."""
    z = rng.normals(shape, dtype=dtype)
    return np.clip(z, -clamp, clamp)


# ---------------------------------------------------------------------------
# parameters and particle storage


@dataclass
class SimParams:
    """Per-run constants. Derived values are computed once at construction."""

    n: int
    sigma: float
    dt: float
    diffusion: float
    r_cutoff: float | None = None
    max_overlap_iters: int = 1000
    max_rollbacks: int = 10
    displacement_cap: float | None = None  # defaults to sigma / 4
    noise_clamp: float = 3.0
    tile: int = 32

    sigma_sq: float = field(init=False)
    noise_scale: float = field(init=False)  # sqrt(D * dt) for the nominal dt

    def __post_init__(self):
        problems = []
        if self.n < 1:
            problems.append(f"n must be >= 1, got {self.n}")
        if not self.sigma > 0.0:
            problems.append(f"sigma must be positive, got {self.sigma}")
        if not self.dt > 0.0:
            problems.append(f"dt must be positive, got {self.dt}")
        if self.diffusion < 0.0:
            problems.append(f"diffusion must be >= 0, got {self.diffusion}")
        if self.r_cutoff is not None and not self.r_cutoff > self.sigma:
            problems.append(
                f"r_cutoff must exceed sigma when set, got {self.r_cutoff} <= {self.sigma}"
            )
        if self.max_overlap_iters < 1:
            problems.append("max_overlap_iters must be >= 1")
        if self.max_rollbacks < 0:
            problems.append("max_rollbacks must be >= 0")
        if self.tile < 1:
            problems.append("tile must be >= 1")
        if problems:
            raise ConfigError(problems)
        if self.displacement_cap is None:
            self.displacement_cap = self.sigma / 4.0
        self.sigma_sq = self.sigma * self.sigma
        self.noise_scale = math.sqrt(self.diffusion * self.dt)


class ParticleSystem:
    """Structure-of-arrays particle state.

    positions       (N, 2) current, wrapped into [0, L)^2
    positions_prev  (N, 2) buffer holding the pre-integration snapshot
    type_of         (N,)   small-int type index
    alpha           (N,)   source charge
    mu              (N,)   response charge
    forces          (N, 2) scratch, velocity units
    """

    def __init__(self, positions, type_of, alpha, mu, box: PeriodicBox, dtype=np.float64):
        positions = np.ascontiguousarray(positions, dtype=dtype)
        n = positions.shape[0]
        if positions.shape != (n, 2):
            raise ConfigError(f"positions must be (N, 2), got {positions.shape}")
        self.box = box
        self.positions = wrap(box, positions)
        self.positions_prev = self.positions.copy()
        self.type_of = np.ascontiguousarray(type_of, dtype=np.int32)
        self.alpha = np.ascontiguousarray(alpha, dtype=dtype)
        self.mu = np.ascontiguousarray(mu, dtype=dtype)
        self.forces = np.zeros_like(self.positions)
        for name in ("type_of", "alpha", "mu"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ConfigError(f"{name} must have shape ({n},), got {arr.shape}")
        if not np.all(np.isfinite(self.positions)):
            raise ConfigError("positions contain non-finite values")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dtype(self):
        return self.positions.dtype

    def snapshot_prev(self):
        """Copy current positions into the pre-integration buffer."""
        self.positions_prev[...] = self.positions

    def restore_prev(self):
        """Bitwise restore of the pre-integration snapshot."""
        self.positions[...] = self.positions_prev
