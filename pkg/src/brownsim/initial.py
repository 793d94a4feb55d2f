"""Initial configuration: triangular lattice sites, reservoir sampling, typing.

The starting state places particles on a periodic triangular lattice so no
pair overlaps, then keeps a uniform random subset and assigns types by
independent draws from the configured fractions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, ParticleSystem, PeriodicBox, RngStream


@dataclass
class InitConfig:
    n: int
    box: PeriodicBox
    sigma: float
    # (fraction, alpha, mu) per type, type index = position in the list
    types: list[tuple[float, float, float]]
    seed: int = 0
    dtype: type = np.float64

    def __post_init__(self):
        fracs = [t[0] for t in self.types]
        if any(f < 0.0 for f in fracs):
            raise ConfigError("type fractions must be non-negative")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ConfigError(f"type fractions must sum to 1, got {sum(fracs)}")


def _lattice_min_separation(s: float, pitch: float) -> float:
    """Closest pair distance on an offset-row lattice: in-row spacing,
    adjacent-row diagonal, or the two-row vertical gap."""
    return min(s, math.hypot(s / 2.0, pitch), 2.0 * pitch)


def triangular_lattice(box: PeriodicBox, sigma: float, n: int) -> np.ndarray:
    """Periodic triangular lattice with at least n sites, spread evenly.

    The target spacing s0 is the equilateral spacing that yields about n
    sites; the commensurate column spacing is the largest value <= L/ceil(L/s0)
    that is still >= sigma. Rows alternate a half-spacing offset, so the row
    count must be even to close periodically. Rejects the request when no
    spacing >= sigma can reach n sites.
    """
    L = box.length
    if sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if n < 1:
        raise ConfigError(f"need at least one site, got n={n}")
    nx_cap = int(math.floor(L / sigma))  # any more columns would go below sigma
    if nx_cap < 1:
        raise ConfigError(f"box of length {L} cannot fit any site at spacing {sigma}")
    s0 = L * math.sqrt(2.0 / (math.sqrt(3.0) * n))
    nx = min(max(1, math.ceil(L / s0)), nx_cap)

    while True:
        s = L / nx
        # even row count nearest the equilateral pitch, then densify only as
        # far as the separation constraint allows
        ny = 2 * max(1, math.ceil(L / (s * math.sqrt(3.0)) - 0.5))
        while nx * ny < n and _lattice_min_separation(s, L / (ny + 2)) >= sigma:
            ny += 2
        while ny > 2 and _lattice_min_separation(s, L / ny) < sigma:
            ny -= 2
        if nx * ny >= n and _lattice_min_separation(s, L / ny) >= sigma:
            break
        if nx < nx_cap:
            nx += 1
            continue
        raise ConfigError(
            f"density too high: no periodic triangular lattice with spacing >= "
            f"{sigma} holds {n} sites in a box of length {L}"
        )

    pitch = L / ny
    iy, ix = np.mgrid[0:ny, 0:nx]
    x = (ix + 0.5 * (iy % 2)) * s
    y = iy * pitch
    return np.stack([x.ravel(), y.ravel()], axis=1)


def reservoir_sample(population: int, k: int, rng: RngStream) -> np.ndarray:
    """Uniform random k-subset of range(population), single pass (Algorithm R)."""
    if k > population:
        raise ConfigError(f"cannot sample {k} items from a population of {population}")
    if k < 0:
        raise ConfigError(f"sample size must be >= 0, got {k}")
    reservoir = np.arange(k, dtype=np.int64)
    if k == 0 or k == population:
        return reservoir if k else np.empty(0, dtype=np.int64)
    # one uniform integer per remaining element, drawn in a fixed order
    js = rng.integers(0, np.arange(k + 1, population + 1))
    for i in range(k, population):
        j = js[i - k]
        if j < k:
            reservoir[j] = i
    return np.sort(reservoir)


def assign_types(n: int, fractions, rng: RngStream) -> np.ndarray:
    """Type index per particle, drawn independently from the fractions."""
    edges = np.cumsum(np.asarray(fractions, dtype=np.float64))
    edges[-1] = 1.0  # guard rounding in the final bin
    u = rng.uniform(size=n)
    return np.searchsorted(edges, u, side="right").astype(np.int32)


def init_system(cfg: InitConfig) -> ParticleSystem:
    """Non-overlapping starting state on lattice sites with random typing."""
    sites = triangular_lattice(cfg.box, cfg.sigma, cfg.n)
    rng = RngStream(cfg.seed, stream=1)
    chosen = reservoir_sample(len(sites), cfg.n, rng)
    positions = sites[chosen]
    type_of = assign_types(cfg.n, [t[0] for t in cfg.types], rng)
    alpha_table = np.array([t[1] for t in cfg.types], dtype=cfg.dtype)
    mu_table = np.array([t[2] for t in cfg.types], dtype=cfg.dtype)
    return ParticleSystem(
        positions.astype(cfg.dtype),
        type_of,
        alpha_table[type_of],
        mu_table[type_of],
        cfg.box,
        dtype=cfg.dtype,
    )
