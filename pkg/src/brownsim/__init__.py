"""brownsim: 2D Brownian dynamics of hard disks in a periodic box.

Pairwise long- and short-range forces, Euler-Maruyama stepping with clamped
Gaussian noise, and excluded-volume enforcement through an iteratively
corrected overlap pass whose neighbor oracle is either a continuously
maintained periodic Delaunay triangulation or a Verlet list.
"""

from .core import (
    BrownsimError,
    BuildError,
    ConfigError,
    NonConvergenceError,
    ParticleSystem,
    PeriodicBox,
    RngStream,
    SimParams,
    SingularityError,
    StepFailure,
    box_length_for_density,
    clamped_gaussian,
    clamped_normals,
    min_image_disp,
    wrap,
)
from .dynamics import (
    AbpSimulation,
    AbpState,
    LongRangeSimulation,
    ShortRangeSimulation,
    StepStats,
    correct_overlaps,
    integrate,
)
from .forces import (
    ForceLaw,
    VerletList,
    build_cell_grid,
    build_verlet,
    long_range_forces,
    pair_force,
    short_range_forces,
    verlet_needs_rebuild,
)
from .initial import InitConfig, init_system, reservoir_sample, triangular_lattice
from .triangulation import PeriodicTriangulation, build_initial, incircle

__version__ = "0.1.0"
