"""Non-unitary collapse dynamics of a collective coordinate on a periodic lattice."""

from .engine import (
    DEFAULT_STEP_DECAY,
    BatchPropagator,
    EvolutionSpec,
    PotentialMode,
    Trajectory,
    evolve,
    kinetic_step,
    potential_step,
    stable_dt,
    step,
)
from .errors import CollapseFailure, ConfigurationError, NormCollapseError, StepSizeError, TimeLimitExceeded
from .grid import (
    Grid,
    PhysicalParams,
    WaveFunction,
    expectation,
    gaussian_packet,
    kinetic_energy,
    make_grid,
    momentum_expectation,
    read_snapshot,
    region_weights,
    spread,
    superpose,
    uniform_state,
    write_snapshot,
)
from .noise import CouplingSpec, X0Source, coupling_from, next_x0, select_x0

__version__ = "0.1.0"
