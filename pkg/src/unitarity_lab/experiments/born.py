"""Stochastic collapse trials of a two-packet superposition.

Each trial starts from ``sqrt(alpha2) |x1> + sqrt(1 - alpha2) |x2>`` (two
Gaussian packets) and evolves under the non-Hermitian trap whose centre X0
is redrawn every ``dwell_steps`` steps.  A trial ends once the weight on
one side of the midpoint between the packets reaches ``1 - threshold``.

Trials are independent rows of a batched propagator; the noise of trial
``i`` is keyed by a seed derived from ``(base_seed, i)`` alone, so outcomes
do not depend on batch size, worker count or scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..engine import BatchPropagator, EvolutionSpec, PotentialMode, stable_dt
from ..errors import CollapseFailure, ConfigurationError
from ..grid import Grid, PhysicalParams, gaussian_packet, superpose
from ..noise import CouplingSpec, coupling_from, select_x0

__all__ = ["BornSetup", "TrialOutcome", "BornResult", "trial_seeds", "run_trials", "collapse_trial", "born_ensemble"]


@dataclass(frozen=True)
class BornSetup:
    """Geometry, coupling and noise settings shared by all trials.

    ``max_step_decay`` defaults to 1: the damping at the far edge of the box
    is then ``e^-1`` per step, well inside double range, and the packets
    themselves see a per-step damping five orders of magnitude smaller.
    """

    grid: Grid = field(default_factory=lambda: Grid(1024, 1.0, -512.0))
    params: PhysicalParams = field(default_factory=lambda: PhysicalParams(100.0, 1.0, 1.0))
    coupling: CouplingSpec = field(default_factory=lambda: CouplingSpec("omega", omega=0.1))
    x1: float = -20.0
    x2: float = 20.0
    width: float = 4.0
    dwell_steps: int = 16
    max_step_decay: float = 1.0
    threshold: float = 1e-3
    kinetic_enabled: bool = True
    weighting: str = "norm"
    max_steps: int = 200_000

    def __post_init__(self):
        if not self.x1 < self.x2:
            raise ConfigurationError("x1 must lie left of x2")
        if not 0.0 < self.threshold < 0.5:
            raise ConfigurationError("collapse threshold must lie in (0, 0.5)")
        if int(self.dwell_steps) != self.dwell_steps or self.dwell_steps < 1:
            raise ConfigurationError("dwell_steps must be a positive integer")
        if self.max_steps < self.dwell_steps:
            raise ConfigurationError("max_steps must cover at least one dwell block")

    @property
    def kappa(self) -> float:
        return coupling_from(self.coupling, self.params)

    @property
    def dt(self) -> float:
        return stable_dt(self.kappa, self.grid, self.params.hbar, self.max_step_decay)

    @property
    def boundary(self) -> float:
        return 0.5 * (self.x1 + self.x2)

    @property
    def t_max(self) -> float:
        return self.max_steps * self.dt

    def spec(self) -> EvolutionSpec:
        return EvolutionSpec(
            self.params,
            PotentialMode("non_hermitian_stochastic", self.kappa, 0.0),
            self.dt,
            self.kinetic_enabled,
            True,
            self.max_step_decay,
        )

    def initial_state(self, alpha2: float):
        if not 0.0 < alpha2 < 1.0:
            raise ConfigurationError(f"alpha2 must lie in (0, 1), got {alpha2!r}")
        hbar = self.params.hbar
        p1 = gaussian_packet(self.grid, self.x1, self.width, 0.0, hbar)
        p2 = gaussian_packet(self.grid, self.x2, self.width, 0.0, hbar)
        return superpose([(math.sqrt(alpha2), p1), (math.sqrt(1.0 - alpha2), p2)])


@dataclass(frozen=True)
class TrialOutcome:
    """Result of one trial.  ``selected_component`` is 1, 2, or 0 if not collapsed by t_max."""

    selected_component: int
    collapse_time: float
    seed: int


@dataclass
class BornResult:
    alpha2: float
    n_trials: int
    frequency: float
    ci95: float
    n_collapsed: int
    base_seed: int
    mean_collapse_time: float
    outcomes: list = field(default_factory=list, repr=False)

    def to_dict(self, with_outcomes: bool = True) -> dict:
        d = asdict(self)
        if with_outcomes:
            d["outcomes"] = [asdict(o) for o in self.outcomes]
        else:
            d.pop("outcomes")
        return d


def trial_seeds(base_seed: int, n_trials: int, start: int = 0) -> list[int]:
    """64-bit seed of trial ``i`` derived from ``(base_seed, i)`` only."""
    return [
        int(np.random.SeedSequence(int(base_seed), spawn_key=(i,)).generate_state(1, np.uint64)[0])
        for i in range(start, start + n_trials)
    ]


def run_trials(alpha2: float, seeds: Sequence[int], setup: BornSetup, batch_size: int = 256) -> list[TrialOutcome]:
    """Run one trial per seed, ``batch_size`` rows at a time."""
    seeds = list(seeds)
    out: list[TrialOutcome] = []
    for start in range(0, len(seeds), batch_size):
        out.extend(_run_batch(alpha2, seeds[start:start + batch_size], setup))
    return out


def _run_batch(alpha2: float, seeds: list[int], setup: BornSetup) -> list[TrialOutcome]:
    grid = setup.grid
    spec = setup.spec()
    spec.check(grid)
    psi0 = setup.initial_state(alpha2).amplitudes
    rows = len(seeds)
    prop = BatchPropagator(
        grid, np.tile(psi0, (rows, 1)), spec.dt, setup.params.total_mass,
        setup.params.hbar, setup.kinetic_enabled, True,
    )
    left = grid.positions < setup.boundary
    dwell = setup.dwell_steps
    decay = 2.0 * setup.kappa * dwell * spec.dt / setup.params.hbar
    seeds_arr = np.array(seeds, dtype=np.uint64)
    component = np.zeros(rows, dtype=int)
    when = np.full(rows, np.nan)
    block = 0
    while prop.rows and block * dwell < setup.max_steps:
        rows_seeds = seeds_arr[prop.ids]
        x0 = select_x0(rows_seeds, block, grid, prop.density(), decay, setup.weighting)
        prop.set_potential("non_hermitian_fixed", setup.kappa, x0)
        prop.advance(dwell)
        block += 1
        rho = prop.density()
        w1 = rho[:, left].sum(axis=1) / rho.sum(axis=1)
        won1 = w1 >= 1.0 - setup.threshold
        won2 = w1 <= setup.threshold
        ids = prop.ids
        component[ids[won1]] = 1
        component[ids[won2]] = 2
        when[ids[won1 | won2]] = prop.times[won1 | won2]
        prop.keep(~(won1 | won2))
    when[component == 0] = block * dwell * spec.dt
    return [TrialOutcome(int(c), float(t), int(s)) for c, t, s in zip(component, when, seeds)]


def collapse_trial(alpha2: float, setup: BornSetup, seed: int) -> TrialOutcome:
    """A single trial with noise seed ``seed``."""
    return _run_batch(alpha2, [int(seed)], setup)[0]


def _worker(args):
    alpha2, seeds, setup, batch_size = args
    return run_trials(alpha2, seeds, setup, batch_size)


def born_ensemble(
    alpha2: float,
    n_trials: int,
    base_seed: int,
    setup: BornSetup | None = None,
    workers: int = 1,
    batch_size: int = 256,
    max_uncollapsed: float = 0.01,
) -> BornResult:
    """Component-1 frequency over ``n_trials`` trials with its binomial 95% half-width.

    Uncollapsed trials are excluded from the frequency; more than
    ``max_uncollapsed`` of them raises :class:`CollapseFailure`.
    """
    if n_trials < 100:
        raise ConfigurationError("born_ensemble needs at least 100 trials")
    setup = setup or BornSetup()
    seeds = trial_seeds(base_seed, n_trials)
    workers = max(1, min(int(workers), os.cpu_count() or 1, n_trials))
    if workers == 1:
        outcomes = run_trials(alpha2, seeds, setup, batch_size)
    else:
        chunk = math.ceil(n_trials / workers)
        jobs = [(alpha2, seeds[i:i + chunk], setup, batch_size) for i in range(0, n_trials, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = [o for part in pool.map(_worker, jobs) for o in part]
    comp = np.array([o.selected_component for o in outcomes])
    collapsed = comp > 0
    n_collapsed = int(collapsed.sum())
    if n_trials - n_collapsed > max_uncollapsed * n_trials:
        raise CollapseFailure(
            f"{n_trials - n_collapsed} of {n_trials} trials did not collapse within t_max={setup.t_max:.6g}"
        )
    p = float(np.mean(comp[collapsed] == 1)) if n_collapsed else float("nan")
    ci = 1.96 * math.sqrt(p * (1.0 - p) / n_collapsed) if n_collapsed else float("nan")
    times = np.array([o.collapse_time for o in outcomes])[collapsed]
    return BornResult(
        alpha2, n_trials, p, ci, n_collapsed, int(base_seed),
        float(times.mean()) if n_collapsed else float("nan"), outcomes,
    )
