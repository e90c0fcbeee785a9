"""Localization and re-location times, their scaling, and the limits table.

Both time scales are first crossings on recorded observables:

* localization: a flat initial state, first record with spread <= a;
* re-location: a packet released at ``X0 + distance``, first record with
  ``|<X> - X0| <= a`` (displacement taken as the minimal image about X0).

Runs that share a grid are integrated together as rows of one
:class:`~unitarity_lab.engine.BatchPropagator`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ..engine import DEFAULT_STEP_DECAY, BatchPropagator, EvolutionSpec, PotentialMode, stable_dt
from ..errors import ConfigurationError, TimeLimitExceeded
from ..grid import Grid, PhysicalParams, gaussian_packet, uniform_state
from ..noise import CouplingSpec, X0Source, coupling_from, select_x0

__all__ = [
    "TimescaleSetup",
    "ScalingResult",
    "LimitsTable",
    "localization_time",
    "relocation_time",
    "first_crossing_times",
    "scaling_sweep",
    "limits_table",
    "fit_power_law",
]

MEASURES = ("loc", "reloc")
SWEEP_PARAMETERS = ("omega", "n_particles", "distance", "gamma", "mass")


@dataclass(frozen=True)
class TimescaleSetup:
    """Everything needed to turn one parameter point into a run.

    ``dt`` defaults to the largest step allowed by ``max_step_decay``, capped
    so that at least ``samples`` records fall inside the expected time.
    ``width`` is the re-location packet width; ``None`` picks the ground
    state width of the trap, ``sqrt(hbar / (2 M Omega))``, but never less
    than one lattice spacing.
    """

    grid: Grid = field(default_factory=lambda: Grid(1024, 1.0, -512.0))
    params: PhysicalParams = field(default_factory=PhysicalParams)
    coupling: CouplingSpec = field(default_factory=lambda: CouplingSpec("omega", omega=0.1))
    kinetic_enabled: bool = True
    max_step_decay: float = DEFAULT_STEP_DECAY
    x0: float = 0.0
    distance: float = 10.0
    width: float | None = None
    samples: int = 100
    t_max_factor: float = 50.0
    t_max: float | None = None

    @property
    def kappa(self) -> float:
        return coupling_from(self.coupling, self.params)

    @property
    def omega_equivalent(self) -> float:
        """Trap frequency giving the same kappa: sqrt(2 kappa / (N m))."""
        return math.sqrt(2.0 * self.kappa / self.params.total_mass)

    def expected(self, measure: str) -> float:
        a = self.grid.spacing
        t_loc = self.params.hbar / (4.0 * self.kappa * a * a)
        if measure == "loc":
            return t_loc
        t_reloc = abs(self.distance) / (a * self.omega_equivalent)
        return t_reloc if t_reloc > 0 else t_loc

    def dt(self, measure: str) -> float:
        bound = stable_dt(self.kappa, self.grid, self.params.hbar, self.max_step_decay)
        return min(bound, self.expected(measure) / self.samples)

    def record_every(self, measure: str) -> int:
        return max(1, int(self.expected(measure) / (self.samples * self.dt(measure))))

    def time_limit(self, measure: str) -> float:
        return self.t_max if self.t_max is not None else self.t_max_factor * self.expected(measure)

    def packet_width(self) -> float:
        if self.width is not None:
            return self.width
        natural = math.sqrt(self.params.hbar / (2.0 * self.params.total_mass * self.omega_equivalent))
        return max(self.grid.spacing, natural)

    def spec(self, measure: str) -> EvolutionSpec:
        return EvolutionSpec(
            self.params,
            PotentialMode("non_hermitian_fixed", self.kappa, self.x0),
            self.dt(measure),
            self.kinetic_enabled,
            True,
            self.max_step_decay,
        )

    def release_point(self) -> float:
        """X0 + distance, wrapped into the box."""
        g = self.grid
        return g.origin + (self.x0 + self.distance - g.origin) % g.extent

    def initial_state(self, measure: str):
        if measure == "loc":
            return uniform_state(self.grid)
        return gaussian_packet(self.grid, self.release_point(), self.packet_width(), 0.0, self.params.hbar)

    def with_value(self, parameter: str, value: float) -> "TimescaleSetup":
        if parameter in ("n_particles", "mass"):
            return replace(self, params=replace(self.params, **{parameter: value}))
        if parameter in ("omega", "gamma"):
            if self.coupling.mode != parameter:
                raise ConfigurationError(f"sweeping {parameter} needs coupling mode {parameter!r}")
            return replace(self, coupling=replace(self.coupling, **{parameter: value}))
        if parameter == "distance":
            return replace(self, distance=value)
        raise ConfigurationError(f"unknown sweep parameter {parameter!r}; expected one of {SWEEP_PARAMETERS}")


@dataclass
class ScalingResult:
    swept_parameter: str
    measure: str
    values: list
    measured_times: list
    fitted_exponent: float
    fit_residual: float
    expected_times: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LimitsTable:
    n_values: list
    omega_values: list
    t_loc: np.ndarray
    t_reloc: np.ndarray

    def loc_decreasing_in_n(self) -> bool:
        return bool(np.all(np.diff(self.t_loc, axis=0) < 0))

    def loc_growing_as_omega_shrinks(self) -> bool:
        return _grows_as_omega_shrinks(self.t_loc, self.omega_values)

    def reloc_growing_as_omega_shrinks(self) -> bool:
        return _grows_as_omega_shrinks(self.t_reloc, self.omega_values)

    def to_dict(self) -> dict:
        return {
            "n_values": list(self.n_values),
            "omega_values": list(self.omega_values),
            "t_loc": self.t_loc.tolist(),
            "t_reloc": self.t_reloc.tolist(),
            "loc_decreasing_in_n": self.loc_decreasing_in_n(),
            "loc_growing_as_omega_shrinks": self.loc_growing_as_omega_shrinks(),
            "reloc_growing_as_omega_shrinks": self.reloc_growing_as_omega_shrinks(),
        }


def _grows_as_omega_shrinks(table: np.ndarray, omegas) -> bool:
    order = np.argsort(omegas)[::-1]  # decreasing omega
    return bool(np.all(np.diff(table[:, order], axis=1) > 0))


def fit_power_law(values, times) -> tuple[float, float]:
    """Least-squares slope of log(time) against log(value) and the RMS residual."""
    lv = np.log(np.asarray(values, dtype=float))
    lt = np.log(np.asarray(times, dtype=float))
    slope, intercept = np.polyfit(lv, lt, 1)
    resid = lt - (slope * lv + intercept)
    return float(slope), float(np.sqrt(np.mean(resid**2)))


def first_crossing_times(
    grid: Grid,
    specs: Sequence[EvolutionSpec],
    states: np.ndarray,
    measure: str,
    x0: Sequence[float],
    record_every: int,
    t_max: Sequence[float],
    x0_source: X0Source | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """First recorded crossing time for each row; NaN where ``t_max`` was hit first.

    Returns ``(times, final_values)`` where ``final_values`` holds the last
    recorded spread (or distance) of every row.
    """
    if measure not in MEASURES:
        raise ConfigurationError(f"unknown measure {measure!r}")
    if record_every < 1:
        raise ConfigurationError("record_every must be >= 1")
    specs = list(specs)
    first = specs[0]
    for s in specs:
        s.check(grid)
        if (s.kinetic_enabled, s.params.hbar, s.potential.kind) != (
            first.kinetic_enabled, first.params.hbar, first.potential.kind
        ):
            raise ConfigurationError("rows of one batch must share kinetic flag, hbar and potential kind")
    rows = len(specs)
    kind = first.potential.kind if first.potential.kind != "non_hermitian_stochastic" else "non_hermitian_fixed"
    kappas = np.array([s.potential.kappa for s in specs])
    if np.all(kappas == 0):
        kind = "none"
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (rows,)).copy()
    t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (rows,))
    prop = BatchPropagator(
        grid, states, [s.dt for s in specs], [s.params.total_mass for s in specs],
        first.params.hbar, first.kinetic_enabled, True,
    )
    stochastic = x0_source is not None and x0_source.stochastic
    dwell = x0_source.dwell_steps if stochastic else None
    if not stochastic:
        prop.set_potential(kind, kappas, x0)
    a = grid.spacing
    out = np.full(rows, np.nan)
    final = np.full(rows, np.nan)
    current_x0 = x0

    def metric():
        if measure == "loc":
            return prop.moments()[1]
        d = grid.displacement(current_x0[prop.ids])
        rho = prop.density()
        return np.abs(np.sum(rho * d, axis=1) / rho.sum(axis=1))

    def settle(value):
        hit = value <= a
        ids = prop.ids
        final[ids] = value
        out[ids[hit]] = prop.times[hit]
        timeout = ~hit & (prop.times >= t_max[ids] * (1 - 1e-12))
        prop.keep(~(hit | timeout))

    settle(metric())
    done = 0
    while prop.rows:
        if stochastic and done % dwell == 0:
            ids = prop.ids
            tau = dwell * prop.dt
            chosen = select_x0(
                [x0_source.seed] * prop.rows, done // dwell, grid, prop.density(),
                2.0 * kappas[ids] * tau / first.params.hbar, x0_source.weighting,
            )
            current_x0 = current_x0.copy()
            current_x0[ids] = chosen
            prop.set_potential(kind, kappas[ids], chosen)
        next_record = (done // record_every + 1) * record_every
        chunk = next_record - done
        if stochastic:
            chunk = min(chunk, (done // dwell + 1) * dwell - done)
        prop.advance(chunk)
        done += chunk
        if done % record_every == 0:
            settle(metric())
    return out, final


def _default_limits(spec: EvolutionSpec, grid: Grid, measure: str, t_max, record_every):
    kappa = spec.potential.kappa
    if kappa > 0:
        expected = spec.params.hbar / (4.0 * kappa * grid.spacing**2)
    else:
        expected = None
    if t_max is None:
        t_max = 50.0 * expected if expected is not None else 1.0e4 * spec.dt
    if record_every is None:
        basis = expected if expected is not None else t_max
        record_every = max(1, int(basis / (100 * spec.dt)))
    return float(t_max), int(record_every)


def localization_time(
    spec: EvolutionSpec,
    grid: Grid,
    x0_source: X0Source | None = None,
    t_max: float | None = None,
    record_every: int | None = None,
) -> float:
    """First recorded time at which a flat initial state has spread <= a.

    Raises :class:`TimeLimitExceeded` (carrying the final spread) if the
    threshold is not reached by ``t_max`` (default: 50 times the bare-decay
    estimate ``hbar / (4 kappa a^2)``).
    """
    t_max, record_every = _default_limits(spec, grid, "loc", t_max, record_every)
    x0 = spec.potential.x0 if x0_source is None or x0_source.stochastic else x0_source.value
    times, final = first_crossing_times(
        grid, [spec], uniform_state(grid).amplitudes[None, :], "loc", [x0], record_every, [t_max], x0_source
    )
    if np.isnan(times[0]):
        raise TimeLimitExceeded(
            f"spread still {final[0]:.6g} > a at t_max={t_max:.6g}", t_max, float(final[0])
        )
    return float(times[0])


def relocation_time(
    spec: EvolutionSpec,
    grid: Grid,
    x_init: float,
    width: float | None = None,
    t_max: float | None = None,
    record_every: int | None = None,
) -> float:
    """First recorded time at which ``|<X> - X0| <= a`` for a packet released at ``x_init``.

    ``width`` defaults to ``max(a, sqrt(hbar / (2 M Omega)))`` with Omega the
    trap frequency equivalent to ``kappa``.
    """
    mode = spec.potential
    if mode.kappa <= 0 and width is None:
        raise ConfigurationError("relocation without coupling needs an explicit packet width")
    M = spec.params.total_mass
    if width is None:
        omega = math.sqrt(2.0 * mode.kappa / M)
        width = max(grid.spacing, math.sqrt(spec.params.hbar / (2.0 * M * omega)))
    if t_max is None or record_every is None:
        if mode.kappa > 0:
            omega = math.sqrt(2.0 * mode.kappa / M)
            L = grid.extent
            dist = abs((x_init - mode.x0 + 0.5 * L) % L - 0.5 * L)
            expected = max(dist / (grid.spacing * omega), spec.dt)
        else:
            expected = 1.0e4 * spec.dt
        t_max = 50.0 * expected if t_max is None else t_max
        record_every = max(1, int(expected / (100 * spec.dt))) if record_every is None else record_every
    psi = gaussian_packet(grid, x_init, width, 0.0, spec.params.hbar)
    times, final = first_crossing_times(
        grid, [spec], psi.amplitudes[None, :], "reloc", [mode.x0], record_every, [t_max]
    )
    if np.isnan(times[0]):
        raise TimeLimitExceeded(
            f"<X> still {final[0]:.6g} from X0 at t_max={t_max:.6g}", t_max, float(final[0])
        )
    return float(times[0])


def _run_setups(setups: Sequence[TimescaleSetup], measure: str) -> np.ndarray:
    grid = setups[0].grid
    if any(s.grid != grid for s in setups):
        raise ConfigurationError("all sweep points must share one grid")
    specs = [s.spec(measure) for s in setups]
    states = np.stack([s.initial_state(measure).amplitudes for s in setups])
    record_every = min(s.record_every(measure) for s in setups)
    t_max = [s.time_limit(measure) for s in setups]
    times, final = first_crossing_times(
        grid, specs, states, measure, [s.x0 for s in setups], record_every, t_max
    )
    failed = np.flatnonzero(np.isnan(times))
    if failed.size:
        i = int(failed[0])
        raise TimeLimitExceeded(
            f"{len(failed)} of {len(setups)} runs did not cross the threshold "
            f"(first: row {i}, final value {final[i]:.6g})",
            float(t_max[i]),
            float(final[i]),
        )
    return times


def _check_log_spaced(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size < 4:
        raise ConfigurationError("a scaling sweep needs at least 4 values")
    if np.any(~(v > 0)):
        raise ConfigurationError("sweep values must be strictly positive")
    ratios = v[1:] / v[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-6) or ratios[0] == 1:
        raise ConfigurationError("sweep values must be log-spaced")
    return v


def scaling_sweep(
    base: TimescaleSetup,
    parameter: str,
    values: Sequence[float],
    measure: str,
) -> ScalingResult:
    """Measure ``measure`` ('loc' or 'reloc') over log-spaced ``values`` of ``parameter``."""
    if measure not in MEASURES:
        raise ConfigurationError(f"unknown measure {measure!r}")
    v = _check_log_spaced(values)
    setups = [base.with_value(parameter, float(x)) for x in v]
    times = _run_setups(setups, measure)
    slope, resid = fit_power_law(v, times)
    return ScalingResult(
        parameter,
        measure,
        [float(x) for x in v],
        [float(t) for t in times],
        slope,
        resid,
        [float(s.expected(measure)) for s in setups],
    )


def _check_table_axis(values, name) -> list[float]:
    v = np.asarray(values, dtype=float)
    if v.size < 3 or np.any(~(v > 0)):
        raise ConfigurationError(f"{name} needs at least 3 positive values")
    ratios = v[1:] / v[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-6) or ratios[0] == 1:
        raise ConfigurationError(f"{name} must be log-spaced")
    return [float(x) for x in v]


def limits_table(
    n_values: Sequence[float],
    omega_values: Sequence[float],
    loc_setup: TimescaleSetup | None = None,
    reloc_setup: TimescaleSetup | None = None,
) -> LimitsTable:
    """t_loc and t_reloc over the (N, Omega) grid of values.

    Defaults: localization on the standard 1024-point grid at the default
    step bound; re-location of a packet one lattice spacing wide released
    10 a from X0, with the per-step bound relaxed to 10 (the packet never
    leaves the neighbourhood of X0, where the damping per step stays small;
    a dt-halving check is part of the test suite).
    """
    ns = _check_table_axis(n_values, "n_values")
    oms = _check_table_axis(omega_values, "omega_values")
    loc_setup = loc_setup or TimescaleSetup()
    if reloc_setup is None:
        reloc_setup = TimescaleSetup(width=1.0, max_step_decay=10.0, distance=10.0)
    tables = []
    for measure, base in (("loc", loc_setup), ("reloc", reloc_setup)):
        setups = [
            base.with_value("n_particles", n).with_value("omega", om) for n in ns for om in oms
        ]
        tables.append(_run_setups(setups, measure).reshape(len(ns), len(oms)))
    return LimitsTable(ns, oms, tables[0], tables[1])
