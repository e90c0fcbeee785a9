"""Split-operator integration of the non-unitary collective-coordinate dynamics.

The generator is ``P^2 / (2 N m)`` plus a quadratic term ``kappa (X - X0)^2``
that is either imaginary (non-Hermitian, suppressing every component in
proportion to its squared distance from ``X0``) or real (the Hermitian
control).  Both factors are diagonal in a known basis, so each sub-step is
exact and the symmetric (Strang) splitting is second order in ``dt``:

    psi <- K(dt/2) V(dt) K(dt/2) psi,
    K(t) = exp(-i t hbar k^2 / (2 N m))       (plane-wave basis)
    V(t) = exp(-kappa d^2 t / hbar)           (non-Hermitian)
    V(t) = exp(-i kappa d^2 t / hbar)         (Hermitian control)

with ``d`` the minimal-image distance to ``X0``.  The non-Hermitian factor is
taken with the decaying sign: components away from ``X0`` are damped, the
amplitude at ``X0`` is left untouched.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NormCollapseError, StepSizeError
from .grid import Grid, PhysicalParams, WaveFunction
from .noise import X0Source, select_x0

__all__ = [
    "PotentialMode",
    "EvolutionSpec",
    "Trajectory",
    "BatchPropagator",
    "DEFAULT_STEP_DECAY",
    "stable_dt",
    "kinetic_step",
    "potential_step",
    "step",
    "evolve",
]

POTENTIAL_KINDS = ("non_hermitian_fixed", "non_hermitian_stochastic", "hermitian_fixed", "none")

# Bound on kappa * L_max^2 * dt / hbar, L_max being the largest
# minimal-image distance on the grid.
DEFAULT_STEP_DECAY = 0.1
# exp(-700) is still a normal double.
REPRESENTABLE_LOG_DECAY = 700.0


@dataclass(frozen=True)
class PotentialMode:
    kind: str = "non_hermitian_fixed"
    kappa: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ConfigurationError(f"unknown potential kind {self.kind!r}")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ConfigurationError(f"kappa must be >= 0, got {self.kappa!r}")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.kappa > 0

    @property
    def hermitian(self) -> bool:
        return self.kind == "hermitian_fixed"


@dataclass(frozen=True)
class EvolutionSpec:
    params: PhysicalParams
    potential: PotentialMode
    dt: float
    kinetic_enabled: bool = True
    renormalize_each_step: bool = True
    max_step_decay: float = DEFAULT_STEP_DECAY

    def __post_init__(self):
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt!r}")
        if not self.max_step_decay > 0:
            raise ConfigurationError("max_step_decay must be > 0")

    def step_decay(self, grid: Grid) -> float:
        """kappa * L_max^2 * dt / hbar for this spec on ``grid``."""
        if not self.potential.active:
            return 0.0
        return self.potential.kappa * grid.max_distance**2 * self.dt / self.params.hbar

    def max_dt(self, grid: Grid) -> float:
        return stable_dt(self.potential.kappa, grid, self.params.hbar, self.max_step_decay)

    def diagnostics(self, grid: Grid) -> list[str]:
        decay = self.step_decay(grid)
        if decay > self.max_step_decay * (1 + 1e-12):
            return [
                f"stability bound violated: dt={self.dt!r} > {self.max_step_decay!r}*hbar/"
                f"(kappa*L_max^2) = {self.max_dt(grid)!r} "
                f"(kappa={self.potential.kappa!r}, L_max={grid.max_distance!r})"
            ]
        return []

    def check(self, grid: Grid) -> None:
        problems = self.diagnostics(grid)
        if problems:
            raise StepSizeError(problems[0])


def stable_dt(kappa: float, grid: Grid, hbar: float = 1.0, bound: float = DEFAULT_STEP_DECAY) -> float:
    """Largest dt with ``kappa * L_max^2 * dt / hbar <= bound``."""
    if kappa <= 0:
        return math.inf
    return bound * hbar / (kappa * grid.max_distance**2)


@dataclass
class Trajectory:
    """Observables recorded along one run.

    ``log_norms`` is ``log(|psi_raw(t)| / |psi(0)|)`` where ``psi_raw`` is the
    never-renormalized evolution, accumulated from the per-step factors.
    """

    times: np.ndarray
    log_norms: np.ndarray
    x_means: np.ndarray
    spreads: np.ndarray
    kinetic_energies: np.ndarray
    region_weights_series: np.ndarray | None = None
    boundaries: tuple[float, ...] = ()
    x0_values: np.ndarray | None = None
    final_state: WaveFunction | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.times)

    def to_csv(self, path, header: dict | None = None) -> Path:
        """Write ``t, log_norm, x_mean, spread, w_region_*, kinetic_energy``.

        ``header`` entries are written first as ``# key=value`` comment lines.
        """
        path = Path(path)
        columns = ["t", "log_norm", "x_mean", "spread"]
        w = self.region_weights_series
        if w is not None:
            columns += [f"w_region_{i}" for i in range(w.shape[1])]
        columns.append("kinetic_energy")
        with path.open("w", newline="") as fh:
            for key, value in (header or {}).items():
                fh.write(f"# {key}={value}\n")
            out = csv.writer(fh)
            out.writerow(columns)
            for i in range(len(self.times)):
                row = [self.times[i], self.log_norms[i], self.x_means[i], self.spreads[i]]
                if w is not None:
                    row.extend(w[i])
                row.append(self.kinetic_energies[i])
                out.writerow([repr(float(v)) for v in row])
        return path


def _kinetic_factor(grid: Grid, dt, total_mass, hbar: float) -> np.ndarray:
    dt = np.asarray(dt, dtype=float)
    total_mass = np.asarray(total_mass, dtype=float)
    k2 = grid.wavenumbers**2
    if dt.ndim == 0 and total_mass.ndim == 0:
        return np.exp(-1j * (dt * hbar / (2.0 * total_mass)) * k2)
    coef = np.broadcast_to(dt * hbar / (2.0 * total_mass), np.broadcast_shapes(dt.shape, total_mass.shape))
    return np.exp(-1j * coef[:, None] * k2)


def _potential_factor(grid: Grid, kind: str, kappa, x0, dt, hbar: float) -> np.ndarray | None:
    if kind == "none":
        return None
    d = grid.displacement(x0)
    kappa = np.asarray(kappa, dtype=float)
    dt = np.asarray(dt, dtype=float)
    arg = kappa * dt / hbar
    if d.ndim == 2:
        arg = np.broadcast_to(arg, (d.shape[0],))[:, None]
    if kind == "hermitian_fixed":
        return np.exp(-1j * arg * d * d)
    return np.exp(-arg * d * d)


def kinetic_step(psi: WaveFunction, dt: float, params: PhysicalParams) -> WaveFunction:
    """Exact free propagation over ``dt`` in the plane-wave basis."""
    phase = _kinetic_factor(psi.grid, dt, params.total_mass, params.hbar)
    return WaveFunction(np.fft.ifft(phase * np.fft.fft(psi.amplitudes)), psi.grid)


def potential_step(
    psi: WaveFunction,
    dt: float,
    mode: PotentialMode,
    x0: float | None = None,
    hbar: float = 1.0,
    max_log_decay: float = REPRESENTABLE_LOG_DECAY,
) -> WaveFunction:
    """Apply the quadratic term for a time ``dt`` centred on ``x0``.

    Non-Hermitian kinds damp each amplitude by ``exp(-kappa d^2 dt / hbar)``;
    ``hermitian_fixed`` multiplies by the phase ``exp(-i kappa d^2 dt / hbar)``.
    ``x0`` defaults to ``mode.x0``.  A step whose largest log-damping exceeds
    ``max_log_decay`` raises :class:`StepSizeError`.
    """
    if not mode.active:
        return WaveFunction(psi.amplitudes, psi.grid)
    x0 = mode.x0 if x0 is None else x0
    d = psi.grid.displacement(x0)
    log_decay = mode.kappa * float(np.max(d * d)) * dt / hbar
    if log_decay > max_log_decay:
        raise StepSizeError(
            f"per-step log-amplification {log_decay:.4g} exceeds the bound {max_log_decay:.4g}; "
            "reduce dt"
        )
    factor = _potential_factor(psi.grid, mode.kind, mode.kappa, x0, dt, hbar)
    return WaveFunction(factor * psi.amplitudes, psi.grid)


def step(psi: WaveFunction, spec: EvolutionSpec, x0: float | None = None) -> tuple[WaveFunction, float]:
    """One Strang step.  Returns the new state and the norm ratio out/in.

    With ``renormalize_each_step`` the returned state has unit norm.
    """
    grid = psi.grid
    spec.check(grid)
    norm_in = psi.norm
    out = psi
    half = 0.5 * spec.dt
    if spec.kinetic_enabled:
        out = kinetic_step(out, half, spec.params)
    out = potential_step(out, spec.dt, spec.potential, x0, spec.params.hbar)
    if spec.kinetic_enabled:
        out = kinetic_step(out, half, spec.params)
    factor = out.norm / norm_in
    if not factor > 0 or not np.isfinite(factor):
        raise NormCollapseError("state norm vanished during the step")
    if spec.renormalize_each_step:
        out = out.scaled(1.0 / out.norm)
    return out, factor


class BatchPropagator:
    """Strang propagation of ``rows`` independent states sharing one grid.

    Every row is processed with exactly the arithmetic it would see on its
    own (numpy's FFT and elementwise kernels act row by row), so results do
    not depend on how runs are grouped into batches.
    """

    def __init__(
        self,
        grid: Grid,
        psi: np.ndarray,
        dt,
        total_mass,
        hbar: float = 1.0,
        kinetic_enabled: bool = True,
        renormalize: bool = True,
    ):
        self.grid = grid
        self.psi = np.array(np.atleast_2d(psi), dtype=np.complex128)
        rows = self.psi.shape[0]
        self.hbar = hbar
        self.kinetic_enabled = kinetic_enabled
        self.renormalize = renormalize
        self.dt = np.broadcast_to(np.asarray(dt, dtype=float), (rows,)).copy()
        self.total_mass = np.broadcast_to(np.asarray(total_mass, dtype=float), (rows,)).copy()
        self.ids = np.arange(rows)
        self.steps = np.zeros(rows, dtype=np.int64)
        norm2 = self._norm2()
        if np.any(~(norm2 > 0)):
            raise ConfigurationError("zero state in batch")
        self.log_norm0 = 0.5 * np.log(norm2)
        self.log_norm = self.log_norm0.copy()
        if renormalize:
            self.psi /= np.sqrt(norm2)[:, None]
        self._shared_kinetic = bool(np.all(self.dt == self.dt[0]) and np.all(self.total_mass == self.total_mass[0]))
        self._half = self._full = None
        if kinetic_enabled:
            self._build_kinetic()
        self._pot = None

    @property
    def rows(self) -> int:
        return self.psi.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.dt

    def _norm2(self) -> np.ndarray:
        p = self.psi
        return np.sum(p.real**2 + p.imag**2, axis=1) * self.grid.spacing

    def _build_kinetic(self):
        if self._shared_kinetic:
            half = _kinetic_factor(self.grid, 0.5 * self.dt[0], self.total_mass[0], self.hbar)[None, :]
            full = _kinetic_factor(self.grid, self.dt[0], self.total_mass[0], self.hbar)[None, :]
        else:
            half = _kinetic_factor(self.grid, 0.5 * self.dt, self.total_mass, self.hbar)
            full = _kinetic_factor(self.grid, self.dt, self.total_mass, self.hbar)
        self._half, self._full = half, full

    def set_potential(self, kind: str, kappa, x0) -> None:
        rows = self.rows
        kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (rows,))
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (rows,))
        self._pot = _potential_factor(self.grid, kind, kappa, x0, self.dt, self.hbar)

    def keep(self, mask: np.ndarray) -> None:
        """Drop the rows where ``mask`` is False."""
        mask = np.asarray(mask, dtype=bool)
        self.psi = self.psi[mask]
        self.dt = self.dt[mask]
        self.total_mass = self.total_mass[mask]
        self.ids = self.ids[mask]
        self.steps = self.steps[mask]
        self.log_norm = self.log_norm[mask]
        self.log_norm0 = self.log_norm0[mask]
        if self._half is not None and not self._shared_kinetic:
            self._half = self._half[mask]
            self._full = self._full[mask]
        if self._pot is not None:
            self._pot = self._pot[mask]

    def _kinetic(self, phase):
        self.psi = np.fft.ifft(phase * np.fft.fft(self.psi, axis=1), axis=1)

    def _apply_potential(self):
        if self._pot is not None:
            self.psi *= self._pot
        if self.renormalize:
            norm2 = self._norm2()
            if np.any(~(norm2 > 0)) or not np.all(np.isfinite(norm2)):
                raise NormCollapseError("state norm vanished (all amplitudes underflowed)")
            self.psi /= np.sqrt(norm2)[:, None]
            self.log_norm += 0.5 * np.log(norm2)

    def advance(self, n_steps: int) -> None:
        """Take ``n_steps`` Strang steps; interior half kinetic steps are merged."""
        if n_steps <= 0 or self.rows == 0:
            return
        if self.kinetic_enabled:
            self._kinetic(self._half)
            for s in range(n_steps):
                self._apply_potential()
                self._kinetic(self._full if s < n_steps - 1 else self._half)
        else:
            for _ in range(n_steps):
                self._apply_potential()
        self.steps += n_steps
        if not self.renormalize:
            norm2 = self._norm2()
            if np.any(~(norm2 > 0)) or not np.all(np.isfinite(norm2)):
                raise NormCollapseError("state norm vanished (all amplitudes underflowed)")
            self.log_norm = 0.5 * np.log(norm2)

    # observables, row by row, relative to the instantaneous norm
    def density(self) -> np.ndarray:
        p = self.psi
        return p.real**2 + p.imag**2

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        rho = self.density()
        x = self.grid.positions
        total = rho.sum(axis=1)
        mean = rho @ x / total
        var = np.sum(rho * (x[None, :] - mean[:, None]) ** 2, axis=1) / total
        return mean, np.sqrt(np.maximum(var, 0.0))

    def kinetic_energy(self) -> np.ndarray:
        phi = np.fft.fft(self.psi, axis=1)
        w = phi.real**2 + phi.imag**2
        k2 = self.grid.wavenumbers**2
        return self.hbar**2 * (w @ k2) / (2.0 * self.total_mass * w.sum(axis=1))

    def region_weights(self, boundaries: Sequence[float]) -> np.ndarray:
        rho = self.density()
        labels = np.searchsorted(np.asarray(boundaries, dtype=float), self.grid.positions, side="right")
        k = len(boundaries) + 1
        onehot = np.zeros((self.grid.n_points, k))
        onehot[np.arange(self.grid.n_points), labels] = 1.0
        return (rho @ onehot) / rho.sum(axis=1)[:, None]

    def state(self, row: int = 0) -> WaveFunction:
        return WaveFunction(self.psi[row], self.grid)


def evolve(
    psi: WaveFunction,
    spec: EvolutionSpec,
    t_final: float,
    record_every: int = 1,
    x0_source: X0Source | None = None,
    boundaries: Sequence[float] | None = None,
) -> Trajectory:
    """Integrate from ``psi`` up to ``t_final`` and record observables.

    Records are taken at ``t = 0``, every ``record_every`` steps and after the
    last step.  ``x0_source`` supplies the localization centre: by default
    the fixed ``spec.potential.x0``; a white-noise source re-draws it every
    ``dwell_steps`` steps (see :func:`unitarity_lab.noise.select_x0`).
    """
    grid = psi.grid
    if not t_final > 0:
        raise ConfigurationError("t_final must be > 0")
    if int(record_every) != record_every or record_every < 1:
        raise ConfigurationError("record_every must be a positive integer")
    spec.check(grid)
    mode = spec.potential
    if x0_source is None:
        x0_source = X0Source.fixed(mode.x0)
    stochastic = x0_source.stochastic
    if mode.kind == "non_hermitian_stochastic" and not stochastic:
        raise ConfigurationError("stochastic potential needs a white-noise X0 source")
    n_steps = max(1, math.ceil(t_final / spec.dt - 1e-9))
    bounds = tuple(boundaries) if boundaries is not None else ()
    if bounds:
        from .grid import region_weights

        region_weights(psi, bounds)  # validates the boundaries

    prop = BatchPropagator(
        grid,
        psi.amplitudes,
        spec.dt,
        spec.params.total_mass,
        spec.params.hbar,
        spec.kinetic_enabled,
        spec.renormalize_each_step,
    )
    kind = mode.kind if mode.active else "none"
    records: list[tuple] = []
    x0_log: list[float] = []

    def record():
        mean, sd = prop.moments()
        w = prop.region_weights(bounds)[0] if bounds else None
        records.append(
            (prop.steps[0] * spec.dt, prop.log_norm[0] - prop.log_norm0[0], mean[0], sd[0],
             prop.kinetic_energy()[0], w)
        )

    if not stochastic:
        prop.set_potential(kind, mode.kappa, x0_source.value)
        x0_log.append(x0_source.value)
    record()
    dwell = x0_source.dwell_steps if stochastic else n_steps
    done = 0
    while done < n_steps:
        if stochastic and done % dwell == 0:
            block = done // dwell
            tau = dwell * spec.dt
            x0 = select_x0(
                [x0_source.seed], block, grid, prop.density(),
                2.0 * mode.kappa * tau / spec.params.hbar, x0_source.weighting,
            )[0]
            prop.set_potential(kind, mode.kappa, x0)
            x0_log.append(x0)
        next_record = (done // record_every + 1) * record_every
        next_block = (done // dwell + 1) * dwell
        chunk = min(next_record, next_block, n_steps) - done
        prop.advance(chunk)
        done += chunk
        if done % record_every == 0 or done == n_steps:
            record()

    cols = list(zip(*records))
    weights = np.array(cols[5]) if bounds else None
    return Trajectory(
        times=np.array(cols[0]),
        log_norms=np.array(cols[1]),
        x_means=np.array(cols[2]),
        spreads=np.array(cols[3]),
        kinetic_energies=np.array(cols[4]),
        region_weights_series=weights,
        boundaries=bounds,
        x0_values=np.array(x0_log),
        final_state=prop.state(0),
    )
