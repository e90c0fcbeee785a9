"""Periodic 1-D lattice, wavefunction states and norm-relative observables.

Wavefunctions are never assumed to be normalized.  Every observable is the
ratio <psi|O|psi> / <psi|psi>, so a state and any nonzero multiple of it give
identical physics.  The discrete norm includes the lattice spacing,
``norm2 = sum(|psi_j|**2) * spacing``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Grid",
    "WaveFunction",
    "PhysicalParams",
    "make_grid",
    "uniform_state",
    "gaussian_packet",
    "superpose",
    "expectation",
    "spread",
    "region_weights",
    "momentum_expectation",
    "kinetic_energy",
    "write_snapshot",
    "read_snapshot",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice: ``x_j = origin + j * spacing``."""

    n_points: int
    spacing: float = 1.0
    origin: float = 0.0

    def __post_init__(self):
        n = self.n_points
        if isinstance(n, bool) or int(n) != n or n < 8 or (int(n) & (int(n) - 1)):
            raise ConfigurationError(
                f"n_points must be a power of two >= 8, got {n!r}"
            )
        object.__setattr__(self, "n_points", int(n))
        if not np.isfinite(self.spacing) or self.spacing <= 0:
            raise ConfigurationError(f"spacing must be > 0, got {self.spacing!r}")
        if not np.isfinite(self.origin):
            raise ConfigurationError(f"origin must be finite, got {self.origin!r}")

    def position(self, j: int) -> float:
        return self.origin + j * self.spacing

    @cached_property
    def positions(self) -> np.ndarray:
        x = self.origin + np.arange(self.n_points) * self.spacing
        x.setflags(write=False)
        return x

    @property
    def extent(self) -> float:
        """Length of the periodic box."""
        return self.n_points * self.spacing

    @property
    def max_distance(self) -> float:
        """Largest minimal-image distance between two points of the box."""
        return 0.5 * self.extent

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        k = 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)
        k.setflags(write=False)
        return k

    def contains(self, x: float) -> bool:
        return self.origin <= x < self.origin + self.extent

    def displacement(self, x0) -> np.ndarray:
        """Minimal-image displacement ``x_j - x0`` for every grid point.

        ``x0`` may be a scalar or an array of shape ``(rows,)``; the result then
        has shape ``(rows, n_points)``.
        """
        L = self.extent
        x0 = np.asarray(x0, dtype=float)
        d = self.positions - x0[..., None] if x0.ndim else self.positions - x0
        return (d + 0.5 * L) % L - 0.5 * L


def make_grid(n_points: int, spacing: float = 1.0, origin: float = 0.0) -> Grid:
    return Grid(n_points, float(spacing), float(origin))


@dataclass(frozen=True)
class PhysicalParams:
    """Particle number N, mass per particle m and hbar.  Total mass is N*m."""

    n_particles: float = 1.0
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("n_particles", "mass", "hbar"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ConfigurationError(f"{name} must be > 0, got {v!r}")

    @property
    def total_mass(self) -> float:
        return self.n_particles * self.mass


class WaveFunction:
    """Complex amplitudes on a grid.  The norm is tracked, never enforced."""

    __slots__ = ("amplitudes", "grid")

    def __init__(self, amplitudes, grid: Grid):
        amp = np.array(amplitudes, dtype=np.complex128)
        if amp.shape != (grid.n_points,):
            raise ConfigurationError(
                f"expected {grid.n_points} amplitudes, got shape {amp.shape}"
            )
        if not np.all(np.isfinite(amp)):
            raise ConfigurationError("amplitudes must be finite")
        self.amplitudes = amp
        self.grid = grid
        if not self.norm2 > 0:
            raise ConfigurationError("zero state is not a valid wavefunction")

    @property
    def density(self) -> np.ndarray:
        return self.amplitudes.real**2 + self.amplitudes.imag**2

    @property
    def norm2(self) -> float:
        return float(np.sum(self.density) * self.grid.spacing)

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.norm2))

    def scaled(self, c: complex) -> "WaveFunction":
        return WaveFunction(c * self.amplitudes, self.grid)

    def normalized(self) -> "WaveFunction":
        return self.scaled(1.0 / self.norm)

    def __repr__(self):
        return f"WaveFunction(n={self.grid.n_points}, norm2={self.norm2:.6g})"


def uniform_state(grid: Grid) -> WaveFunction:
    """Zero-momentum plane wave with unit norm."""
    amp = np.full(grid.n_points, 1.0 / np.sqrt(grid.extent), dtype=np.complex128)
    return WaveFunction(amp, grid)


def gaussian_packet(
    grid: Grid,
    center: float,
    width: float,
    momentum: float = 0.0,
    hbar: float = 1.0,
) -> WaveFunction:
    """Unit-norm Gaussian packet whose density has standard deviation ``width``.

    The envelope uses minimal-image distances to ``center``, so a packet near
    the edge of the box wraps smoothly.
    """
    if not grid.contains(center):
        raise ConfigurationError(f"center {center} lies outside the grid extent")
    if not width >= grid.spacing:
        raise ConfigurationError(
            f"packet width {width} is below the lattice spacing {grid.spacing}"
        )
    d = grid.displacement(center)
    amp = np.exp(-(d**2) / (4.0 * width**2)) * np.exp(1j * momentum * (center + d) / hbar)
    amp /= np.sqrt(np.sum(np.abs(amp) ** 2) * grid.spacing)
    return WaveFunction(amp, grid)


def superpose(components: Iterable[tuple[complex, WaveFunction]]) -> WaveFunction:
    """Pointwise weighted sum of packets.  The result is not renormalized."""
    components = list(components)
    if not components:
        raise ConfigurationError("superpose needs at least one component")
    grid = components[0][1].grid
    total = np.zeros(grid.n_points, dtype=np.complex128)
    for amplitude, packet in components:
        if packet.grid != grid:
            raise ConfigurationError("all packets must share one grid")
        total += amplitude * packet.amplitudes
    if not np.any(total):
        raise ConfigurationError("superposition cancels to the zero state")
    return WaveFunction(total, grid)


def expectation(psi: WaveFunction, observable) -> float:
    """<psi|O|psi> / <psi|psi> for an observable diagonal in position."""
    rho = psi.density
    total = rho.sum()
    if not total > 0:
        raise ConfigurationError("expectation of the zero state")
    return float(np.dot(rho, np.asarray(observable, dtype=float)) / total)


def spread(psi: WaveFunction) -> float:
    x = psi.grid.positions
    mean = expectation(psi, x)
    var = expectation(psi, (x - mean) ** 2)
    return float(np.sqrt(max(var, 0.0)))


def region_weights(psi: WaveFunction, boundaries: Sequence[float] = ()) -> np.ndarray:
    """Relative weight of the regions separated by the interior ``boundaries``.

    ``k`` strictly increasing cut points give ``k + 1`` regions; a point ``x_j``
    belongs to the region left of the first boundary exceeding it.  Regions
    that contain no grid point are rejected.
    """
    grid = psi.grid
    b = np.asarray(list(boundaries), dtype=float)
    if b.size and (np.any(np.diff(b) <= 0)):
        raise ConfigurationError("region boundaries must be strictly increasing")
    if b.size and not (grid.origin < b[0] and b[-1] < grid.origin + grid.extent):
        raise ConfigurationError("region boundaries must lie inside the grid")
    labels = np.searchsorted(b, grid.positions, side="right")
    counts = np.bincount(labels, minlength=b.size + 1)
    if np.any(counts == 0):
        raise ConfigurationError("boundaries define an empty region")
    rho = psi.density
    total = rho.sum()
    if not total > 0:
        raise ConfigurationError("region weights of the zero state")
    w = np.bincount(labels, weights=rho, minlength=b.size + 1) / total
    return np.clip(w, 0.0, 1.0)


def momentum_expectation(psi: WaveFunction, hbar: float = 1.0) -> float:
    """<P> evaluated in the discrete plane-wave basis."""
    phi = np.fft.fft(psi.amplitudes)
    w = np.abs(phi) ** 2
    return float(hbar * np.dot(w, psi.grid.wavenumbers) / w.sum())


def kinetic_energy(psi: WaveFunction, params: PhysicalParams) -> float:
    """<P^2 / (2 N m)> relative to the instantaneous norm."""
    phi = np.fft.fft(psi.amplitudes)
    w = np.abs(phi) ** 2
    k = psi.grid.wavenumbers
    return float((params.hbar**2) * np.dot(w, k**2) / (2.0 * params.total_mass * w.sum()))


_SNAPSHOT_COLUMNS = ("position", "re", "im", "abs2")


def write_snapshot(psi: WaveFunction, path) -> Path:
    """Write ``position,re,im,abs2`` rows with round-trip float formatting."""
    path = Path(path)
    rho = psi.density
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SNAPSHOT_COLUMNS)
        for x, a, r in zip(psi.grid.positions, psi.amplitudes, rho):
            w.writerow((repr(float(x)), repr(float(a.real)), repr(float(a.imag)), repr(float(r))))
    return path


def read_snapshot(path, grid: Grid) -> WaveFunction:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != _SNAPSHOT_COLUMNS:
        raise ConfigurationError(f"unexpected snapshot header {rows[0]!r}")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    if data.shape[0] != grid.n_points or not np.array_equal(data[:, 0], grid.positions):
        raise ConfigurationError("snapshot positions do not match the grid")
    return WaveFunction(data[:, 1] + 1j * data[:, 2], grid)
