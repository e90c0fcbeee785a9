"""Fluctuating localization centre X0(t) and the coupling constant kappa.

The white-noise centre is piecewise constant: a fresh value is drawn every
``dwell_steps`` time steps.  All randomness is counter based (numpy's Philox
keyed by the seed, with the noise block index in the counter), so the value
used in block ``b`` is a pure function of ``(seed, b)`` and never depends on
execution order or on how trials are spread over workers.

Two sampling rules are provided.  ``weighting="none"`` takes the uniform
proposal as is.  ``weighting="norm"`` (the default) accepts a proposal with
probability equal to the fraction of norm that survives the coming block,
i.e. noise histories are realized with probability proportional to the
squared norm they leave behind.  Only the weighted rule turns the relative
component weights into a martingale; with the bare uniform rule the log of
the weight ratio performs a driftless walk and collapse statistics drift
towards 1/2 instead of the initial weights.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import Grid, PhysicalParams

__all__ = [
    "X0Source",
    "CouplingSpec",
    "coupling_from",
    "next_x0",
    "block_uniforms",
    "select_x0",
]

_KINDS = ("fixed", "white_noise")
_WEIGHTINGS = ("norm", "none")
_CANDIDATES = 64
_MAX_CANDIDATES = 1 << 16


@dataclass(frozen=True)
class X0Source:
    kind: str = "fixed"
    value: float = 0.0
    seed: int | None = None
    dwell_steps: int = 1
    weighting: str = "norm"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown X0 source kind {self.kind!r}")
        if self.weighting not in _WEIGHTINGS:
            raise ConfigurationError(f"unknown X0 weighting {self.weighting!r}")
        if int(self.dwell_steps) != self.dwell_steps or self.dwell_steps < 1:
            raise ConfigurationError("dwell_steps must be a positive integer")
        if self.kind == "white_noise":
            if self.seed is None:
                raise ConfigurationError("white-noise X0 requires an explicit seed")
            if not 0 <= int(self.seed) < 2**64:
                raise ConfigurationError("seed must fit in an unsigned 64-bit integer")

    @classmethod
    def fixed(cls, value: float) -> "X0Source":
        return cls("fixed", float(value))

    @classmethod
    def white_noise(cls, seed: int, dwell_steps: int = 1, weighting: str = "norm") -> "X0Source":
        return cls("white_noise", 0.0, int(seed), int(dwell_steps), weighting)

    @property
    def stochastic(self) -> bool:
        return self.kind == "white_noise"


@dataclass(frozen=True)
class CouplingSpec:
    """Physical origin of the quadratic coupling.

    ``omega``: kappa = N m Omega^2 / 2 (trap frequency);
    ``gamma``: kappa = N gamma (environment coupling per particle);
    ``gravity``: kappa = N m G rho / 2.
    """

    mode: str = "omega"
    omega: float | None = None
    gamma: float | None = None
    g_newton: float | None = None
    density: float | None = None

    def __post_init__(self):
        required = {
            "omega": ("omega",),
            "gamma": ("gamma",),
            "gravity": ("g_newton", "density"),
        }
        if self.mode not in required:
            raise ConfigurationError(f"unknown coupling mode {self.mode!r}")
        for name in required[self.mode]:
            v = getattr(self, name)
            if v is None or not np.isfinite(v) or v <= 0:
                raise ConfigurationError(
                    f"coupling mode {self.mode!r} needs {name} > 0, got {v!r}"
                )


def coupling_from(spec: CouplingSpec, params: PhysicalParams) -> float:
    """Coefficient kappa of (X - X0)^2 in the non-Hermitian term."""
    if spec.mode == "omega":
        return 0.5 * params.total_mass * spec.omega**2
    if spec.mode == "gamma":
        return params.n_particles * spec.gamma
    return 0.5 * params.total_mass * spec.g_newton * spec.density


_local = threading.local()


def _generator(seed: int) -> tuple[np.random.Philox, np.random.Generator, dict]:
    cache = getattr(_local, "cache", None)
    if cache is None:
        cache = _local.cache = {}
    entry = cache.get(seed)
    if entry is None:
        if len(cache) > 4096:
            cache.clear()
        bitgen = np.random.Philox(key=seed)
        entry = cache[seed] = (bitgen, np.random.Generator(bitgen), bitgen.state)
    return entry


def block_uniforms(seed: int, block: int, size: int) -> np.ndarray:
    """The first ``size`` uniforms of noise block ``block`` of stream ``seed``.

    Same values as ``Generator(Philox(key=seed, counter=block << 128)).random(size)``;
    a per-thread generator is reset to that counter instead of rebuilt.
    """
    block = int(block)
    bitgen, gen, state = _generator(int(seed))
    state["state"]["counter"][:] = (0, 0, block & 0xFFFFFFFFFFFFFFFF, block >> 64)
    state["buffer_pos"] = 4
    state["has_uint32"] = 0
    state["uinteger"] = 0
    bitgen.state = state
    return gen.random(size)


def next_x0(source: X0Source, grid: Grid, step_index: int) -> float:
    """Proposal value of X0 for a time step (uniform over the grid extent)."""
    if not source.stochastic:
        return source.value
    u = block_uniforms(source.seed, step_index // source.dwell_steps, 1)[0]
    return grid.origin + grid.extent * u


def select_x0(
    seeds,
    block: int,
    grid: Grid,
    density: np.ndarray,
    decay_rate,
    weighting: str = "norm",
) -> np.ndarray:
    """Noise value for ``block`` for each row of ``density``.

    ``density`` has shape ``(rows, n)`` and ``decay_rate`` is ``2 kappa tau /
    hbar`` per row, ``tau`` being the block duration.  Candidate ``c`` of a
    block uses uniforms ``2c`` (position) and ``2c + 1`` (acceptance) of the
    block stream, so candidate 0 is exactly :func:`next_x0`.
    """
    seeds = [int(s) for s in seeds]
    density = np.atleast_2d(density)
    rows = len(seeds)
    decay_rate = np.broadcast_to(np.asarray(decay_rate, dtype=float), (rows,))
    size = 2 * _CANDIDATES
    u = np.stack([block_uniforms(s, block, size) for s in seeds])
    proposals = grid.origin + grid.extent * u[:, 0::2]
    if weighting == "none":
        return proposals[:, 0].copy()

    chosen = np.empty(rows)
    total = density.sum(axis=1)
    pending = np.arange(rows)
    c = 0
    while pending.size:
        if c == size // 2:
            if size >= 2 * _MAX_CANDIDATES:
                raise RuntimeError("weighted X0 sampling did not accept a candidate")
            size *= 4
            more = np.stack([block_uniforms(seeds[i], block, size) for i in pending])
            u_new = np.empty((rows, size))
            u_new[pending] = more
            u = u_new
            proposals = grid.origin + grid.extent * u[:, 0::2]
        x0 = proposals[pending, c]
        d = grid.displacement(x0)
        surviving = np.sum(density[pending] * np.exp(-decay_rate[pending, None] * d * d), axis=1)
        accept = u[pending, 2 * c + 1] * total[pending] < surviving
        chosen[pending[accept]] = x0[accept]
        pending = pending[~accept]
        c += 1
    return chosen
