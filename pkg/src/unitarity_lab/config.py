"""Declarative run configuration.

A configuration is a YAML (or JSON) mapping.  Missing sections are filled
from the preset of the chosen experiment, so a file only needs the keys it
changes.  Unknown keys are rejected.  ``RunConfig.to_dict`` returns the
fully resolved tree; parsing that tree again gives an equal config.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .engine import EvolutionSpec, PotentialMode, stable_dt
from .errors import ConfigurationError
from .grid import Grid, PhysicalParams
from .noise import CouplingSpec, X0Source, coupling_from

__all__ = [
    "EXPERIMENTS",
    "RunConfig",
    "load_config",
    "preset",
    "validate",
    "config_hash",
]

EXPERIMENTS = ("evolve", "localization", "relocation", "sweep", "limits", "born", "oracle")
STOCHASTIC = ("born", "oracle")


@dataclass
class GridSection:
    n_points: int = 1024
    spacing: float = 1.0
    origin: float = -512.0


@dataclass
class PhysicsSection:
    n_particles: float = 100.0
    mass: float = 1.0
    hbar: float = 1.0


@dataclass
class CouplingSection:
    mode: str = "omega"
    omega: float | None = 0.1
    gamma: float | None = None
    g_newton: float | None = None
    density: float | None = None


@dataclass
class NoiseSection:
    kind: str = "fixed"
    x0: float = 0.0
    dwell_steps: int = 16
    weighting: str = "norm"


@dataclass
class InitialSection:
    kind: str = "two_packet"  # uniform | gaussian | two_packet
    centers: list = field(default_factory=lambda: [5.0, 20.0])
    weights: list = field(default_factory=lambda: [0.5, 0.5])
    width: float = 1.0
    momentum: float = 0.0


@dataclass
class EvolutionSection:
    dt: float | None = None
    max_step_decay: float = 0.1
    kinetic_enabled: bool = True
    renormalize_each_step: bool = True
    t_final: float = 200.0
    record_every: int | None = None
    boundaries: list | None = None


@dataclass
class TimescaleSection:
    distance: float = 10.0
    width: float | None = None
    t_max: float | None = None
    samples: int = 100


@dataclass
class SweepSection:
    parameter: str = "omega"
    measure: str = "loc"
    values: list = field(default_factory=lambda: [0.05, 0.05 * 2**0.5, 0.1, 0.1 * 2**0.5, 0.2])


@dataclass
class LimitsSection:
    n_values: list = field(default_factory=lambda: [40.0, 80.0, 160.0])
    omega_values: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    reloc_distance: float = 10.0
    reloc_width: float = 1.0
    reloc_max_step_decay: float = 10.0


@dataclass
class BornSection:
    alpha2: float = 0.64
    trials: int = 2000
    x1: float = -20.0
    x2: float = 20.0
    width: float = 4.0
    threshold: float = 1e-3
    max_step_decay: float = 1.0
    max_steps: int = 200_000
    workers: int = 1
    batch_size: int = 256


@dataclass
class OracleSection:
    alpha2: float = 0.64
    trials: int = 10_000
    gain: float = 0.01
    threshold: float = 1e-6
    rule: str = "martingale"


_SECTIONS = {
    "grid": GridSection,
    "physics": PhysicsSection,
    "coupling": CouplingSection,
    "noise": NoiseSection,
    "initial": InitialSection,
    "evolution": EvolutionSection,
    "timescale": TimescaleSection,
    "sweep": SweepSection,
    "limits": LimitsSection,
    "born": BornSection,
    "oracle": OracleSection,
}
_TOP_LEVEL = ("experiment", "seed", "output_dir")


def _preset_overrides(experiment: str) -> dict:
    """Per-experiment departures from the section defaults."""
    if experiment == "evolve":
        # two packets at 5 a and 20 a from X0; small box keeps the stable dt usable
        return {
            "grid": {"n_points": 256, "origin": -128.0},
            "physics": {"n_particles": 1.0},
        }
    if experiment == "relocation":
        return {"physics": {"n_particles": 1.0}}
    return {}


def preset(experiment: str = "evolve") -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    tree: dict[str, Any] = {"experiment": experiment, "seed": None, "output_dir": None}
    for name, cls in _SECTIONS.items():
        tree[name] = asdict(cls())
    for name, values in _preset_overrides(experiment).items():
        tree[name].update(values)
    return tree


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in out:
            raise ConfigurationError(f"unknown configuration key {where}{key!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{where}{key} must be a mapping")
            out[key] = _merge(out[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    experiment: str
    seed: int | None
    output_dir: str | None
    grid: GridSection
    physics: PhysicsSection
    coupling: CouplingSection
    noise: NoiseSection
    initial: InitialSection
    evolution: EvolutionSection
    timescale: TimescaleSection
    sweep: SweepSection
    limits: LimitsSection
    born: BornSection
    oracle: OracleSection

    @classmethod
    def from_dict(cls, data: dict | None = None, experiment: str | None = None) -> "RunConfig":
        data = dict(data or {})
        if experiment is not None:
            data["experiment"] = experiment
        tree = _merge(preset(data.get("experiment", "evolve")), data)
        kwargs: dict[str, Any] = {k: tree[k] for k in _TOP_LEVEL}
        for name, section in _SECTIONS.items():
            kwargs[name] = section(**tree[name])
        cfg = cls(**kwargs)
        if cfg.seed is not None:
            if isinstance(cfg.seed, bool) or int(cfg.seed) != cfg.seed or not 0 <= int(cfg.seed) < 2**64:
                raise ConfigurationError("seed must be an unsigned 64-bit integer")
            cfg.seed = int(cfg.seed)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        return RunConfig.from_dict(_merge(self.to_dict(), overrides))

    # builders -------------------------------------------------------------
    def make_grid(self) -> Grid:
        return Grid(self.grid.n_points, float(self.grid.spacing), float(self.grid.origin))

    def make_params(self) -> PhysicalParams:
        p = self.physics
        return PhysicalParams(float(p.n_particles), float(p.mass), float(p.hbar))

    def make_coupling(self) -> CouplingSpec:
        c = self.coupling
        return CouplingSpec(c.mode, c.omega, c.gamma, c.g_newton, c.density)

    def kappa(self) -> float:
        return coupling_from(self.make_coupling(), self.make_params())

    def x0_source(self) -> X0Source:
        n = self.noise
        if n.kind == "fixed":
            return X0Source.fixed(n.x0)
        if self.seed is None:
            raise ConfigurationError("white-noise X0 requires an explicit seed")
        return X0Source.white_noise(self.seed, n.dwell_steps, n.weighting)

    def evolution_spec(self) -> EvolutionSpec:
        e = self.evolution
        grid, params, kappa = self.make_grid(), self.make_params(), self.kappa()
        kind = "non_hermitian_fixed" if self.noise.kind == "fixed" else "non_hermitian_stochastic"
        dt = e.dt if e.dt is not None else stable_dt(kappa, grid, params.hbar, e.max_step_decay)
        if not math.isfinite(dt):
            raise ConfigurationError("dt must be given when kappa is zero")
        return EvolutionSpec(
            params, PotentialMode(kind, kappa, self.noise.x0), float(dt),
            bool(e.kinetic_enabled), bool(e.renormalize_each_step), float(e.max_step_decay),
        )


def config_hash(cfg: RunConfig) -> str:
    """Short digest of the resolved configuration (output directory excluded)."""
    d = cfg.to_dict()
    d.pop("output_dir", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_config(path=None, experiment: str | None = None, overrides: dict | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} must hold a mapping at the top level")
    cfg = RunConfig.from_dict(data, experiment)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def _log_spaced(values) -> bool:
    if len(values) < 2 or any(not (v > 0) for v in values):
        return False
    r = [values[i + 1] / values[i] for i in range(len(values) - 1)]
    return r[0] != 1 and all(math.isclose(x, r[0], rel_tol=1e-6) for x in r)


def validate(cfg: RunConfig) -> list[str]:
    """Every violated rule, as human-readable messages.  Nothing is run."""
    problems: list[str] = []

    def attempt(fn):
        try:
            return fn()
        except (ConfigurationError, TypeError, ValueError) as exc:
            problems.append(str(exc))
            return None

    if cfg.experiment not in EXPERIMENTS:
        problems.append(f"unknown experiment {cfg.experiment!r}")
        return problems
    grid = attempt(cfg.make_grid)
    params = attempt(cfg.make_params)
    coupling = attempt(cfg.make_coupling)
    exp = cfg.experiment

    needs_seed = exp in STOCHASTIC or (exp == "evolve" and cfg.noise.kind == "white_noise")
    if needs_seed and cfg.seed is None:
        problems.append(f"experiment {exp!r} is stochastic and requires an explicit seed (--seed)")
    if cfg.noise.kind not in ("fixed", "white_noise"):
        problems.append(f"unknown noise kind {cfg.noise.kind!r}")
    if cfg.noise.weighting not in ("norm", "none"):
        problems.append(f"unknown noise weighting {cfg.noise.weighting!r}")
    if int(cfg.noise.dwell_steps) != cfg.noise.dwell_steps or cfg.noise.dwell_steps < 1:
        problems.append("noise.dwell_steps must be a positive integer")
    if grid is None or params is None or coupling is None:
        return problems
    a = grid.spacing

    def width_rule(name, w):
        if w is not None and not w >= a:
            problems.append(f"{name}={w!r} is below the lattice spacing {a!r}")

    if exp == "evolve":
        init = cfg.initial
        if init.kind not in ("uniform", "gaussian", "two_packet"):
            problems.append(f"unknown initial state kind {init.kind!r}")
        if init.kind != "uniform":
            width_rule("initial.width", init.width)
            for c in init.centers:
                if not grid.contains(c):
                    problems.append(f"initial center {c!r} lies outside the grid")
            if init.kind == "two_packet" and (len(init.centers) != 2 or len(init.weights) != 2):
                problems.append("two_packet needs exactly two centers and two weights")
        if not cfg.evolution.t_final > 0:
            problems.append("evolution.t_final must be > 0")
        spec = attempt(cfg.evolution_spec)
        if spec is not None:
            problems.extend(spec.diagnostics(grid))
    elif exp in ("localization", "relocation"):
        spec = attempt(cfg.evolution_spec)
        if spec is not None:
            problems.extend(spec.diagnostics(grid))
        if exp == "relocation":
            width_rule("timescale.width", cfg.timescale.width)
    elif exp == "sweep":
        s = cfg.sweep
        if s.measure not in ("loc", "reloc"):
            problems.append(f"unknown sweep measure {s.measure!r}")
        if len(s.values) < 4 or not _log_spaced(s.values):
            problems.append("sweep.values must hold at least 4 log-spaced positive values")
        if s.parameter in ("omega", "gamma") and s.parameter != cfg.coupling.mode:
            problems.append(f"sweeping {s.parameter} needs coupling.mode={s.parameter!r}")
        width_rule("timescale.width", cfg.timescale.width)
        if cfg.evolution.dt is not None:
            problems.append("sweep chooses dt per point; leave evolution.dt unset")
    elif exp == "limits":
        lim = cfg.limits
        for name in ("n_values", "omega_values"):
            v = getattr(lim, name)
            if len(v) < 3 or not _log_spaced(v):
                problems.append(f"limits.{name} must hold at least 3 log-spaced positive values")
        if cfg.coupling.mode != "omega":
            problems.append("limits table needs coupling.mode='omega'")
        width_rule("limits.reloc_width", lim.reloc_width)
    elif exp == "born":
        b = cfg.born
        if not 0 < b.alpha2 < 1:
            problems.append(f"born.alpha2 must lie in (0, 1), got {b.alpha2!r}")
        if b.trials < 100:
            problems.append("born.trials must be at least 100")
        width_rule("born.width", b.width)
        if not (grid.contains(b.x1) and grid.contains(b.x2) and b.x1 < b.x2):
            problems.append("born packets must satisfy x1 < x2 inside the grid")
        if not 0 < b.threshold < 0.5:
            problems.append("born.threshold must lie in (0, 0.5)")
    elif exp == "oracle":
        o = cfg.oracle
        if not 0 < o.alpha2 < 1:
            problems.append(f"oracle.alpha2 must lie in (0, 1), got {o.alpha2!r}")
        if not 0 < o.gain < 1:
            problems.append("oracle.gain must lie in (0, 1)")
        if o.rule not in ("martingale", "proportional"):
            problems.append(f"unknown oracle rule {o.rule!r}")
        if o.trials < 1:
            problems.append("oracle.trials must be positive")
    return problems
