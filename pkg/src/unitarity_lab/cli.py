"""Command-line front end.

    unitarity-lab <experiment> [--config PATH] [--seed U64] [--out DIR] ...
    unitarity-lab validate [--config PATH] [--experiment NAME]

Every run writes ``result.json`` (resolved config, measurements, summary)
and ``series-*.csv`` files into the output directory.  Nothing is written
when the run fails.  Exit status: 0 success, 2 invalid configuration,
3 runtime failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, RunConfig, config_hash, load_config, validate
from .engine import evolve
from .errors import CollapseFailure, ConfigurationError, NormCollapseError, StepSizeError, TimeLimitExceeded
from .grid import gaussian_packet, superpose, uniform_state
from .experiments.born import BornSetup, born_ensemble
from .experiments.gambler import gambler_trials
from .experiments.timescales import (
    TimescaleSetup,
    limits_table,
    localization_time,
    relocation_time,
    scaling_sweep,
)

OUT_ENV = "UNITARITY_LAB_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


class Outputs:
    """Artifacts collected in memory and written together at the end."""

    def __init__(self):
        self.series: dict[str, str] = {}

    def add_csv(self, name: str, header: list[str], rows, meta: dict | None = None):
        buf = io.StringIO()
        for k, v in (meta or {}).items():
            buf.write(f"# {k}={v}\n")
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(repr(float(x)) if not isinstance(x, str) else x for x in row) + "\n")
        self.series[name] = buf.getvalue()


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# experiment runners: each returns (result payload, one-line summary)

def _initial_state(cfg: RunConfig, grid):
    init = cfg.initial
    hbar = cfg.physics.hbar
    if init.kind == "uniform":
        return uniform_state(grid)
    if init.kind == "gaussian":
        return gaussian_packet(grid, float(init.centers[0]), init.width, init.momentum, hbar)
    packets = [gaussian_packet(grid, float(c), init.width, init.momentum, hbar) for c in init.centers]
    return superpose([(math.sqrt(w), p) for w, p in zip(init.weights, packets)])


def run_evolve(cfg: RunConfig, out: Outputs):
    grid = cfg.make_grid()
    spec = cfg.evolution_spec()
    psi = _initial_state(cfg, grid)
    e = cfg.evolution
    n_steps = max(1, math.ceil(e.t_final / spec.dt - 1e-9))
    record_every = e.record_every or max(1, n_steps // 500)
    boundaries = e.boundaries
    if boundaries is None and cfg.initial.kind == "two_packet":
        boundaries = [0.5 * (cfg.initial.centers[0] + cfg.initial.centers[1])]
    traj = evolve(psi, spec, e.t_final, record_every, cfg.x0_source(), boundaries)
    meta = {"seed": cfg.seed, "dwell_steps": cfg.noise.dwell_steps, "spec_hash": config_hash(cfg)}
    columns = ["t", "log_norm", "x_mean", "spread"]
    w = traj.region_weights_series
    if w is not None:
        columns += [f"w_region_{i}" for i in range(w.shape[1])]
    columns.append("kinetic_energy")
    rows = []
    for i in range(len(traj)):
        r = [traj.times[i], traj.log_norms[i], traj.x_means[i], traj.spreads[i]]
        if w is not None:
            r.extend(w[i])
        r.append(traj.kinetic_energies[i])
        rows.append(r)
    out.add_csv(f"series-trajectory-seed{cfg.seed}-{config_hash(cfg)}.csv", columns, rows, meta)
    result = {
        "dt": spec.dt,
        "steps": n_steps,
        "record_every": record_every,
        "boundaries": boundaries,
        "final": {
            "t": traj.times[-1],
            "x_mean": traj.x_means[-1],
            "spread": traj.spreads[-1],
            "log_norm": traj.log_norms[-1],
            "region_weights": None if w is None else w[-1],
        },
    }
    summary = f"evolve: t={traj.times[-1]:.6g} <X>={traj.x_means[-1]:.6g} spread={traj.spreads[-1]:.6g}"
    if w is not None and w.shape[1] == 2:
        below = np.flatnonzero(w[:, 1] < 1e-3)
        t_far = float(traj.times[below[0]]) if below.size else None
        result["far_weight_below_1e-3_at"] = t_far
        summary += f" far-weight<1e-3 at t={t_far}"
    return result, summary


def _timescale_setup(cfg: RunConfig) -> TimescaleSetup:
    ts = cfg.timescale
    return TimescaleSetup(
        grid=cfg.make_grid(),
        params=cfg.make_params(),
        coupling=cfg.make_coupling(),
        kinetic_enabled=bool(cfg.evolution.kinetic_enabled),
        max_step_decay=float(cfg.evolution.max_step_decay),
        x0=float(cfg.noise.x0),
        distance=float(ts.distance),
        width=ts.width,
        samples=int(ts.samples),
        t_max=ts.t_max,
    )


def run_localization(cfg: RunConfig, out: Outputs):
    setup = _timescale_setup(cfg)
    grid = setup.grid
    spec = cfg.evolution_spec() if cfg.evolution.dt is not None else setup.spec("loc")
    t = localization_time(spec, grid, None, setup.time_limit("loc"), setup.record_every("loc"))
    expected = setup.expected("loc")
    out.add_csv("series-localization.csv", ["kappa", "dt", "t_loc", "t_estimate"], [[setup.kappa, spec.dt, t, expected]])
    return (
        {"t_loc": t, "t_estimate": expected, "ratio": t / expected, "dt": spec.dt, "kappa": setup.kappa},
        f"localization: t_loc={t:.6g} (estimate {expected:.6g}, ratio {t / expected:.4g})",
    )


def run_relocation(cfg: RunConfig, out: Outputs):
    setup = _timescale_setup(cfg)
    spec = cfg.evolution_spec() if cfg.evolution.dt is not None else setup.spec("reloc")
    t = relocation_time(spec, setup.grid, setup.release_point(), setup.packet_width(), setup.time_limit("reloc"), setup.record_every("reloc"))
    expected = setup.expected("reloc")
    out.add_csv(
        "series-relocation.csv",
        ["distance", "width", "dt", "t_reloc", "t_estimate"],
        [[setup.distance, setup.packet_width(), spec.dt, t, expected]],
    )
    return (
        {"t_reloc": t, "t_estimate": expected, "ratio": t / expected, "width": setup.packet_width(), "dt": spec.dt},
        f"relocation: t_reloc={t:.6g} (estimate {expected:.6g}, ratio {t / expected:.4g})",
    )


def run_sweep(cfg: RunConfig, out: Outputs):
    s = cfg.sweep
    res = scaling_sweep(_timescale_setup(cfg), s.parameter, [float(v) for v in s.values], s.measure)
    out.add_csv(
        f"series-sweep-{s.measure}-{s.parameter}.csv",
        [s.parameter, "time", "estimate"],
        zip(res.values, res.measured_times, res.expected_times),
    )
    return (
        res.to_dict(),
        f"sweep {s.measure} vs {s.parameter}: exponent={res.fitted_exponent:.4f} residual={res.fit_residual:.3g}",
    )


def run_limits(cfg: RunConfig, out: Outputs):
    lim = cfg.limits
    base = _timescale_setup(cfg)
    reloc = replace(
        base, width=float(lim.reloc_width), max_step_decay=float(lim.reloc_max_step_decay),
        distance=float(lim.reloc_distance),
    )
    table = limits_table(lim.n_values, lim.omega_values, base, reloc)
    rows = []
    for i, n in enumerate(table.n_values):
        for j, om in enumerate(table.omega_values):
            rows.append([n, om, table.t_loc[i, j], table.t_reloc[i, j]])
    out.add_csv("series-limits.csv", ["n_particles", "omega", "t_loc", "t_reloc"], rows)
    d = table.to_dict()
    summary = (
        f"limits: t_loc decreasing in N={d['loc_decreasing_in_n']}, "
        f"t_loc growing as Omega shrinks={d['loc_growing_as_omega_shrinks']}, "
        f"t_reloc growing as Omega shrinks={d['reloc_growing_as_omega_shrinks']}"
    )
    return d, summary


def run_born(cfg: RunConfig, out: Outputs):
    b = cfg.born
    setup = BornSetup(
        grid=cfg.make_grid(),
        params=cfg.make_params(),
        coupling=cfg.make_coupling(),
        x1=float(b.x1),
        x2=float(b.x2),
        width=float(b.width),
        dwell_steps=int(cfg.noise.dwell_steps),
        max_step_decay=float(b.max_step_decay),
        threshold=float(b.threshold),
        kinetic_enabled=bool(cfg.evolution.kinetic_enabled),
        weighting=cfg.noise.weighting,
        max_steps=int(b.max_steps),
    )
    res = born_ensemble(b.alpha2, int(b.trials), cfg.seed, setup, int(b.workers), int(b.batch_size))
    out.add_csv(
        "series-born-trials.csv",
        ["trial", "seed", "component", "collapse_time"],
        ([str(i), str(o.seed), str(o.selected_component), o.collapse_time] for i, o in enumerate(res.outcomes)),
        {"base_seed": cfg.seed, "dwell_steps": cfg.noise.dwell_steps, "spec_hash": config_hash(cfg)},
    )
    payload = res.to_dict(with_outcomes=False)
    payload["outcome_sequence"] = "".join(str(o.selected_component) for o in res.outcomes)
    payload["dt"] = setup.dt
    return payload, f"born: alpha2={b.alpha2} frequency={res.frequency:.4f} +- {res.ci95:.4f} ({res.n_collapsed}/{b.trials} collapsed)"


def run_oracle(cfg: RunConfig, out: Outputs):
    o = cfg.oracle
    wins, steps = gambler_trials(o.alpha2, int(o.trials), o.gain, cfg.seed, o.threshold, o.rule)
    p = float(wins.mean())
    ci = 1.96 * math.sqrt(p * (1 - p) / len(wins))
    out.add_csv(
        "series-oracle.csv", ["trial", "win", "rounds"],
        ([str(i), str(int(w)), str(int(s))] for i, (w, s) in enumerate(zip(wins, steps))),
        {"seed": cfg.seed},
    )
    return (
        {"frequency": p, "ci95": ci, "n_trials": int(o.trials), "mean_rounds": float(steps.mean())},
        f"oracle: alpha2={o.alpha2} frequency={p:.4f} +- {ci:.4f}",
    )


RUNNERS = {
    "evolve": run_evolve,
    "localization": run_localization,
    "relocation": run_relocation,
    "sweep": run_sweep,
    "limits": run_limits,
    "born": run_born,
    "oracle": run_oracle,
}


def execute(cfg: RunConfig, out_dir: Path) -> tuple[dict, str]:
    """Run ``cfg`` and write the artifacts.  Raises on any failure, writing nothing."""
    problems = validate(cfg)
    if problems:
        raise ConfigurationError("; ".join(problems))
    outputs = Outputs()
    result, summary = RUNNERS[cfg.experiment](cfg, outputs)
    payload = {
        "experiment": cfg.experiment,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "summary": summary,
        "result": _jsonable(result),
        "series": sorted(outputs.series),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in outputs.series.items():
        _atomic_write(out_dir / name, content)
    _atomic_write(out_dir / "result.json", text)
    return payload, summary


def _parse_set(items) -> dict:
    """``section.key=value`` pairs, values parsed as YAML scalars or lists."""
    import yaml

    tree: dict = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = tree
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(value)
    return tree


def _overrides(args) -> dict:
    tree = _parse_set(args.set)

    def put(path, value):
        if value is None:
            return
        node = tree
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = value

    put(("seed",), args.seed)
    put(("output_dir",), args.out)
    if args.trials is not None:
        put(("oracle" if args.command == "oracle" else "born", "trials"), args.trials)
    if args.t_max is not None:
        if args.command in ("evolve",):
            put(("evolution", "t_final"), args.t_max)
        else:
            put(("timescale", "t_max"), args.t_max)
    put(("grid", "n_points"), args.n_points)
    put(("physics", "n_particles"), args.n_particles)
    put(("coupling", "omega"), args.omega)
    put(("evolution", "dt"), args.dt)
    put(("noise", "dwell_steps"), args.dwell_steps)
    if args.alpha2 is not None:
        put(("oracle" if args.command == "oracle" else "born", "alpha2"), args.alpha2)
    put(("born", "workers"), args.workers)
    put(("oracle", "gain"), args.gain)
    return tree


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unitarity-lab", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("validate",):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML or JSON configuration file")
        if name == "validate":
            p.add_argument("--experiment", choices=EXPERIMENTS, default=None)
        p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
        p.add_argument("--trials", type=int)
        p.add_argument("--t-max", dest="t_max", type=float)
        p.add_argument("--n-points", dest="n_points", type=int)
        p.add_argument("--n-particles", dest="n_particles", type=float)
        p.add_argument("--omega", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--dwell-steps", dest="dwell_steps", type=int)
        p.add_argument("--alpha2", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--gain", type=float)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key, e.g. born.x2=30")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        experiment = args.experiment if args.command == "validate" else args.command
        cfg = load_config(args.config, experiment)
        cfg = cfg.with_overrides(_overrides(args))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.command == "validate":
        problems = validate(cfg)
        for p in problems:
            print(p)
        if not problems:
            print("ok")
        return EXIT_CONFIG if problems else EXIT_OK

    out_dir = Path(cfg.output_dir or os.environ.get(OUT_ENV) or "results")
    try:
        _, summary = execute(cfg, out_dir)
    except (ConfigurationError, StepSizeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TimeLimitExceeded, CollapseFailure, NormCollapseError, RuntimeError, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
