"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
numbers before asserting, so ``pytest -v`` output doubles as the report.
The full module takes roughly twenty minutes on one core.
"""

import numpy as np
import pytest

from unitarity_lab import (
    CouplingSpec,
    EvolutionSpec,
    Grid,
    PhysicalParams,
    PotentialMode,
    WaveFunction,
    X0Source,
    coupling_from,
    evolve,
    expectation,
    gaussian_packet,
    spread,
    stable_dt,
    superpose,
)
from unitarity_lab.closed_form import free_spread, localization_time_estimate
from unitarity_lab.engine import kinetic_step
from unitarity_lab.experiments.born import BornSetup, born_ensemble
from unitarity_lab.experiments.gambler import gambler_oracle, gambler_trials
from unitarity_lab.experiments.timescales import (
    TimescaleSetup,
    limits_table,
    localization_time,
    scaling_sweep,
)

pytestmark = pytest.mark.slow


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


def test_criterion_1_bare_localization_time(capsys):
    grid = Grid(256, 1.0, -128.0)
    rows = []
    for kappa in (0.05, 0.5, 5.0):
        n = 2 * kappa / 0.01
        s = TimescaleSetup(grid=grid, params=PhysicalParams(n), kinetic_enabled=False)
        t = localization_time(s.spec("loc"), grid, record_every=s.record_every("loc"))
        ref = localization_time_estimate(n, 1.0, 0.1)
        rows.append((kappa, t, ref, t / ref))
    ok = all(abs(r - 1) <= 0.05 for *_, r in rows)
    detail = "; ".join(f"kappa={k:g}: t={t:.5g} vs {ref:.5g} (ratio {r:.4f})" for k, t, ref, r in rows)
    report(capsys, 1, ok, detail)


def _geom(lo, hi):
    return list(np.geomspace(lo, hi, 5))


def test_criterion_2_scaling_exponents(capsys):
    loc = TimescaleSetup(params=PhysicalParams(100.0))
    reloc = TimescaleSetup(params=PhysicalParams(1.0))
    sweeps = [
        ("t_loc vs Omega", loc, "omega", _geom(0.05, 0.2), "loc", -2.0),
        ("t_loc vs N", loc, "n_particles", _geom(25, 400), "loc", -1.0),
        ("t_reloc vs Omega", reloc, "omega", _geom(1 / 128, 1 / 32), "reloc", -1.0),
        ("t_reloc vs distance", reloc.with_value("omega", 1 / 32), "distance", _geom(5, 40), "reloc", 1.0),
    ]
    parts, ok = [], True
    for name, base, par, values, measure, target in sweeps:
        r = scaling_sweep(base, par, values, measure)
        good = abs(r.fitted_exponent - target) <= 0.15 and r.fit_residual < 0.1
        ok &= good
        parts.append(f"{name}: {r.fitted_exponent:+.3f} (target {target:+.1f}, rms {r.fit_residual:.3f}) {'ok' if good else 'MISS'}")
    report(capsys, 2, ok, "; ".join(parts))


def test_criterion_3_limits_table(capsys):
    t = limits_table([40, 80, 160], [0.1, 0.05, 0.025])
    checks = {
        "t_loc decreasing in N": t.loc_decreasing_in_n(),
        "t_loc growing as Omega shrinks": t.loc_growing_as_omega_shrinks(),
        "t_reloc growing as Omega shrinks": t.reloc_growing_as_omega_shrinks(),
    }
    detail = "; ".join(f"{k}={v}" for k, v in checks.items())
    detail += f"; t_loc={np.round(t.t_loc, 3).tolist()}; t_reloc={np.round(t.t_reloc, 2).tolist()}"
    report(capsys, 3, all(checks.values()), detail)


def test_criterion_4_born_rule(capsys):
    parts, ok = [], True
    n_pde, n_oracle = 2000, 10_000
    for i, alpha2 in enumerate((0.2, 0.5, 0.64, 0.9)):
        r = born_ensemble(alpha2, n_pde, 1000 + i, BornSetup())
        f_or = gambler_oracle(alpha2, n_oracle, 0.01, seed=2000 + i)
        ci_or = 1.96 * np.sqrt(f_or * (1 - f_or) / n_oracle)
        near = abs(r.frequency - alpha2) <= 0.04
        agree = abs(r.frequency - f_or) <= r.ci95 + ci_or
        ok &= near and agree
        parts.append(
            f"alpha2={alpha2}: pde {r.frequency:.4f}+-{r.ci95:.4f}, oracle {f_or:.4f}+-{ci_or:.4f}"
            f"{'' if near and agree else ' MISS'}"
        )
    report(capsys, 4, ok, "; ".join(parts))


def test_criterion_5_unitary_controls(capsys):
    grid = Grid(256, 1.0, -128.0)
    psi = gaussian_packet(grid, 10.0, 3.0, momentum=0.3)
    dt = stable_dt(0.5, grid)
    drifts = {}
    for kind, kappa in (("none", 0.0), ("hermitian_fixed", 0.5)):
        spec = EvolutionSpec(PhysicalParams(), PotentialMode(kind, kappa, 0.0), dt, renormalize_each_step=False)
        traj = evolve(psi, spec, 1000 * dt, record_every=100)
        drifts[kind] = float(np.max(np.abs(np.expm1(traj.log_norms))))
    big = Grid(1024, 1.0, -512.0)
    s8 = spread(kinetic_step(gaussian_packet(big, 0.0, 4.0), 8.0, PhysicalParams()))
    ref = float(free_spread(4.0, 8.0, 1.0))
    ok = all(d < 1e-8 for d in drifts.values()) and abs(s8 / ref - 1) <= 0.01
    detail = "; ".join(f"{k} norm drift {d:.2e}" for k, d in drifts.items())
    detail += f"; free spread at t=8: {s8:.5f} vs {ref:.5f}"
    report(capsys, 5, ok, detail)


def test_criterion_6_norm_relative_observables(capsys):
    grid = Grid(256, 1.0, -128.0)
    psi = superpose([(0.8, gaussian_packet(grid, -10.0, 2.0)), (0.6, gaussian_packet(grid, 15.0, 2.0))])
    params = PhysicalParams(5.0)
    dt = stable_dt(0.05, grid)
    mode = PotentialMode("non_hermitian_fixed", 0.05, 0.0)
    on = evolve(psi, EvolutionSpec(params, mode, dt), 500 * dt, 10, boundaries=[2.0])
    off = evolve(psi, EvolutionSpec(params, mode, dt, renormalize_each_step=False), 500 * dt, 10, boundaries=[2.0])
    diff = max(
        np.max(np.abs(on.x_means - off.x_means)),
        np.max(np.abs(on.spreads - off.spreads)),
        np.max(np.abs(on.region_weights_series - off.region_weights_series)),
        np.max(np.abs(on.kinetic_energies - off.kinetic_energies)),
    )
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(200):
        state = WaveFunction(rng.normal(size=256) + 1j * rng.normal(size=256), grid)
        obs = rng.normal(size=256)
        c = 10 ** rng.uniform(-6, 6) * np.exp(2j * np.pi * rng.random())
        ref = expectation(state, obs)
        worst = max(worst, abs(expectation(state.scaled(c), obs) - ref) / max(abs(ref), 1e-300))
    ok = diff <= 1e-9 and worst <= 1e-12
    report(capsys, 6, ok, f"renormalize on/off max difference {diff:.2e}; worst relative rescaling change {worst:.2e}")


def test_criterion_7_coupling_equivalence(capsys):
    grid = Grid(256, 1.0, -128.0)
    params = PhysicalParams(64.0)
    couplings = [
        CouplingSpec("omega", omega=0.125),
        CouplingSpec("gamma", gamma=0.0078125),
        CouplingSpec("gravity", g_newton=1 / 64, density=1.0),
    ]
    kappas = [coupling_from(c, params) for c in couplings]
    psi = superpose([(0.8, gaussian_packet(grid, -10.0, 2.0)), (0.6, gaussian_packet(grid, 10.0, 2.0))])
    src = X0Source.white_noise(7, dwell_steps=4)
    trajs = []
    for kappa in kappas:
        spec = EvolutionSpec(params, PotentialMode("non_hermitian_stochastic", kappa), stable_dt(kappa, grid))
        trajs.append(evolve(psi, spec, 400 * spec.dt, 10, src, [0.5]))
    fields = ("times", "log_norms", "x_means", "spreads", "region_weights_series", "x0_values")
    same = all(
        np.array_equal(getattr(trajs[0], f), getattr(t, f)) for t in trajs[1:] for f in fields
    ) and all(np.array_equal(trajs[0].final_state.amplitudes, t.final_state.amplitudes) for t in trajs[1:])
    report(capsys, 7, same and len(set(kappas)) == 1, f"kappas {kappas}; trajectories bit-identical: {same}")


def test_criterion_8_determinism(capsys):
    setup = BornSetup()
    runs = [
        born_ensemble(0.64, 200, 88, setup, workers=1, batch_size=256),
        born_ensemble(0.64, 200, 88, setup, workers=1, batch_size=7),
        born_ensemble(0.64, 200, 88, setup, workers=3, batch_size=32),
    ]
    seqs = [[(o.selected_component, o.collapse_time, o.seed) for o in r.outcomes] for r in runs]
    born_same = seqs[0] == seqs[1] == seqs[2]
    g1 = gambler_trials(0.64, 500, 0.05, seed=88)
    g2 = gambler_trials(0.64, 500, 0.05, seed=88)
    oracle_same = np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])
    ok = born_same and oracle_same
    report(capsys, 8, ok, f"collapse outcomes identical over worker/batch settings: {born_same}; oracle rerun identical: {oracle_same}")
