"""Acceptance suite: every numbered criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them all;
failures carry the same detail in the assertion message).  Reference runs are
cached under .refcache/ at the repository root, so only the first session
pays for them.
"""

import numpy as np
import pytest
from scipy import stats

import mfmlmc as m
from mfmlmc import cli, diagnostics
from mfmlmc.diagnostics import StudyConfig, convergence_study
from mfmlmc.engine import interpolate_values, run_frozen_ensemble
from conftest import frozen_state_model

ROTATOR_REF = m.SingleLevelConfig(dt=5.0 / 512, n_samples=1_000_000, seed=0)
PIC_REF = m.SingleLevelConfig(dt=(1.0 / 3.0) / 64, n_samples=200_000, seed=0)


def check(label, ok, detail):
    line = f"ACCEPTANCE {label}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def rotator_reference(rotator_model, refcache_dir):
    return m.generate_reference(rotator_model, ROTATOR_REF, refcache_dir)


@pytest.fixture(scope="module")
def pic_reference(pic_model, refcache_dir):
    return m.generate_reference(pic_model, PIC_REF, refcache_dir)


def test_criterion_1_linear_accuracy(linear_model, linear_params):
    """Mean terminal L1 error <= eps for eps in {0.2, 0.1, 0.05}, 20 runs,
    and at least 1.5x error reduction per halving of eps."""
    config = StudyConfig(model=linear_model, eps_list=[0.2, 0.1, 0.05],
                         runs_per_eps=20, seed_base=2026,
                         engine=m.EngineConfig())
    rows = convergence_study(config)  # ascending eps
    errors = {r.eps: r.mean_l1_error for r in rows}
    bounded = all(errors[eps] <= eps for eps in (0.2, 0.1, 0.05))
    r1 = errors[0.2] / errors[0.1]
    r2 = errors[0.1] / errors[0.05]
    growth = diagnostics.level_growth_per_halving(rows)
    print(f"  (soft diagnostic: levels added per eps halving = "
          f"{['%.2f' % g for g in growth]})")
    check("1 (linear accuracy)",
          bounded and r1 >= 1.5 and r2 >= 1.5,
          f"errors {errors}, halving ratios {r1:.2f}, {r2:.2f}")


def _variance_slope(model, n0, n1, runs, seed_base):
    config = StudyConfig(model=model, eps_list=[0.1], runs_per_eps=runs,
                         seed_base=seed_base,
                         engine=m.EngineConfig(n0_initial=n0, n1_initial=n1))
    _, slope = m.variance_scaling_study(config, 6)
    return slope


def test_criterion_2_variance_scaling_linear(linear_model):
    slope = _variance_slope(linear_model, 2000, 1000, 20, 1)
    check("2 (variance scaling, linear)", -1.5 <= slope <= -0.7,
          f"fitted log2 V_l slope over levels 2-6 = {slope:.3f}, band [-1.5, -0.7]")


def test_criterion_2_variance_scaling_rotator(rotator_model):
    slope = _variance_slope(rotator_model, 2000, 1000, 20, 1)
    check("2 (variance scaling, rotator)", -1.5 <= slope <= -0.7,
          f"fitted log2 V_l slope over levels 2-6 = {slope:.3f}, band [-1.5, -0.7]")


def test_criterion_2_variance_scaling_pic(pic_model):
    # Known honest failure: with beta identically zero the coupled pair
    # follows the same deterministic characteristics, so V_l decays like
    # dt^2 (slope -2 under unbiased constant-count measurement, about -1.65
    # here), faster than the band's lower edge.
    slope = _variance_slope(pic_model, 2000, 1000, 10, 1)
    check("2 (variance scaling, pic)", -1.5 <= slope <= -0.7,
          f"fitted log2 V_l slope over levels 2-6 = {slope:.3f}, band [-1.5, -0.7]"
          " (V_l ~ dt^2: exact-characteristic coupling beats the band)")


def test_criterion_3_complexity_scaling(linear_model):
    config = StudyConfig(model=linear_model, eps_list=[0.1, 0.05, 0.025],
                         runs_per_eps=5, seed_base=7, engine=m.EngineConfig())
    result = m.complexity_study(config)
    mlmc_ok = -2.7 <= result.mlmc_slope <= -1.9
    single_ok = -3.3 <= result.single_slope <= -2.7
    smallest = result.mlmc_rows[0]
    baseline = result.single_rows[0]
    ordering_ok = smallest.mean_particle_steps < baseline.mean_particle_steps
    # the single/multilevel cost ratio must grow as eps shrinks
    ratios = [s.mean_particle_steps / r.mean_particle_steps
              for s, r in zip(result.single_rows, result.mlmc_rows)]
    assert ratios == sorted(ratios, reverse=True), ratios
    print(f"  (mlmc slope {result.mlmc_slope:.3f}, single slope "
          f"{result.single_slope:.3f}, steps at eps=0.025: "
          f"mlmc {smallest.mean_particle_steps:.3g} vs single "
          f"{baseline.mean_particle_steps:.3g}, "
          f"single/mlmc ratios descending in eps: "
          f"{['%.3f' % r for r in ratios[::-1]]})")
    # Ordering is a known honest failure at desk scale: the measured cost
    # constants put the crossover near eps ~ 1e-3 for this model.
    check("3 (complexity scaling)", mlmc_ok and single_ok and ordering_ok,
          f"mlmc slope {result.mlmc_slope:.3f} in [-2.7,-1.9]: {mlmc_ok}; "
          f"single slope {result.single_slope:.3f} in [-3.3,-2.7]: {single_ok}; "
          f"mlmc below single at smallest eps: {ordering_ok}")


def test_criterion_4_exact_coupling_oracle():
    model = frozen_state_model()
    res = m.run_algorithm(model, 0.05, m.EngineConfig(), seed=1)
    variances = [rep.level_variance for rep in res.levels[1:]]
    check("4 (exact-coupling oracle)",
          res.levels_used == 1 and all(v == 0.0 for v in variances),
          f"L = {res.levels_used}, coupled-level variances = {variances}")


def test_criterion_5_telescoping_and_bit_match(linear_model):
    res = m.run_algorithm(linear_model, 0.05, m.EngineConfig(), seed=13)
    worst = 0.0
    for lower, upper in zip(res.levels, res.levels[1:]):
        for n in range(len(upper.meanfield_series.values)):
            rebuilt = (interpolate_values(lower.meanfield_series.values, n / 2)
                       + upper.meanfield_correction[n])
            stored = upper.meanfield_series.values[n]
            scale = max(1.0, float(np.abs(stored).max()))
            worst = max(worst, float(np.abs(rebuilt - stored).max()) / scale)
    rep = m.run_level0(linear_model, 300, 99)
    phat, rhat, steps = m.run_single_level(
        linear_model, m.SingleLevelConfig(dt=0.25, n_samples=300, seed=99))
    bit_match = (np.array_equal(rep.payoff_series, phat)
                 and np.array_equal(rep.meanfield_series.values, rhat)
                 and steps == rep.particle_steps)
    check("5 (telescoping + level-0 bit match)",
          worst <= 1e-12 and bit_match,
          f"max relative telescoping residual {worst:.2e}, bit match {bit_match}")


def test_criterion_6_coupling_distribution(linear_model, rotator_model):
    results = {}
    for model in (linear_model, rotator_model):
        rep0 = m.run_level0(model, 4000, 101)
        _, pair = m.run_coupled_level(model, 1, 10_000, rep0.meanfield_series,
                                      rep0.payoff_series, 202, keep_states=True)
        _, indep = run_frozen_ensemble(model, model.base_dt,
                                       rep0.meanfield_series, 10_000, 909,
                                       level=7)
        _, p = stats.ks_2samp(pair.coarse_states[:, 0], indep[:, 0])
        results[model.name] = p
    check("6 (coupling distribution, KS)",
          all(p >= 0.01 for p in results.values()),
          f"KS p-values {results} at significance 0.01, n = 10^4")


def test_criterion_7_rotator_convergence(rotator_model, rotator_reference,
                                         refcache_dir):
    _, se, _ = rotator_reference
    config = StudyConfig(model=rotator_model, eps_list=[0.1, 0.05],
                         runs_per_eps=20, seed_base=5, reference=ROTATOR_REF,
                         engine=m.EngineConfig(), cache_dir=refcache_dir)
    rows = convergence_study(config)
    verdicts = {r.eps: (r.mean_l1_error, r.eps + 2 * se) for r in rows}
    check("7 (rotator convergence vs reference)",
          all(err <= tol for err, tol in verdicts.values()),
          f"mean L1 error vs eps + 2x reference error: {verdicts}")


def test_criterion_7_pic_convergence(pic_model, pic_reference, refcache_dir):
    _, se, _ = pic_reference
    config = StudyConfig(model=pic_model, eps_list=[0.1, 0.05],
                         runs_per_eps=10, seed_base=5, reference=PIC_REF,
                         engine=m.EngineConfig(n0_initial=1000, n1_initial=400),
                         cache_dir=refcache_dir)
    rows = convergence_study(config)
    verdicts = {r.eps: (r.mean_l1_error, r.eps + 2 * se) for r in rows}
    check("7 (pic convergence vs reference)",
          all(err <= tol for err, tol in verdicts.values()),
          f"mean L1 error vs eps + 2x reference error: {verdicts}")


def test_criterion_8_pic_field_solver():
    grid = m.GridSpec(20.0, 1.0)
    x = grid.nodes
    rho = 0.05 + np.cos(2 * np.pi * x / 20.0)
    e = m.solve_field(rho, grid)
    expected = (20.0 / (2 * np.pi)) * np.sin(2 * np.pi * x / 20.0)
    mode_ok = bool(np.allclose(e, expected, rtol=1e-10, atol=1e-12))

    rng = np.random.default_rng(77)
    positions = rng.uniform(-40.0, 40.0, size=10_000)
    rho2 = m.deposit_density(positions, grid)
    charge_res = abs(rho2.sum() * grid.cell_size - 1.0)
    field = rng.normal(size=20)
    lhs = m.interpolate_field(field, positions, grid).sum()
    rhs = positions.size * grid.cell_size * (field * rho2).sum()
    adjoint_res = abs(lhs - rhs) / max(1.0, abs(rhs))
    check("8 (pic field solver)",
          mode_ok and charge_res <= 1e-10 and adjoint_res <= 1e-10,
          f"single-mode ok {mode_ok}, charge residual {charge_res:.2e}, "
          f"adjointness residual {adjoint_res:.2e}")


def test_criterion_9_cli_determinism(tmp_path, monkeypatch):
    ticks = iter(np.arange(0.0, 1e6, 0.5))
    monkeypatch.setattr(diagnostics, "_clock", lambda: float(next(ticks)))
    argv = ["run", "--model", "linear", "--eps", "0.2", "--seed", "9",
            "--n0", "256", "--n1", "128"]
    dirs = [tmp_path / "w1a", tmp_path / "w1b", tmp_path / "w2"]
    assert cli.main(argv + ["--workers", "1", "--out", str(dirs[0])]) == 0
    assert cli.main(argv + ["--workers", "1", "--out", str(dirs[1])]) == 0
    assert cli.main(argv + ["--workers", "2", "--out", str(dirs[2])]) == 0
    same = True
    for name in ("payoff.csv", "levels.csv", "summary.csv"):
        blobs = [(d / name).read_bytes() for d in dirs]
        same = same and blobs[0] == blobs[1] == blobs[2]
    check("9 (CLI determinism across repeats and workers)", same,
          "payoff/levels/summary bytes identical at 1 and 2 workers "
          "(clock stubbed; wall time is hardware, not algorithm)")
