"""Experiment harness: convergence, variance-scaling and complexity studies.

Each study repeats full algorithm runs over a seed ladder derived from one
base seed, aggregates per-tolerance statistics, and reports them as plain
rows for CSV emission.  Wall-clock numbers cover the solver only, never
reference generation or I/O.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import (EngineConfig, RunResult, run_algorithm, run_coupled_level,
                     run_level0)
from .models import LinearModelParams, ModelSpec, linear_exact_moments
from .single_level import SingleLevelConfig, load_reference, run_single_level
from .streams import derive_seed

# timing hook; tests stub this to make summary output reproducible
_clock = time.perf_counter


@dataclass
class StudyConfig:
    """Protocol for one study: which model, which tolerances, how many runs."""

    model: ModelSpec
    eps_list: list[float]
    runs_per_eps: int = 20
    seed_base: int = 0
    reference: object = "oracle"  # "oracle" or a SingleLevelConfig
    engine: EngineConfig = field(default_factory=EngineConfig)
    cache_dir: str = "references"

    def __post_init__(self):
        if self.runs_per_eps < 2:
            raise ValueError("runs_per_eps must be at least 2")
        if not self.eps_list or any(e <= 0 for e in self.eps_list):
            raise ValueError("eps_list must contain positive tolerances")


@dataclass
class StudyRow:
    eps: float
    mean_l1_error: float
    std_l1_error: float
    mean_particle_steps: float
    mean_wall_seconds: float
    mean_levels_used: float


@dataclass
class ComplexityResult:
    mlmc_rows: list[StudyRow]
    single_rows: list[StudyRow]
    mlmc_slope: float
    single_slope: float


def _oracle_second_moment(params: LinearModelParams, t: float) -> float:
    mean, var = linear_exact_moments(params, t)
    return mean * mean + var


def euler_limit_moments(params: LinearModelParams, dt: float, n_steps: int):
    """Mean and second moment of the exact mean-field limit of the Euler
    chain after n_steps of size dt.

        m' = (1 + (a+b) dt) m
        q' = (1 + a dt)^2 q + (2 (1 + a dt) + b dt) b dt m^2 + sigma^2 dt

    Independent of the particle engine; pins down the scheme's time-stepping
    bias exactly, which calibrates the matched single-level baseline.
    """
    a, b, s2 = params.a, params.b, params.sigma**2
    m = params.init_mean
    q = params.init_var + m * m
    for _ in range(n_steps):
        q = ((1 + a * dt) ** 2 * q
             + (2 * (1 + a * dt) + b * dt) * b * dt * m * m
             + s2 * dt)
        m = (1 + (a + b) * dt) * m
    return m, q


def terminal_l1_error(result: RunResult, reference_terminal) -> float:
    """Terminal-time L1 error, averaged over payoff components."""
    estimate = result.final_payoff_series[-1]
    return float(np.mean(np.abs(estimate - np.asarray(reference_terminal))))


def _resolve_reference(config: StudyConfig):
    """Terminal reference vector and its statistical error."""
    if config.reference == "oracle":
        if config.model.name != "linear":
            raise ValueError("the moment oracle only covers the linear model")
        params = _linear_params_of(config.model)
        exact = _oracle_second_moment(params, config.model.terminal_time)
        return np.array([exact]), 0.0
    values, se = load_reference(config.model, config.reference, config.cache_dir)
    return values[-1], se


def _linear_params_of(model: ModelSpec) -> LinearModelParams:
    fields = dict(item.split("=") for item in model.param_tag.split(","))
    return LinearModelParams(
        a=float(fields["a"]), b=float(fields["b"]), sigma=float(fields["sigma"]),
        init_mean=float(fields["m0"]), init_var=float(fields["v0"]))


def _run_batch(config: StudyConfig, eps: float, eps_index: int):
    """All runs for one tolerance: (errors, steps, walls, levels)."""
    reference_terminal, _ = _resolve_reference(config)
    errors, steps, walls, levels = [], [], [], []
    for run in range(config.runs_per_eps):
        seed = derive_seed(config.seed_base, eps_index, run)
        start = _clock()
        result = run_algorithm(config.model, eps, config.engine, seed)
        walls.append(_clock() - start)
        errors.append(terminal_l1_error(result, reference_terminal))
        steps.append(result.total_particle_steps)
        levels.append(result.levels_used)
    return errors, steps, walls, levels


def _aggregate(eps, errors, steps, walls, levels) -> StudyRow:
    return StudyRow(
        eps=eps,
        mean_l1_error=float(np.mean(errors)),
        std_l1_error=float(np.std(errors, ddof=1)),
        mean_particle_steps=float(np.mean(steps)),
        mean_wall_seconds=float(np.mean(walls)),
        mean_levels_used=float(np.mean(levels)),
    )


def convergence_study(config: StudyConfig) -> list[StudyRow]:
    """Repeat the full algorithm over every tolerance; rows ascend in eps.

    The error is the terminal-time L1 distance to the reference: the exact
    second moment for the linear model, a cached over-resolved single-level
    series otherwise.
    """
    _resolve_reference(config)  # fail fast when the cache is missing
    rows = []
    for eps_index, eps in enumerate(sorted(config.eps_list)):
        rows.append(_aggregate(eps, *_run_batch(config, eps, eps_index)))
    return rows


def level_growth_per_halving(rows: list[StudyRow]) -> list[float]:
    """Soft diagnostic: extra levels used per halving of eps.

    The rows ascend in eps; successive pairs with eps ratio 2 contribute one
    entry.  Values near 1 match first-order weak convergence.
    """
    growth = []
    for small, large in zip(rows, rows[1:]):
        if abs(large.eps / small.eps - 2.0) < 1e-9:
            growth.append(small.mean_levels_used - large.mean_levels_used)
    return growth


def variance_scaling_study(config: StudyConfig, max_level: int):
    """Fixed-hierarchy variance measurement, no adaptive termination.

    Runs levels 0..max_level with the configured initial counts (halving per
    level as in the adaptive driver) for each seed, then aggregates V_l.
    Returns (rows, slope) with rows (level, dt, mean V, std V) and the fitted
    slope of log2(mean V_l) against l over levels 2..max_level.
    """
    if max_level < 2:
        raise ValueError("max_level must be at least 2")
    model = config.model
    per_level = [[] for _ in range(max_level + 1)]
    for run in range(config.runs_per_eps):
        seed = derive_seed(config.seed_base, run)
        rep = run_level0(model, config.engine.n0_initial, seed,
                         workers=config.engine.workers)
        per_level[0].append(rep.level_variance)
        n = config.engine.n1_initial
        for level in range(1, max_level + 1):
            rep = run_coupled_level(
                model, level, n, rep.meanfield_series, rep.payoff_series, seed,
                workers=config.engine.workers)
            per_level[level].append(rep.level_variance)
            n = max(config.engine.min_samples, -(-n // 2))
    rows = [
        (level, model.base_dt / 2**level,
         float(np.mean(vs)), float(np.std(vs, ddof=1)))
        for level, vs in enumerate(per_level)
    ]
    levels = np.arange(2, max_level + 1)
    if len(levels) < 2:
        return rows, math.nan  # slope needs at least two levels past 1
    mean_v = np.array([rows[l][2] for l in levels])
    slope = float(np.polyfit(levels, np.log2(mean_v), 1)[0])
    return rows, slope


def matched_single_level_config(params: LinearModelParams, terminal_time: float,
                                eps: float, seed: int) -> SingleLevelConfig:
    """Single-level baseline matched to tolerance eps on the linear oracle.

    Standard-Monte-Carlo scaling: dt = T/ceil(T/eps) (so dt ~ eps) and
    N = ceil(2 V/eps^2), the same eps^2/2 sampling budget the multilevel
    allocation uses, with V the exact terminal payoff variance from the
    moment oracle.  The Euler-limit recursion confirms the time-stepping
    bias at dt ~ eps is well inside the remaining budget for this model, so
    the realized error is ~ eps and the cost scales as N/dt ~ eps^-3.
    """
    n_steps = math.ceil(terminal_time / eps)
    mean, var = linear_exact_moments(params, terminal_time)
    payoff_var = 4 * mean**2 * var + 2 * var**2
    n_samples = max(2, math.ceil(2 * payoff_var / eps**2))
    return SingleLevelConfig(dt=terminal_time / n_steps, n_samples=n_samples,
                             seed=seed)


def complexity_study(config: StudyConfig) -> ComplexityResult:
    """Particle-step scaling of the multilevel driver vs the matched
    single-level baseline over the configured tolerances (at least 3)."""
    if len(config.eps_list) < 3:
        raise ValueError("complexity study needs at least 3 tolerances")
    if config.model.name != "linear":
        raise ValueError("the matched baseline is calibrated on the linear oracle")
    params = _linear_params_of(config.model)
    exact = _oracle_second_moment(params, config.model.terminal_time)

    mlmc_rows = convergence_study(config)
    single_rows = []
    for eps_index, eps in enumerate(sorted(config.eps_list)):
        errors, steps, walls, levels = [], [], [], []
        for run in range(config.runs_per_eps):
            seed = derive_seed(config.seed_base, 1000 + eps_index, run)
            sl_conf = matched_single_level_config(
                params, config.model.terminal_time, eps, seed)
            start = _clock()
            phat, _, n_steps = run_single_level(
                config.model, sl_conf, workers=config.engine.workers)
            walls.append(_clock() - start)
            errors.append(abs(float(phat[-1, 0]) - exact))
            steps.append(n_steps)
            levels.append(0)
        single_rows.append(_aggregate(eps, errors, steps, walls, levels))

    def fit(rows):
        eps = np.log([r.eps for r in rows])
        work = np.log([r.mean_particle_steps for r in rows])
        return float(np.polyfit(eps, work, 1)[0])

    return ComplexityResult(
        mlmc_rows=mlmc_rows, single_rows=single_rows,
        mlmc_slope=fit(mlmc_rows), single_slope=fit(single_rows),
    )
