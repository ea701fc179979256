"""Coupled multilevel particle evolution and the adaptive driver.

Level 0 evolves a plain interacting ensemble.  Every higher level evolves
paired fine/coarse ensembles that share initial data and Brownian paths (the
coarse increments are pairwise sums of the fine ones); the coarse member runs
against the *frozen* mean-field series of the level below, and the level's
own mean-field/payoff series are assembled as that stored series plus the
ensemble average of the per-sample fine-minus-coarse corrections.  The
adaptive driver grows the hierarchy until consecutive-level payoff estimates
agree to the requested tolerance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .models import ModelSpec
from .streams import EnsembleStreams

TERMINATION_FACTOR = 1.0 - 1.0 / math.sqrt(2.0)

# floor for measured level variances entering the sample allocation, so
# degenerate (exactly coupled) payoffs cannot demand zero samples
VARIANCE_FLOOR = 1e-30

# ceil() guard: analytically integer ratios must not round up from FP noise
_CEIL_EPS = 1e-9

# cap on the increment buffer, in doubles (~32 MB)
_MAX_BUFFER_ELEMS = 1 << 22


class ConfigurationError(ValueError):
    """Invalid engine configuration (e.g. fewer than 2 samples)."""


class ContractViolationError(ValueError):
    """A level was fed inconsistent lower-level series."""


class DivergenceError(RuntimeError):
    """Non-finite particle state encountered."""

    def __init__(self, level: int, step: int):
        super().__init__(f"non-finite state at level {level}, step {step}")
        self.level = level
        self.step = step


class RunawayRefinementError(RuntimeError):
    """The adaptive driver exceeded the configured level cap."""

    def __init__(self, max_level: int, partial: "RunResult"):
        super().__init__(
            f"tolerance not reached within the level cap ({max_level}); "
            "partial results attached"
        )
        self.partial = partial


@dataclass
class EngineConfig:
    """Knobs for the adaptive driver."""

    n0_initial: int = 256
    n1_initial: int = 64
    min_samples: int = 8
    max_level: int = 25
    max_restarts: int = 3
    workers: int = 1


@dataclass
class MeanFieldSeries:
    """Per-level time series of the multilevel mean-field estimate."""

    level: int
    dt: float
    values: np.ndarray  # (n_steps + 1, meanfield_dim)


@dataclass
class CoupledEnsemble:
    """Paired fine/coarse particle states at one level.

    The pair shares initial data (fine_states == coarse_states at creation)
    and Brownian increments; the coarse state is synchronized at
    fine_index/2 exactly when fine_index is even.
    """

    level: int
    fine_states: np.ndarray   # (n_samples, state_dim)
    coarse_states: np.ndarray
    fine_index: int
    sample_streams: EnsembleStreams


@dataclass
class LevelReport:
    """Statistics of one completed level pass."""

    level: int
    dt: float
    n_samples: int
    payoff_series: np.ndarray          # (n_steps + 1, payoff_dim)
    meanfield_series: MeanFieldSeries
    level_variance: float
    level_diff: float                  # sup-norm gap to the level below; nan at level 0
    particle_steps: int
    payoff_correction: np.ndarray | None = None     # averaged per-level correction sums
    meanfield_correction: np.ndarray | None = None


@dataclass
class RunResult:
    """Output of the adaptive driver."""

    final_payoff_series: np.ndarray
    levels: list[LevelReport]
    total_particle_steps: int
    epsilon: float
    levels_used: int
    l_est_history: list[int]
    restarts: int = 0
    reallocation_warnings: int = 0


def interpolate_values(values: np.ndarray, s: float) -> np.ndarray:
    """Linear interpolation of a time series at fractional index s."""
    last = len(values) - 1
    if not 0 <= s <= last:
        raise IndexError(f"index {s} outside [0, {last}]")
    lo = math.floor(s)
    hi = math.ceil(s)
    frac = s - lo
    return frac * values[hi] + (1.0 - frac) * values[lo]


def interpolate(series: MeanFieldSeries, s: float) -> np.ndarray:
    """Mean-field estimate at fractional step index s (exact at nodes)."""
    return interpolate_values(series.values, s)


def coarsen_increments(dw_even: np.ndarray, dw_odd: np.ndarray) -> np.ndarray:
    """Coarse Brownian increment: the sum of two consecutive fine ones."""
    return dw_even + dw_odd


class _Evaluator:
    """Runs the model callables over the sample axis, optionally chunked
    across threads.  Chunks write disjoint slices and every reduction happens
    afterwards over the full array in index order, so results are identical
    for any worker count."""

    def __init__(self, workers: int = 1):
        self.workers = max(1, workers)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def __call__(self, fn, states, *extra):
        n = states.shape[0]
        if self._pool is None or n < 2 * self.workers:
            return np.asarray(fn(states, *extra))
        bounds = []
        step = -(-n // self.workers)
        for lo in range(0, n, step):
            bounds.append((lo, min(lo + step, n)))
        head = np.asarray(fn(states[: bounds[0][1]], *extra))
        out = np.empty((n,) + head.shape[1:], dtype=head.dtype)
        out[: bounds[0][1]] = head

        def run(lo, hi):
            out[lo:hi] = fn(states[lo:hi], *extra)

        futures = [self._pool.submit(run, lo, hi) for lo, hi in bounds[1:]]
        for fut in futures:
            fut.result()
        return out


def _max_component_variance(diffs: np.ndarray) -> float:
    """Largest per-component sample variance (ddof=1) across samples."""
    return float(np.var(diffs, axis=0, ddof=1).max())


def _window_steps(n_samples: int, noise_dim: int, total: int, multiple: int) -> int:
    w = max(multiple, _MAX_BUFFER_ELEMS // max(1, n_samples * noise_dim))
    w -= w % multiple
    return min(total, max(multiple, w))


def _check_finite(states: np.ndarray, level: int, step: int):
    if not np.isfinite(states).all():
        raise DivergenceError(level, step)


def _evolve_single(model: ModelSpec, dt: float, n_samples: int, root_seed: int, *,
                   level: int = 0, round_: int = 0, workers: int = 1,
                   frozen: MeanFieldSeries | None = None,
                   collect_variance: bool = True):
    """Shared single-ensemble stepper.

    With ``frozen=None`` the mean field is the ensemble average of R,
    recomputed from the pre-step states and held fixed while every particle
    advances.  With a frozen series the stored values drive the step instead
    (the rule a coupled coarse member follows), which is also how the
    identical-distribution property is exercised in tests.

    ``collect_variance=False`` tracks the payoff variance at the terminal
    step only (enough for reference standard errors); the recorded series are
    unaffected, so level-0 output stays bit-identical either way.

    Returns (payoff_series, meanfield_series_values, max_variance,
    terminal_states).
    """
    if n_samples < 2:
        raise ConfigurationError("need at least 2 samples")
    n_steps = model.steps_for(dt)
    if frozen is not None and len(frozen.values) != n_steps + 1:
        raise ContractViolationError(
            f"frozen series has {len(frozen.values)} entries, expected {n_steps + 1}"
        )
    ens = EnsembleStreams(root_seed, level, n_samples, round_)
    states = ens.initial_states(model.initial_sampler, model.state_dim)
    ev = _Evaluator(workers)
    payoff_is_meanfield = model.payoff_fn is model.meanfield_fn
    mf_hook = model.ensemble_meanfield

    rhat = np.empty((n_steps + 1, model.meanfield_dim))
    phat = np.empty((n_steps + 1, model.payoff_dim))
    vmax = 0.0
    try:
        window = _window_steps(n_samples, model.noise_dim, n_steps, 1)
        dw = None
        consumed = 0
        step = 0
        while True:
            want_var = collect_variance or step == n_steps
            if mf_hook is not None:
                rhat[step] = mf_hook(states)
                if payoff_is_meanfield:
                    phat[step] = rhat[step]
                    if want_var:
                        vmax = max(vmax, _max_component_variance(
                            ev(model.meanfield_fn, states)))
                else:
                    p_vals = ev(model.payoff_fn, states)
                    phat[step] = p_vals.mean(axis=0)
                    if want_var:
                        vmax = max(vmax, _max_component_variance(p_vals))
            else:
                r_vals = ev(model.meanfield_fn, states)
                p_vals = r_vals if payoff_is_meanfield else ev(model.payoff_fn, states)
                rhat[step] = r_vals.mean(axis=0)
                phat[step] = p_vals.mean(axis=0)
                if want_var:
                    vmax = max(vmax, _max_component_variance(p_vals))
            if step == n_steps:
                break
            mf = frozen.values[step] if frozen is not None else rhat[step]
            t = step * dt
            drift = ev(model.drift, states, t, mf)
            if model.zero_diffusion:
                states = states + drift * dt
            else:
                if dw is None or consumed == dw.shape[1]:
                    dw = ens.increments(step, min(step + window, n_steps),
                                        model.noise_dim, dt)
                    consumed = 0
                beta = ev(model.diffusion, states, t, mf)
                states = (states + drift * dt
                          + np.einsum("...ij,...j->...i", beta, dw[:, consumed]))
                consumed += 1
            step += 1
            _check_finite(states, level, step)
        return phat, rhat, vmax, states
    finally:
        ev.close()


def run_level0(model: ModelSpec, n_samples: int, root_seed: int, *,
               round_: int = 0, workers: int = 1) -> LevelReport:
    """Level-0 pass: the plain interacting-particle scheme at base_dt.

    At each step the mean field is formed from the whole pre-step ensemble,
    then every particle advances with that frozen value.  The level variance
    is the largest per-component sample variance of the payoff over time.
    """
    phat, rhat, vmax, _ = _evolve_single(
        model, model.base_dt, n_samples, root_seed,
        level=0, round_=round_, workers=workers,
    )
    n_steps = model.steps_for(model.base_dt)
    return LevelReport(
        level=0, dt=model.base_dt, n_samples=n_samples,
        payoff_series=phat,
        meanfield_series=MeanFieldSeries(0, model.base_dt, rhat),
        level_variance=vmax, level_diff=math.nan,
        particle_steps=n_samples * n_steps,
    )


def run_frozen_ensemble(model: ModelSpec, dt: float, frozen: MeanFieldSeries,
                        n_samples: int, root_seed: int, *, level: int = 0,
                        workers: int = 1):
    """Evolve an independent ensemble under a prescribed mean-field series.

    This is exactly the update rule a coupled coarse member follows, so the
    terminal states here are distributed like those coarse members
    (conditionally on the series).  Returns (payoff_series, terminal_states).
    """
    phat, _, _, states = _evolve_single(
        model, dt, n_samples, root_seed,
        level=level, workers=workers, frozen=frozen,
    )
    return phat, states


def run_coupled_level(model: ModelSpec, level: int, n_samples: int,
                      coarse_meanfield: MeanFieldSeries, coarse_payoff: np.ndarray,
                      root_seed: int, *, round_: int = 0, workers: int = 1,
                      keep_states: bool = False) -> LevelReport:
    """One coupled fine/coarse pass at ``level`` >= 1.

    Per coarse step m (fine indices 2m, 2m+1):

      a. draw both fine Brownian increments;
      b. form the level's mean field at 2m from the current fine and coarse
         states plus the stored lower-level value at m;
      c. advance every fine path one step with that value;
      d. advance every coarse path one step with the *stored* lower-level
         mean field at m and the summed increments;
      e. form the mean field at 2m+1 from the lower-level series at m+1/2 and
         the per-sample coarse values interpolated to m+1/2;
      f. advance every fine path a second step.

    This is the unique order in which every quantity each update references
    already exists.  The payoff series follows the same correction pattern,
    the level variance tracks the per-sample fine-minus-coarse payoff gaps,
    and ``level_diff`` is the sup-norm distance between this level's payoff
    series and the (interpolated) one below.
    """
    if level < 1:
        raise ConfigurationError("coupled levels start at 1")
    if n_samples < 2:
        raise ConfigurationError("need at least 2 samples")
    dt_f = model.base_dt / 2**level
    dt_c = 2.0 * dt_f
    n_coarse = model.steps_for(dt_c)
    n_fine = 2 * n_coarse
    if len(coarse_meanfield.values) != n_coarse + 1:
        raise ContractViolationError(
            f"coarse mean-field series has {len(coarse_meanfield.values)} entries, "
            f"expected {n_coarse + 1}"
        )
    if len(coarse_payoff) != n_coarse + 1:
        raise ContractViolationError(
            f"coarse payoff series has {len(coarse_payoff)} entries, "
            f"expected {n_coarse + 1}"
        )

    ens = EnsembleStreams(root_seed, level, n_samples, round_)
    init = ens.initial_states(model.initial_sampler, model.state_dim)
    pair = CoupledEnsemble(
        level=level, fine_states=init, coarse_states=init.copy(),
        fine_index=0, sample_streams=ens,
    )
    ev = _Evaluator(workers)
    payoff_is_meanfield = model.payoff_fn is model.meanfield_fn

    gamma, eta = model.meanfield_dim, model.payoff_dim
    rhat = np.empty((n_fine + 1, gamma))
    phat = np.empty((n_fine + 1, eta))
    r_corr = np.empty((n_fine + 1, gamma))
    p_corr = np.empty((n_fine + 1, eta))
    vmax = 0.0

    def record(n, r_fine, p_fine, r_half, p_half, mf_coarse, pay_coarse):
        nonlocal vmax
        r_corr[n] = (r_fine - r_half).mean(axis=0)
        p_diff = p_fine - p_half
        p_corr[n] = p_diff.mean(axis=0)
        rhat[n] = mf_coarse + r_corr[n]
        phat[n] = pay_coarse + p_corr[n]
        vmax = max(vmax, _max_component_variance(p_diff))

    try:
        window = _window_steps(n_samples, model.noise_dim, n_fine, 2)
        dw = None
        consumed = 0
        r_c = ev(model.meanfield_fn, pair.coarse_states)
        p_c = r_c if payoff_is_meanfield else ev(model.payoff_fn, pair.coarse_states)
        for m in range(n_coarse):
            if not model.zero_diffusion and (dw is None or consumed == dw.shape[1]):
                dw = ens.increments(2 * m, min(2 * m + window, n_fine),
                                    model.noise_dim, dt_f)
                consumed = 0
            # (b) even fine index 2m
            r_f = ev(model.meanfield_fn, pair.fine_states)
            p_f = r_f if payoff_is_meanfield else ev(model.payoff_fn, pair.fine_states)
            record(2 * m, r_f, p_f, r_c, p_c,
                   coarse_meanfield.values[m], coarse_payoff[m])
            # (c) first fine step
            t = 2 * m * dt_f
            drift = ev(model.drift, pair.fine_states, t, rhat[2 * m])
            if model.zero_diffusion:
                pair.fine_states = pair.fine_states + drift * dt_f
            else:
                beta = ev(model.diffusion, pair.fine_states, t, rhat[2 * m])
                pair.fine_states = (pair.fine_states + drift * dt_f
                                    + np.einsum("...ij,...j->...i", beta, dw[:, consumed]))
            pair.fine_index = 2 * m + 1
            # (d) coarse step with the frozen lower-level mean field
            tc = m * dt_c
            mf_c = coarse_meanfield.values[m]
            drift = ev(model.drift, pair.coarse_states, tc, mf_c)
            if model.zero_diffusion:
                pair.coarse_states = pair.coarse_states + drift * dt_c
            else:
                dwc = coarsen_increments(dw[:, consumed], dw[:, consumed + 1])
                beta = ev(model.diffusion, pair.coarse_states, tc, mf_c)
                pair.coarse_states = (pair.coarse_states + drift * dt_c
                                      + np.einsum("...ij,...j->...i", beta, dwc))
            # (e) odd fine index 2m+1, coarse values interpolated to m+1/2
            r_c_next = ev(model.meanfield_fn, pair.coarse_states)
            p_c_next = r_c_next if payoff_is_meanfield else ev(model.payoff_fn, pair.coarse_states)
            r_f = ev(model.meanfield_fn, pair.fine_states)
            p_f = r_f if payoff_is_meanfield else ev(model.payoff_fn, pair.fine_states)
            record(2 * m + 1, r_f, p_f,
                   0.5 * (r_c + r_c_next), 0.5 * (p_c + p_c_next),
                   interpolate(coarse_meanfield, m + 0.5),
                   interpolate_values(coarse_payoff, m + 0.5))
            # (f) second fine step
            t = (2 * m + 1) * dt_f
            drift = ev(model.drift, pair.fine_states, t, rhat[2 * m + 1])
            if model.zero_diffusion:
                pair.fine_states = pair.fine_states + drift * dt_f
            else:
                beta = ev(model.diffusion, pair.fine_states, t, rhat[2 * m + 1])
                pair.fine_states = (pair.fine_states + drift * dt_f
                                    + np.einsum("...ij,...j->...i", beta, dw[:, consumed + 1]))
                consumed += 2
            pair.fine_index = 2 * m + 2
            _check_finite(pair.fine_states, level, pair.fine_index)
            _check_finite(pair.coarse_states, level, pair.fine_index)
            r_c, p_c = r_c_next, p_c_next
        # final shared index
        r_f = ev(model.meanfield_fn, pair.fine_states)
        p_f = r_f if payoff_is_meanfield else ev(model.payoff_fn, pair.fine_states)
        record(n_fine, r_f, p_f, r_c, p_c,
               coarse_meanfield.values[n_coarse], coarse_payoff[n_coarse])
    finally:
        ev.close()

    level_diff = float(np.abs(p_corr).max())
    report = LevelReport(
        level=level, dt=dt_f, n_samples=n_samples,
        payoff_series=phat,
        meanfield_series=MeanFieldSeries(level, dt_f, rhat),
        level_variance=vmax, level_diff=level_diff,
        particle_steps=n_samples * (n_fine + n_coarse),
        payoff_correction=p_corr, meanfield_correction=r_corr,
    )
    if keep_states:
        return report, pair
    return report


def compute_sample_counts(eps: float, variances, dts, min_samples: int = 1) -> list[int]:
    """Per-level sample counts bounding the mean-square sampling error.

    N_l = ceil((2/eps^2) sqrt(V_l dt_l) sum_m sqrt(V_m/dt_m)), floored at
    ``min_samples``.  Zero variances are clamped to a tiny floor first.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    v = np.maximum(np.asarray(variances, dtype=float), VARIANCE_FLOOR)
    dts = np.asarray(dts, dtype=float)
    if v.size == 0 or v.shape != dts.shape:
        raise ContractViolationError("variance and dt lists must match and be nonempty")
    total = np.sum(np.sqrt(v / dts))
    raw = (2.0 / eps**2) * np.sqrt(v * dts) * total
    return [max(min_samples, math.ceil(x - _CEIL_EPS)) for x in raw]


def estimate_levels_initial(eps1: float, eps: float) -> int:
    """First prediction of the number of levels, from the level-1 gap."""
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if eps1 <= 0:
        return 1  # exact coupling: nothing beyond the mandatory levels
    return max(1, math.ceil(2.0 * math.log2(eps1 / eps) + 2.0 - _CEIL_EPS))


def estimate_levels_update(current_l: int, eps_l: float, eps: float) -> int:
    """Refreshed level prediction; never below the levels already computed."""
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if eps_l <= 0:
        return current_l
    est = current_l + 1 + math.ceil(2.0 * math.log2(eps_l / eps) - _CEIL_EPS)
    return max(current_l, est)


def sampling_error_estimate(levels: list[LevelReport]) -> float:
    """Sum of V_l/N_l: the independence approximation of the estimator
    variance, reported as a diagnostic."""
    if not levels:
        raise ContractViolationError("need at least one level report")
    return float(sum(rep.level_variance / rep.n_samples for rep in levels))


def _extrapolated_counts(eps, levels, l_est, base_dt, min_samples):
    """Allocation over levels 0..l_est, extending measured variances by the
    constant-V/dt assumption anchored at the last measured level."""
    dts = [base_dt / 2**l for l in range(l_est + 1)]
    v = [rep.level_variance for rep in levels]
    anchor = levels[-1]
    for l in range(len(levels), l_est + 1):
        v.append(max(anchor.level_variance, VARIANCE_FLOOR) * dts[l] / anchor.dt)
    return compute_sample_counts(eps, v, dts, min_samples)


def run_algorithm(model: ModelSpec, eps: float, config: EngineConfig,
                  seed: int) -> RunResult:
    """Adaptive mean-field multilevel driver.

    Runs levels 0 and 1 at the configured initial counts, predicts the final
    level count, reallocates and restarts the two base levels if they were
    undersampled (fresh streams, at most ``max_restarts`` times), then deepens
    the hierarchy - halving the sample count per level - until the
    consecutive-level payoff gap falls below eps*(1 - 1/sqrt(2)).
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    total_steps = 0
    warnings = 0
    n0, n1 = config.n0_initial, config.n1_initial
    restarts = 0

    for round_ in range(config.max_restarts + 1):
        rep0 = run_level0(model, n0, seed, round_=round_, workers=config.workers)
        rep1 = run_coupled_level(
            model, 1, n1, rep0.meanfield_series, rep0.payoff_series, seed,
            round_=round_, workers=config.workers)
        total_steps += rep0.particle_steps + rep1.particle_steps
        l_est = estimate_levels_initial(rep1.level_diff, eps)
        counts = _extrapolated_counts(
            eps, [rep0, rep1], max(l_est, 1), model.base_dt, config.min_samples)
        if counts[0] <= n0 and counts[1] <= n1:
            break
        if round_ == config.max_restarts:
            break
        n0, n1 = max(n0, counts[0]), max(n1, counts[1])
        restarts += 1

    levels = [rep0, rep1]
    l_est_history = [l_est]
    level = 1
    while levels[level].level_diff > eps * TERMINATION_FACTOR:
        if level + 1 > config.max_level:
            partial = RunResult(
                final_payoff_series=levels[level].payoff_series,
                levels=levels, total_particle_steps=total_steps,
                epsilon=eps, levels_used=level, l_est_history=l_est_history,
                restarts=restarts, reallocation_warnings=warnings)
            raise RunawayRefinementError(config.max_level, partial)
        level += 1
        n_l = max(config.min_samples, -(-levels[level - 1].n_samples // 2))
        prev = levels[level - 1]
        rep = run_coupled_level(
            model, level, n_l, prev.meanfield_series, prev.payoff_series, seed,
            round_=restarts, workers=config.workers)
        levels.append(rep)
        total_steps += rep.particle_steps
        l_est = estimate_levels_update(level, rep.level_diff, eps)
        l_est_history.append(l_est)
        counts = _extrapolated_counts(
            eps, levels, l_est, model.base_dt, config.min_samples)
        warnings += sum(
            1 for l, rep_l in enumerate(levels) if counts[l] > rep_l.n_samples)

    return RunResult(
        final_payoff_series=levels[level].payoff_series,
        levels=levels,
        total_particle_steps=total_steps,
        epsilon=eps,
        levels_used=level,
        l_est_history=l_est_history,
        restarts=restarts,
        reallocation_warnings=warnings,
    )
