"""Standard single-level particle scheme and the reference-run cache.

The single-level scheme is the complexity baseline and, over-resolved, the
reference oracle for models without closed-form moments.  Level 0 of the
multilevel engine *is* this scheme, so both share one stepper and produce
bit-identical output at equal parameters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import _evolve_single
from .models import ModelSpec
from .output import read_payoff_csv, write_payoff_csv


@dataclass(frozen=True)
class SingleLevelConfig:
    dt: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples")


def run_single_level(model: ModelSpec, config: SingleLevelConfig, *,
                     workers: int = 1):
    """Evolve N particles at a fixed step with the frozen per-step mean field.

    Returns (payoff_series, meanfield_series, particle_steps).
    """
    phat, rhat, _, _ = _evolve_single(
        model, config.dt, config.n_samples, config.seed, workers=workers,
        collect_variance=False)
    return phat, rhat, config.n_samples * model.steps_for(config.dt)


def reference_key(model: ModelSpec, config: SingleLevelConfig) -> str:
    """Stable cache key of (model, params, dt, N, seed)."""
    payload = json.dumps({
        "model": model.name,
        "params": model.param_tag,
        "terminal_time": model.terminal_time,
        "dt": config.dt,
        "n_samples": config.n_samples,
        "seed": config.seed,
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def reference_path(cache_dir, model: ModelSpec, config: SingleLevelConfig) -> Path:
    return Path(cache_dir) / f"{model.name}-{reference_key(model, config)}"


def generate_reference(model: ModelSpec, config: SingleLevelConfig, cache_dir, *,
                       workers: int = 1, force: bool = False):
    """Run (or reuse) an over-resolved reference and cache it to disk.

    Each reference lives in its own directory: key.json holds the config key,
    payoff.csv the series in the standard schema.  Returns (payoff_series,
    standard_error, path); the standard error is the largest per-component
    sampling error of the terminal payoff, reported so study tolerances can
    account for reference noise.
    """
    path = reference_path(cache_dir, model, config)
    if path.exists() and not force:
        return load_reference(model, config, cache_dir) + (path,)
    phat, rhat, _, se = _reference_run(model, config, workers)
    path.mkdir(parents=True, exist_ok=True)
    (path / "key.json").write_text(json.dumps({
        "model": model.name,
        "params": model.param_tag,
        "terminal_time": model.terminal_time,
        "dt": config.dt,
        "n_samples": config.n_samples,
        "seed": config.seed,
        "terminal_standard_error": se,
    }, sort_keys=True, indent=1) + "\n")
    write_payoff_csv(path / "payoff.csv", config.dt, phat)
    return phat, se, path


def _reference_run(model: ModelSpec, config: SingleLevelConfig, workers: int):
    phat, rhat, v_term, _ = _evolve_single(
        model, config.dt, config.n_samples, config.seed, workers=workers,
        collect_variance=False)
    se = float(np.sqrt(v_term / config.n_samples))
    return phat, rhat, v_term, se


def load_reference(model: ModelSpec, config: SingleLevelConfig, cache_dir):
    """Fetch a cached reference; raises FileNotFoundError when absent."""
    path = reference_path(cache_dir, model, config)
    if not path.exists():
        raise FileNotFoundError(
            f"no cached reference at {path}; generate it first with the "
            "'reference' subcommand")
    meta = json.loads((path / "key.json").read_text())
    _, values = read_payoff_csv(path / "payoff.csv")
    return values, float(meta["terminal_standard_error"])
