"""Command-line entry point.

Subcommands map one-to-one onto the library: ``run`` executes the adaptive
algorithm once, ``convergence``/``variance-scaling``/``complexity`` drive the
study harness, and ``reference`` generates the cached over-resolved
single-level run the non-linear studies compare against.

Settings resolve as: built-in defaults < config file < environment
(output directory only) < command-line flags.  The config file is INI-style
with sections [model], [engine], [study], [output]; unknown sections or keys
are hard errors.  Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from pathlib import Path

from . import diagnostics, output
from .diagnostics import StudyConfig
from .engine import EngineConfig, run_algorithm, sampling_error_estimate
from .models import (LinearModelParams, RotatorModelParams, make_linear_model,
                     make_pic_model, make_rotator_model)
from .pic import GridSpec
from .single_level import SingleLevelConfig, generate_reference

OUTPUT_DIR_ENV = "MFMLMC_OUTPUT_DIR"

# (section, key, parser, must_be) for every config-file/flag setting
_POSITIVE = "positive"
_NONNEG = "nonnegative"
_SETTINGS = {
    "model": ("model", str, None),
    "a": ("model", float, None),
    "b": ("model", float, None),
    "sigma2": ("model", float, _NONNEG),
    "init_mean": ("model", float, None),
    "init_var": ("model", float, _NONNEG),
    "coupling": ("model", float, None),
    "temperature": ("model", float, _POSITIVE),
    "domain_length": ("model", float, _POSITIVE),
    "cell_size": ("model", float, _POSITIVE),
    "pic_x_mean": ("model", float, None),
    "pic_x_var": ("model", float, _NONNEG),
    "terminal_time": ("model", float, _POSITIVE),
    "base_dt": ("model", float, _POSITIVE),
    "n0": ("engine", int, _POSITIVE),
    "n1": ("engine", int, _POSITIVE),
    "min_samples": ("engine", int, _POSITIVE),
    "max_level": ("engine", int, _POSITIVE),
    "max_restarts": ("engine", int, _NONNEG),
    "workers": ("engine", int, _POSITIVE),
    "eps": ("study", float, _POSITIVE),
    "eps_list": ("study", str, None),
    "runs": ("study", int, _POSITIVE),
    "seed": ("study", int, _NONNEG),
    "max_study_level": ("study", int, _POSITIVE),
    "ref_dt": ("study", float, _POSITIVE),
    "ref_samples": ("study", int, _POSITIVE),
    "ref_seed": ("study", int, _NONNEG),
    "output_dir": ("output", str, None),
    "cache_dir": ("output", str, None),
}

_DEFAULTS = {
    "model": "linear",
    "a": -0.5, "b": 0.8, "sigma2": 0.5, "init_mean": 1.0, "init_var": 0.25,
    "coupling": 1.0, "temperature": 0.125,
    "domain_length": 20.0, "cell_size": 1.0, "pic_x_mean": 10.0, "pic_x_var": 6.0,
    "terminal_time": None, "base_dt": None,  # model-dependent, resolved late
    "n0": 256, "n1": 64, "min_samples": 8, "max_level": 25, "max_restarts": 3,
    "workers": 1,
    "eps": 0.1, "eps_list": "0.2,0.1,0.05", "runs": 20, "seed": 0,
    "max_study_level": 6,
    "ref_dt": None, "ref_samples": None, "ref_seed": 0,
    "output_dir": "out", "cache_dir": "references",
}

_MODEL_TIMES = {  # (terminal_time, base_dt) defaults per model
    "linear": (1.0, 0.25),
    "rotator": (5.0, 5.0),
    "pic": (12.0, 1.0 / 3.0),
}

# section-local spellings accepted in config files
_CONFIG_ALIASES = {("output", "dir"): "output_dir"}


class UsageError(Exception):
    pass


def _parse_value(key: str, raw: str):
    section, typ, constraint = _SETTINGS[key]
    try:
        value = typ(raw)
    except ValueError:
        raise UsageError(f"invalid value for '{key}': {raw!r}") from None
    _validate(key, value)
    return value


def _validate(key: str, value):
    _, _, constraint = _SETTINGS[key]
    if constraint == _POSITIVE and not value > 0:
        raise UsageError(f"'{key}' must be positive, got {value}")
    if constraint == _NONNEG and not value >= 0:
        raise UsageError(f"'{key}' must be nonnegative, got {value}")


def _load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise UsageError(f"config file not found: {path}")
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            key = _CONFIG_ALIASES.get((section, key), key)
            if key not in _SETTINGS:
                raise UsageError(f"unknown config key '{key}' in [{section}]")
            if _SETTINGS[key][0] != section:
                raise UsageError(
                    f"config key '{key}' belongs in [{_SETTINGS[key][0]}], "
                    f"found in [{section}]")
            values[key] = _parse_value(key, raw)
    return values


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, environment and flags."""
    settings = dict(_DEFAULTS)
    if getattr(args, "config", None):
        settings.update(_load_config_file(args.config))
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        settings["output_dir"] = env_dir
    for key in _SETTINGS:
        flag = getattr(args, key, None)
        if flag is not None:
            _validate(key, flag)  # argparse already typed it
            settings[key] = flag
    if settings["model"] not in _MODEL_TIMES:
        raise UsageError(f"unknown model '{settings['model']}'")
    t_default, dt_default = _MODEL_TIMES[settings["model"]]
    if settings["terminal_time"] is None:
        settings["terminal_time"] = t_default
    if settings["base_dt"] is None:
        settings["base_dt"] = dt_default
    return settings


def build_model(settings: dict):
    name = settings["model"]
    t, dt0 = settings["terminal_time"], settings["base_dt"]
    if name == "linear":
        params = LinearModelParams(
            a=settings["a"], b=settings["b"], sigma=math.sqrt(settings["sigma2"]),
            init_mean=settings["init_mean"], init_var=settings["init_var"])
        return make_linear_model(params, terminal_time=t, base_dt=dt0)
    if name == "rotator":
        params = RotatorModelParams(
            coupling=settings["coupling"], temperature=settings["temperature"])
        return make_rotator_model(params, terminal_time=t, base_dt=dt0)
    grid = GridSpec(settings["domain_length"], settings["cell_size"])
    return make_pic_model(grid, settings["pic_x_mean"], settings["pic_x_var"],
                          terminal_time=t, base_dt=dt0)


def build_engine_config(settings: dict) -> EngineConfig:
    return EngineConfig(
        n0_initial=settings["n0"], n1_initial=settings["n1"],
        min_samples=settings["min_samples"], max_level=settings["max_level"],
        max_restarts=settings["max_restarts"], workers=settings["workers"])


def _eps_list(settings: dict) -> list[float]:
    try:
        eps = [float(tok) for tok in settings["eps_list"].split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"invalid eps_list: {settings['eps_list']!r}") from None
    if not eps or any(e <= 0 for e in eps):
        raise UsageError("eps_list entries must be positive")
    return eps


def reference_config(settings: dict, model) -> SingleLevelConfig:
    """Over-resolved single-level reference settings (desk-scale defaults)."""
    dt = settings["ref_dt"]
    n = settings["ref_samples"]
    if model.name == "rotator":
        dt = dt or model.terminal_time / 512
        n = n or 1_000_000
    elif model.name == "pic":
        dt = dt or model.base_dt / 64
        n = n or 10_000 * model.meanfield_dim
    else:
        dt = dt or model.base_dt / 64
        n = n or 1_000_000
    return SingleLevelConfig(dt=dt, n_samples=n, seed=settings["ref_seed"])


def _study_config(settings: dict, model) -> StudyConfig:
    if model.name == "linear":
        reference = "oracle"
    else:
        reference = reference_config(settings, model)
    return StudyConfig(
        model=model, eps_list=_eps_list(settings), runs_per_eps=settings["runs"],
        seed_base=settings["seed"], reference=reference,
        engine=build_engine_config(settings), cache_dir=settings["cache_dir"])


def _cmd_run(settings: dict) -> int:
    model = build_model(settings)
    config = build_engine_config(settings)
    start = diagnostics._clock()
    result = run_algorithm(model, settings["eps"], config, settings["seed"])
    wall = diagnostics._clock() - start
    files = output.emit_run_csv(result, settings["output_dir"], wall,
                                sampling_error_estimate(result.levels))
    print(f"levels used: {result.levels_used}, "
          f"particle steps: {result.total_particle_steps}")
    for path in files:
        print(f"wrote {path}")
    return 0


def _cmd_reference(settings: dict) -> int:
    model = build_model(settings)
    conf = reference_config(settings, model)
    _, se, path = generate_reference(model, conf, settings["cache_dir"],
                                     workers=settings["workers"])
    print(f"reference cached at {path} (terminal standard error {se:.3e})")
    return 0


def _cmd_convergence(settings: dict) -> int:
    model = build_model(settings)
    config = _study_config(settings, model)
    rows = diagnostics.convergence_study(config)
    out_dir = Path(settings["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    output.write_study_csv(out_dir / "convergence.csv", rows)
    growth = diagnostics.level_growth_per_halving(rows)
    if growth:
        print("levels added per eps halving: "
              + ", ".join(f"{g:.2f}" for g in growth))
    print(f"wrote {out_dir / 'convergence.csv'}")
    return 0


def _cmd_variance_scaling(settings: dict) -> int:
    model = build_model(settings)
    config = _study_config(settings, model)
    rows, slope = diagnostics.variance_scaling_study(
        config, settings["max_study_level"])
    out_dir = Path(settings["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    output.write_variance_csv(out_dir / "variance_scaling.csv", rows)
    print(f"fitted log2 V_l slope over levels 2..{settings['max_study_level']}: "
          f"{slope:.3f}")
    print(f"wrote {out_dir / 'variance_scaling.csv'}")
    return 0


def _cmd_complexity(settings: dict) -> int:
    model = build_model(settings)
    config = _study_config(settings, model)
    result = diagnostics.complexity_study(config)
    out_dir = Path(settings["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    labeled = ([("mlmc", r) for r in result.mlmc_rows]
               + [("single-level", r) for r in result.single_rows])
    output.write_complexity_csv(out_dir / "complexity.csv", labeled)
    print(f"mlmc complexity slope: {result.mlmc_slope:.3f}, "
          f"single-level: {result.single_slope:.3f}")
    print(f"wrote {out_dir / 'complexity.csv'}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "reference": _cmd_reference,
    "convergence": _cmd_convergence,
    "variance-scaling": _cmd_variance_scaling,
    "complexity": _cmd_complexity,
}


def _add_common_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="INI config file")
    sub.add_argument("--model", choices=sorted(_MODEL_TIMES))
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", dest="output_dir")
    sub.add_argument("--cache-dir", dest="cache_dir")
    for key in ("a", "b", "sigma2", "init_mean", "init_var", "coupling",
                "temperature", "domain_length", "cell_size", "pic_x_mean",
                "pic_x_var", "terminal_time", "base_dt"):
        sub.add_argument("--" + key.replace("_", "-"), dest=key, type=float)
    for key in ("n0", "n1", "min_samples", "max_level", "max_restarts", "workers"):
        sub.add_argument("--" + key.replace("_", "-"), dest=key, type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfmlmc",
        description="Mean-field multilevel Monte Carlo for interacting "
                    "particle systems")
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="one adaptive multilevel run")
    _add_common_flags(run)
    run.add_argument("--eps", type=float)

    ref = subs.add_parser("reference", help="generate/cache an over-resolved "
                          "single-level reference")
    _add_common_flags(ref)
    ref.add_argument("--ref-dt", dest="ref_dt", type=float)
    ref.add_argument("--ref-samples", dest="ref_samples", type=int)
    ref.add_argument("--ref-seed", dest="ref_seed", type=int)

    for name, help_text in (
        ("convergence", "L1-error vs tolerance study"),
        ("variance-scaling", "level-difference variance vs level"),
        ("complexity", "particle-step scaling vs matched single-level baseline"),
    ):
        sub = subs.add_parser(name, help=help_text)
        _add_common_flags(sub)
        sub.add_argument("--eps-list", dest="eps_list")
        sub.add_argument("--runs", type=int)
        if name == "variance-scaling":
            sub.add_argument("--max-study-level", dest="max_study_level", type=int)
        if name != "complexity":
            sub.add_argument("--ref-dt", dest="ref_dt", type=float)
            sub.add_argument("--ref-samples", dest="ref_samples", type=int)
            sub.add_argument("--ref-seed", dest="ref_seed", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args)
        return _COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
