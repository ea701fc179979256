"""CSV emission and strict parsing.

All files carry a mandatory header row, ``\n`` newlines, and floats printed
with 17 significant digits so every value round-trips bit-exactly.  Readers
are strict: wrong headers or column counts are errors.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

PAYOFF_HEADER = ["time", "component_index", "value"]
LEVELS_HEADER = ["level", "dt", "n_samples", "V_level", "eps_level", "particle_steps"]
SUMMARY_HEADER = ["eps", "L", "total_particle_steps", "wall_seconds",
                  "sampling_error_estimate"]
STUDY_HEADER = ["eps", "mean_l1_error", "std_l1_error", "mean_particle_steps",
                "mean_wall_seconds", "mean_levels_used"]
COMPLEXITY_HEADER = ["method"] + STUDY_HEADER
VARIANCE_HEADER = ["level", "dt", "mean_V", "std_V"]


def fmt(x) -> str:
    """17-significant-digit float formatting (round-trip exact)."""
    return format(float(x), ".17g")


def _write_rows(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise ValueError(f"{path}: expected header {header}, got {got}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} columns")
            rows.append(row)
        return rows


def write_payoff_csv(path, dt: float, values: np.ndarray):
    """payoff.csv: one row per (time index, payoff component)."""
    values = np.atleast_2d(values)
    rows = [
        (fmt(n * dt), str(k), fmt(values[n, k]))
        for n in range(values.shape[0])
        for k in range(values.shape[1])
    ]
    _write_rows(path, PAYOFF_HEADER, rows)


def read_payoff_csv(path):
    """Parse payoff.csv back into (times (n+1,), values (n+1, eta))."""
    rows = _read_rows(path, PAYOFF_HEADER)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    eta = max(int(r[1]) for r in rows) + 1
    if len(rows) % eta:
        raise ValueError(f"{path}: row count {len(rows)} not a multiple of {eta}")
    n_times = len(rows) // eta
    times = np.empty(n_times)
    values = np.empty((n_times, eta))
    for idx, row in enumerate(rows):
        n, k = divmod(idx, eta)
        if int(row[1]) != k:
            raise ValueError(f"{path}: component indices out of order")
        times[n] = float(row[0])
        values[n, k] = float(row[2])
    return times, values


def write_levels_csv(path, levels):
    rows = [
        (str(rep.level), fmt(rep.dt), str(rep.n_samples), fmt(rep.level_variance),
         fmt(rep.level_diff), str(rep.particle_steps))
        for rep in levels
    ]
    _write_rows(path, LEVELS_HEADER, rows)


def write_summary_csv(path, eps, levels_used, total_particle_steps, wall_seconds,
                      sampling_error):
    _write_rows(path, SUMMARY_HEADER, [(
        fmt(eps), str(levels_used), str(total_particle_steps),
        fmt(wall_seconds), fmt(sampling_error),
    )])


def emit_run_csv(result, out_dir, wall_seconds: float, sampling_error: float):
    """Write payoff.csv, levels.csv and summary.csv for one run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    final = result.levels[result.levels_used]
    write_payoff_csv(out_dir / "payoff.csv", final.dt, result.final_payoff_series)
    write_levels_csv(out_dir / "levels.csv", result.levels)
    write_summary_csv(out_dir / "summary.csv", result.epsilon, result.levels_used,
                      result.total_particle_steps, wall_seconds, sampling_error)
    return [out_dir / name for name in ("payoff.csv", "levels.csv", "summary.csv")]


def write_study_csv(path, rows):
    """convergence.csv: one row per tolerance."""
    _write_rows(path, STUDY_HEADER, [
        (fmt(r.eps), fmt(r.mean_l1_error), fmt(r.std_l1_error),
         fmt(r.mean_particle_steps), fmt(r.mean_wall_seconds),
         fmt(r.mean_levels_used))
        for r in rows
    ])


def write_complexity_csv(path, labeled_rows):
    """complexity.csv: study rows tagged with the method that produced them."""
    _write_rows(path, COMPLEXITY_HEADER, [
        (method, fmt(r.eps), fmt(r.mean_l1_error), fmt(r.std_l1_error),
         fmt(r.mean_particle_steps), fmt(r.mean_wall_seconds),
         fmt(r.mean_levels_used))
        for method, r in labeled_rows
    ])


def write_variance_csv(path, rows):
    """variance_scaling.csv: per-level variance statistics."""
    _write_rows(path, VARIANCE_HEADER, [
        (str(level), fmt(dt), fmt(mean_v), fmt(std_v))
        for level, dt, mean_v, std_v in rows
    ])
