import numpy as np
import pytest

from mfmlmc import cli
from mfmlmc.output import (read_payoff_csv, LEVELS_HEADER, PAYOFF_HEADER,
                           SUMMARY_HEADER)


def run_cli(*args):
    return cli.main(list(args))


def test_defaults_follow_the_standard_linear_setup():
    parser = cli.build_parser()
    args = parser.parse_args(["run", "--model", "linear"])
    settings = cli.resolve_settings(args)
    assert settings["a"] == -0.5
    assert settings["b"] == 0.8
    assert settings["sigma2"] == 0.5
    assert settings["terminal_time"] == 1.0
    assert settings["base_dt"] == 0.25


def test_model_specific_time_defaults():
    parser = cli.build_parser()
    rot = cli.resolve_settings(parser.parse_args(["run", "--model", "rotator"]))
    assert rot["terminal_time"] == 5.0 and rot["base_dt"] == 5.0
    pic = cli.resolve_settings(parser.parse_args(["run", "--model", "pic"]))
    assert pic["terminal_time"] == 12.0
    assert pic["base_dt"] == pytest.approx(1.0 / 3.0)
    assert pic["domain_length"] == 20.0 and pic["cell_size"] == 1.0


def test_zero_eps_is_a_usage_error(tmp_path, capsys):
    code = run_cli("run", "--model", "linear", "--eps", "0",
                   "--out", str(tmp_path))
    assert code == 2
    assert "eps" in capsys.readouterr().err


def test_flag_overrides_config_file(tmp_path):
    conf = tmp_path / "study.ini"
    conf.write_text("[study]\neps = 0.1\nseed = 3\n")
    parser = cli.build_parser()
    args = parser.parse_args(["run", "--config", str(conf), "--eps", "0.05"])
    settings = cli.resolve_settings(args)
    assert settings["eps"] == 0.05
    assert settings["seed"] == 3


def test_output_dir_from_config_file(tmp_path):
    conf = tmp_path / "run.ini"
    out = tmp_path / "cfgout"
    conf.write_text(f"[study]\neps = 0.4\n\n[output]\ndir = {out}\n")
    assert run_cli("run", "--model", "linear", "--config", str(conf),
                   "--seed", "1", "--n0", "64", "--n1", "32") == 0
    assert (out / "payoff.csv").exists()


def test_unknown_config_key_is_a_hard_error(tmp_path, capsys):
    conf = tmp_path / "bad.ini"
    conf.write_text("[study]\nepsilon = 0.1\n")
    code = run_cli("run", "--config", str(conf), "--out", str(tmp_path))
    assert code == 2
    assert "epsilon" in capsys.readouterr().err


def test_misplaced_config_key_is_a_hard_error(tmp_path, capsys):
    conf = tmp_path / "bad.ini"
    conf.write_text("[model]\neps = 0.1\n")
    code = run_cli("run", "--config", str(conf), "--out", str(tmp_path))
    assert code == 2
    err = capsys.readouterr().err
    assert "eps" in err and "study" in err


def test_env_var_overrides_output_dir_only(tmp_path, monkeypatch):
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(env_dir))
    assert run_cli("run", "--model", "linear", "--eps", "0.3",
                   "--n0", "64", "--n1", "32", "--seed", "1") == 0
    assert (env_dir / "payoff.csv").exists()
    # an explicit flag still wins over the environment
    flag_dir = tmp_path / "from_flag"
    assert run_cli("run", "--model", "linear", "--eps", "0.3",
                   "--n0", "64", "--n1", "32", "--seed", "1",
                   "--out", str(flag_dir)) == 0
    assert (flag_dir / "payoff.csv").exists()


def test_run_emits_expected_csv_schema(tmp_path):
    out = tmp_path / "out"
    assert run_cli("run", "--model", "linear", "--eps", "0.25", "--seed", "7",
                   "--n0", "256", "--n1", "128", "--out", str(out)) == 0
    payoff = (out / "payoff.csv").read_text().splitlines()
    levels = (out / "levels.csv").read_text().splitlines()
    summary = (out / "summary.csv").read_text().splitlines()
    assert payoff[0] == ",".join(PAYOFF_HEADER)
    assert levels[0] == ",".join(LEVELS_HEADER)
    assert summary[0] == ",".join(SUMMARY_HEADER)
    assert len(summary) == 2
    n_levels = len(levels) - 1
    # payoff rows = (T/dt_L + 1) * payoff_dim with dt_L = 0.25 / 2^L
    n_steps = 4 * 2 ** (n_levels - 1)
    assert len(payoff) - 1 == n_steps + 1


def test_payoff_roundtrip_is_exact(tmp_path):
    out = tmp_path / "out"
    assert run_cli("run", "--model", "linear", "--eps", "0.2", "--seed", "3",
                   "--n0", "128", "--n1", "64", "--out", str(out)) == 0
    import mfmlmc as m
    result = m.run_algorithm(m.make_linear_model(m.LinearModelParams()), 0.2,
                             m.EngineConfig(n0_initial=128, n1_initial=64),
                             seed=3)
    _, values = read_payoff_csv(out / "payoff.csv")
    assert np.array_equal(values, result.final_payoff_series)


def test_csv_reader_is_strict(tmp_path):
    bad = tmp_path / "payoff.csv"
    bad.write_text("time,component_index\n0.0,0\n")
    with pytest.raises(ValueError):
        read_payoff_csv(bad)
    bad.write_text("time,component_index,value\n0.0,0,1.0,9\n")
    with pytest.raises(ValueError):
        read_payoff_csv(bad)


def test_repeat_invocations_are_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    argv = ["run", "--model", "rotator", "--eps", "0.2", "--seed", "5",
            "--n0", "128", "--n1", "64"]
    assert run_cli(*argv, "--out", str(out1)) == 0
    assert run_cli(*argv, "--out", str(out2)) == 0
    for name in ("payoff.csv", "levels.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_reference_then_convergence_workflow(tmp_path):
    cache = tmp_path / "cache"
    out = tmp_path / "out"
    common = ["--model", "rotator", "--cache-dir", str(cache),
              "--ref-dt", str(5 / 64), "--ref-samples", "1500",
              "--ref-seed", "0"]
    # convergence without the cache names the missing step
    code = run_cli("convergence", *common, "--eps-list", "0.4,0.3",
                   "--runs", "2", "--n0", "64", "--n1", "32",
                   "--out", str(out))
    assert code == 1
    assert run_cli("reference", *common) == 0
    assert run_cli("convergence", *common, "--eps-list", "0.4,0.3",
                   "--runs", "2", "--n0", "64", "--n1", "32",
                   "--out", str(out)) == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert len(lines) == 3  # header + one row per eps


def test_variance_scaling_subcommand(tmp_path):
    out = tmp_path / "out"
    assert run_cli("variance-scaling", "--model", "linear",
                   "--runs", "2", "--n0", "128", "--n1", "64",
                   "--max-study-level", "2", "--out", str(out)) == 0
    lines = (out / "variance_scaling.csv").read_text().splitlines()
    assert lines[0] == "level,dt,mean_V,std_V"
    assert len(lines) == 4


def test_complexity_subcommand(tmp_path):
    out = tmp_path / "out"
    assert run_cli("complexity", "--model", "linear",
                   "--eps-list", "0.4,0.25,0.1", "--runs", "2",
                   "--n0", "128", "--n1", "64", "--out", str(out)) == 0
    lines = (out / "complexity.csv").read_text().splitlines()
    assert lines[0].startswith("method,eps,")
    assert len(lines) == 7  # header + 3 mlmc + 3 single-level


def test_every_emitted_csv_parses_strictly(tmp_path):
    from mfmlmc import output
    cache = tmp_path / "cache"
    out = tmp_path / "out"
    assert run_cli("run", "--model", "linear", "--eps", "0.3", "--seed", "2",
                   "--n0", "128", "--n1", "64", "--out", str(out)) == 0
    assert run_cli("reference", "--model", "rotator", "--cache-dir", str(cache),
                   "--ref-dt", str(5 / 32), "--ref-samples", "500") == 0
    assert run_cli("convergence", "--model", "rotator", "--cache-dir", str(cache),
                   "--ref-dt", str(5 / 32), "--ref-samples", "500",
                   "--eps-list", "0.4,0.3", "--runs", "2", "--n0", "64",
                   "--n1", "32", "--out", str(out)) == 0
    assert run_cli("variance-scaling", "--model", "linear", "--runs", "2",
                   "--n0", "64", "--n1", "32", "--max-study-level", "3",
                   "--out", str(out)) == 0
    assert run_cli("complexity", "--model", "linear",
                   "--eps-list", "0.4,0.3,0.2", "--runs", "2", "--n0", "64",
                   "--n1", "32", "--out", str(out)) == 0
    headers = {
        "payoff.csv": output.PAYOFF_HEADER,
        "levels.csv": output.LEVELS_HEADER,
        "summary.csv": output.SUMMARY_HEADER,
        "convergence.csv": output.STUDY_HEADER,
        "variance_scaling.csv": output.VARIANCE_HEADER,
        "complexity.csv": output.COMPLEXITY_HEADER,
    }
    for name, header in headers.items():
        rows = output._read_rows(out / name, header)  # strict: header + widths
        assert rows, name
    ref_dirs = list(cache.iterdir())
    assert len(ref_dirs) == 1
    output._read_rows(ref_dirs[0] / "payoff.csv", output.PAYOFF_HEADER)


def test_nonpositive_engine_knob_is_usage_error(tmp_path, capsys):
    code = run_cli("run", "--model", "linear", "--eps", "0.2", "--n0", "0",
                   "--out", str(tmp_path))
    assert code == 2
    assert "n0" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_config_file_is_usage_error(tmp_path, capsys):
    code = run_cli("run", "--config", str(tmp_path / "nope.ini"),
                   "--out", str(tmp_path))
    assert code == 2
