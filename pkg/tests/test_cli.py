import json
import os
import subprocess
import sys

import numpy as np
import pytest

from polcqed import cli, fit, preset, solver, sweeps
from polcqed.config import load_config

SMALL_AXES = """
[[axes]]
name = "qd_common_offset"
start = -2.0
stop = 0.0
n_points = 3

[[axes]]
name = "theta_out"
start = -90.0
stop = 0.0
n_points = 4
"""


def _config(tmp_path, scenario="g2_map", extra="", preset_name="qd_a", axes=SMALL_AXES):
    p = preset(preset_name)
    lines = [f'scenario = "{scenario}"', f'output_dir = "{tmp_path / "out"}"', "n_fock = 3", extra, "[params]"]
    lines += [f"{k} = {json.dumps(v)}" for k, v in p.to_config().items()]
    path = tmp_path / "run.toml"
    path.write_text("\n".join(lines) + "\n" + axes)
    return path


def _header_toml(path):
    return "\n".join(line[2:].rstrip("\n") for line in path.read_text().splitlines(True)
                     if line.startswith("# "))


def _table(path):
    rows = [line for line in path.read_text().splitlines() if not line.startswith("#")]
    return rows[0].split(","), np.array([[float(x) for x in r.split(",")] for r in rows[1:]])


def test_params_report(capsys):
    assert cli.main(["params-report", "--preset", "qd_a"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "C = 0.42"
    assert "hilbert_dim = 64" in out
    assert cli.main(["params-report", "--preset", "qd_b"]) == 0
    assert capsys.readouterr().out.startswith("C = 1.5")


def test_all_subcommands_exist(capsys):
    parser = cli.build_parser()
    for name in cli.SUBCOMMANDS:
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([name, "--help"])
        assert exc.value.code == 0
    capsys.readouterr()


def test_unknown_subcommand_exits_with_usage(capsys):
    assert cli.main(["frobnicate"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_config_and_preset_are_exclusive(capsys):
    assert cli.main(["g2-map", "--preset", "qd_a", "--config", "x.toml"]) == 2
    capsys.readouterr()


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('scenario = "g2_map"\n')
    assert cli.main(["g2-map", "--config", str(bad)]) == 2
    assert "[params]" in capsys.readouterr().err


def test_solver_error_exit_code(tmp_path, monkeypatch, capsys):
    def boom(spec):
        raise solver.SolverSingular("singular test matrix")
    monkeypatch.setattr(sweeps, "run_sweep", boom)
    assert cli.main(["g2-map", "--config", str(_config(tmp_path))]) == 3
    assert "SolverSingular" in capsys.readouterr().err


def test_io_error_exit_code(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["g2-map", "--config", str(_config(tmp_path)), "--out", str(blocker / "sub")]) == 4
    capsys.readouterr()


def test_g2_map_header_reproduces_run(tmp_path, capsys):
    assert cli.main(["g2-map", "--config", str(_config(tmp_path))]) == 0
    out = tmp_path / "out" / "g2_map.csv"
    cols, data = _table(out)
    assert cols == ["qd_offset_ghz", "theta_out_deg", "g2_zero"]
    assert data.shape == (12, 3)
    assert "max g2(0)" in capsys.readouterr().out
    # the comment header is itself a config that reproduces the table
    rerun = tmp_path / "rerun.toml"
    rerun.write_text(_header_toml(out))
    cfg = load_config(rerun)
    assert cfg.n_fock == 3 and len(cfg.axes) == 2
    assert cli.main(["g2-map", "--config", str(rerun), "--out", str(tmp_path / "again")]) == 0
    _, data2 = _table(tmp_path / "again" / "g2_map.csv")
    assert np.array_equal(data, data2)
    capsys.readouterr()


def test_json_format(tmp_path, capsys):
    assert cli.main(["transmission-map", "--config", str(_config(tmp_path, axes="")), "--format", "json",
                     "--n-fock", "2"]) == 0
    doc = json.loads((tmp_path / "out" / "transmission_map.json").read_text())
    assert doc["columns"] == ["laser_detuning_ghz", "theta_out_deg", "T_raw", "T_colnorm"]
    assert 'format = "json"' in doc["config"]
    t = np.array(doc["rows"], dtype=float)
    assert np.all(t[:, 2] >= 0) and np.nanmax(t[:, 3]) == pytest.approx(1.0)
    capsys.readouterr()


def test_g2_trace_with_two_jitters(tmp_path, capsys):
    args = ["g2-trace", "--config", str(_config(tmp_path, "g2_trace", preset_name="qd_b", axes="")),
            "--theta-out", "-45", "--qd-offset", "-1.0", "--jitter", "50", "500"]
    assert cli.main(args) == 0
    cols, data = _table(tmp_path / "out" / "g2_trace.csv")
    assert cols == ["tau_ns", "g2_raw", "g2_conv_50ps", "g2_conv_500ps"]
    # a wider detector response can only wash out structure
    raw, c50, c500 = np.ptp(data[:, 1:], axis=0)
    assert raw > c50 > c500
    assert data[0, 1:] == pytest.approx(data[-1, 1:], rel=1e-6)
    assert "500 ps" in capsys.readouterr().out


def test_g2_trace_defaults_to_bunching_point(tmp_path, capsys):
    assert cli.main(["g2-trace", "--config", str(_config(tmp_path, "g2_trace"))]) == 0
    out = capsys.readouterr().out
    assert out.startswith("operating point: max g2(0)")
    hdr = _header_toml(tmp_path / "out" / "g2_trace.csv")
    assert "theta_out_deg = " in hdr


def test_photon_number_columns(tmp_path, capsys):
    axes = '[[axes]]\nname = "theta_out"\nstart = -90.0\nstop = 90.0\nn_points = 5\n'
    assert cli.main(["photon-number", "--config", str(_config(tmp_path, "pn_vs_theta", axes=axes))]) == 0
    cols, data = _table(tmp_path / "out" / "photon_number.csv")
    assert cols == ["theta_out_deg", "p0", "p1", "p2", "p3", "p4"]
    assert np.allclose(data[:, 1:].sum(axis=1), 1.0, atol=1e-8)
    capsys.readouterr()


def test_ablation_defaults_to_removing_y(tmp_path, capsys):
    assert cli.main(["ablation", "--config", str(_config(tmp_path))]) == 0
    hdr = _header_toml(tmp_path / "out" / "ablation.csv")
    assert "qd_y_enabled = false" in hdr and "qd_x_enabled = true" in hdr
    capsys.readouterr()


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    args = cli.build_parser().parse_args(["g2-map"])
    assert args.threads == 3
    monkeypatch.setenv(cli.THREADS_ENV, "junk")
    assert cli.build_parser().parse_args(["g2-map"]).threads == 1


def test_thread_count_does_not_change_results(tmp_path, capsys):
    cfg = str(_config(tmp_path))
    assert cli.main(["g2-map", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert cli.main(["g2-map", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "4"]) == 0
    assert (tmp_path / "a" / "g2_map.csv").read_text() == (tmp_path / "b" / "g2_map.csv").read_text()
    capsys.readouterr()


def test_fit_subcommand(tmp_path, capsys):
    truth = preset("qd_a").replace(n_fock=3)
    data = fit.synthetic_dataset(truth, detunings=np.linspace(-6, 6, 21))
    data.to_csv(tmp_path / "traces.csv")
    cfg = _config(tmp_path, "fit", axes="")
    cfg.write_text(cfg.read_text().replace("g_x_per_ns = 15.0", "g_x_per_ns = 16.0")
                   .replace("g_y_per_ns = 15.0", "g_y_per_ns = 16.0"))
    rc = cli.main(["fit", "--config", str(cfg), "--data", str(tmp_path / "traces.csv"),
                   "--free", "g", "--seed", "1"])
    assert rc == 0
    res = json.loads((tmp_path / "out" / "fit_result.json").read_text())
    assert res["params"]["g_x_per_ns"] == pytest.approx(15.0, rel=1e-4)
    assert res["free"] == ["g"]
    cols, table = _table(tmp_path / "out" / "fit_traces.csv")
    assert cols == ["theta_out_deg", "detuning_ghz", "transmission", "model"]
    assert np.allclose(table[:, 2], table[:, 3], atol=1e-5)
    capsys.readouterr()


def test_fit_without_data_is_a_config_error(tmp_path, capsys):
    assert cli.main(["fit", "--config", str(_config(tmp_path, "fit", axes=""))]) == 2
    assert "needs a dataset" in capsys.readouterr().err


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "polcqed.cli", "params-report", "--preset", "qd_a"],
                       capture_output=True, text=True, env={**os.environ})
    assert r.returncode == 0 and r.stdout.startswith("C = 0.42")
