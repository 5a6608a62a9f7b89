import io
import json
from pathlib import Path

import numpy as np
import pytest

from svgdkit.cli import cmd_chaos, cmd_run, cmd_selftest, main, write_atomic
from svgdkit.config import DEFAULTS, ConfigError, load_config, resolve
from svgdkit.kernels import Kernel
from svgdkit.selftest import default_kernels, print_table, run_selftest

SMALL = {
    "n_particles": 30,
    "n_iter": 120,
    "init": {"family": "gaussian", "mean": [-4.0], "sd": 1.0},
    "diagnostics": {"kl": {"points": 400}, "rate_window": [20, None], "kl_window": 20},
}


def write_config(tmp_path, cfg, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


# -- config ----------------------------------------------------------------------


def test_empty_config_resolves_to_defaults():
    cfg = resolve({})
    assert cfg["n_particles"] == 200 and cfg["n_iter"] == 10_000
    assert cfg["target"]["family"] == "mixture1d"
    assert cfg["step"]["gamma"] is None and cfg["step"]["safety"] == 0.5
    assert resolve(cfg) == cfg


@pytest.mark.parametrize(
    "raw, path",
    [
        ({"bogus": 1}, "bogus"),
        ({"step": {"gama": 0.1}}, "step.gama"),
        ({"diagnostics": {"kl": {"grid": 3}}}, "diagnostics.kl.grid"),
        ({"kernel": {"family": "imq", "bandwidth": 1.0}}, "kernel.bandwidth"),
        ({"n_particles": 2.5}, "n_particles"),
        ({"n_particles": True}, "n_particles"),
        ({"step": {"alpha": 1.0}}, "step.alpha"),
        ({"step": {"safety": 1.5}}, "step.safety"),
        ({"kernel": {"bandwidth": -1}}, "kernel.bandwidth"),
        ({"target": {"weights": [0.5, 0.6], "means": [0, 1], "sds": [1, 1]}}, "target.weights"),
        ({"target": {"family": "cauchy"}}, "target.family"),
        ({"init": {"mean": [0.0, 1.0]}}, "init.mean"),
        ({"init": {"family": "file", "path": "/no/such/file.csv"}}, "init.path"),
        ({"chaos": {"sizes": [100], "M_ref": 500}}, "chaos.M_ref"),
        ({"chaos": {"sizes": []}}, "chaos.sizes"),
        ({"diagnostics": {"rate_window": [100]}}, "diagnostics.rate_window"),
        ({"target": {"family": "gaussian", "mean": [0, 0], "cov": [[1, 0], [0, 1]]}, "init": {"mean": [0, 0]}},
         "diagnostics.kl"),
    ],
)
def test_invalid_configs_name_the_field(raw, path):
    with pytest.raises(ConfigError) as err:
        resolve(raw)
    assert err.value.path == path


def test_json_syntax_error_reports_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 1,\n  "n_iter": \n}')
    with pytest.raises(ConfigError, match=r"bad.json:4:1"):
        load_config(p)


def test_init_file_resolved_relative_to_config(tmp_path):
    (tmp_path / "pts.csv").write_text("x0\n0.0\n1.0\n2.5\n")
    p = write_config(tmp_path, {"n_particles": 3, "init": {"family": "file", "path": "pts.csv"}})
    cfg = load_config(p).resolved
    assert Path(cfg["init"]["path"]).is_absolute()


def test_defaults_not_mutated():
    before = json.dumps(DEFAULTS, sort_keys=True)
    resolve({"target": {"means": [0.0, 5.0]}, "diagnostics": {"kl": None}})
    assert json.dumps(DEFAULTS, sort_keys=True) == before


# -- run -------------------------------------------------------------------------


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "out"
    cfg = dict(SMALL, gnuplot=True)
    assert cmd_run(write_config(tmp_path, cfg), out=str(out)) == 0
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "iter,ksd2,avg_ksd2,kl_est,max_dir_norm,time_ms"
    assert len(trace) == 121
    final = np.loadtxt(out / "final_particles.csv", delimiter=",", skiprows=1)
    assert final.shape == (30,)
    report = json.loads((out / "report.json").read_text())
    assert set(report["rate_fit"]) >= {"slope", "intercept", "r2", "window"}
    assert set(report["descent"]) >= {"violations", "worst_margin", "tolerance"}
    assert set(report["plan"]) == {"alpha", "B", "M", "C", "gamma", "c_gamma"}
    assert report["resolved_config"]["output_dir"] == str(out)
    assert report["rate_fit"]["window"] == [20, 120]
    assert (out / "plot.gp").exists()
    assert not list(out.glob(".*.tmp"))


def test_run_is_byte_reproducible_and_round_trips(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    p = write_config(tmp_path, SMALL)
    assert cmd_run(p, out=str(a)) == 0
    assert cmd_run(p, out=str(b)) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    resolved = json.loads((a / "report.json").read_text())["resolved_config"]
    resolved["output_dir"] = str(c)
    assert cmd_run(write_config(tmp_path, resolved, "resolved.json")) == 0
    assert (c / "trace.csv").read_bytes() == (a / "trace.csv").read_bytes()


def test_seed_override_changes_initial_ensemble(tmp_path):
    p = write_config(tmp_path, dict(SMALL, n_iter=3))
    cmd_run(p, out=str(tmp_path / "s0"), seed=0)
    cmd_run(p, out=str(tmp_path / "s1"), seed=1)
    assert (tmp_path / "s0/trace.csv").read_bytes() != (tmp_path / "s1/trace.csv").read_bytes()


def test_run_zero_iterations(tmp_path):
    out = tmp_path / "o"
    assert cmd_run(write_config(tmp_path, dict(SMALL, n_iter=0)), out=str(out)) == 0
    assert (out / "trace.csv").read_text() == "iter,ksd2,avg_ksd2,kl_est,max_dir_norm,time_ms\n"
    assert json.loads((out / "report.json").read_text())["rate_fit"]["slope"] is None


def test_run_from_points_file(tmp_path):
    pts = np.linspace(-3, 3, 30)
    (tmp_path / "init.csv").write_text("x0\n" + "\n".join(repr(float(v)) for v in pts) + "\n")
    cfg = dict(SMALL, n_iter=5, init={"family": "file", "path": "init.csv"})
    assert cmd_run(write_config(tmp_path, cfg), out=str(tmp_path / "o")) == 0
    cfg["n_particles"] = 31
    assert cmd_run(write_config(tmp_path, cfg), out=str(tmp_path / "o2")) == 2


def test_run_fixed_gamma_and_imq(tmp_path):
    cfg = dict(SMALL, n_iter=10, kernel={"family": "imq", "offset": 1.0, "exponent": -0.5},
               step={"gamma": 0.05})
    out = tmp_path / "o"
    assert cmd_run(write_config(tmp_path, cfg), out=str(out)) == 0
    assert json.loads((out / "report.json").read_text())["plan"]["gamma"] == 0.05


def test_run_exit_codes(tmp_path, capsys):
    assert cmd_run(tmp_path / "missing.json") == 2
    assert cmd_run(write_config(tmp_path, {"nope": 1})) == 2
    assert "nope" in capsys.readouterr().err
    diverging = {
        "n_particles": 5,
        "n_iter": 500,
        "target": {"family": "gaussian", "mean": [0.0], "cov": [[1.0]]},
        "init": {"mean": [0.0], "sd": 1.0},
        "kernel": {"bandwidth": 1.0},
        "step": {"gamma": 1000.0},
        "diagnostics": {"kl": None},
    }
    assert cmd_run(write_config(tmp_path, diverging), out=str(tmp_path / "d")) == 3
    assert "iteration" in capsys.readouterr().err


def test_main_dispatch(tmp_path):
    p = write_config(tmp_path, dict(SMALL, n_iter=2))
    assert main(["run", str(p), "--out", str(tmp_path / "m"), "--seed", "3"]) == 0
    cfg = json.loads((tmp_path / "m/report.json").read_text())["resolved_config"]
    assert cfg["seed"] == 3
    assert main(["run", str(p), "--seed", "-1"]) == 2
    with pytest.raises(SystemExit):
        main([])


# -- chaos -----------------------------------------------------------------------

CHAOS = {
    "diagnostics": {"kl": None},
    "init": {"mean": [0.0], "sd": 1.0},
    "chaos": {"sizes": [10, 20], "M_ref": 200, "T": 0.5, "gamma": 0.05, "repetitions": 3, "record_every": 5},
}


def test_chaos_writes_outputs(tmp_path):
    out = tmp_path / "c"
    assert cmd_chaos(write_config(tmp_path, CHAOS), out=str(out)) == 0
    lines = (out / "chaos.csv").read_text().splitlines()
    assert lines[0] == "n,N,w2sq_mean,w2sq_stderr,bound"
    assert len(lines) == 1 + 3 * 2
    report = json.loads((out / "chaos_report.json").read_text())
    assert {"decay_fit", "bound_comparison", "checks", "constants", "resolved_config"} <= set(report)
    assert report["checks"]["exact_coupling"] is True


def test_chaos_proxy_check(tmp_path):
    cfg = json.loads(json.dumps(CHAOS))
    cfg["chaos"]["proxy_check"] = True
    out = tmp_path / "c"
    assert cmd_chaos(write_config(tmp_path, cfg), out=str(out)) == 0
    proxy = json.loads((out / "chaos_report.json").read_text())["proxy_check"]
    assert proxy["M_ref"] == 400 and isinstance(proxy["within_stderr"], bool)


def test_chaos_full_reference_rows_are_zero(tmp_path):
    cfg = {
        "diagnostics": {"kl": None},
        "chaos": {"sizes": [50], "M_ref": 50, "T": 1.0, "gamma": 0.1, "repetitions": 1,
                  "nested_reference": True, "min_ref_ratio": 1.0},
    }
    out = tmp_path / "z"
    assert cmd_chaos(write_config(tmp_path, cfg), out=str(out)) == 0
    rows = np.loadtxt(out / "chaos.csv", delimiter=",", skiprows=1, ndmin=2)
    assert np.all(rows[:, 2] == 0.0) and np.all(rows[:, 3] == 0.0)


def test_chaos_requires_block(tmp_path):
    assert cmd_chaos(write_config(tmp_path, {"diagnostics": {"kl": None}})) == 2
    assert cmd_chaos(tmp_path / "missing.json") == 2


# -- selftest --------------------------------------------------------------------


class CorruptedKernel(Kernel):
    """grad1 off by 1%: the derivative oracles must catch it."""

    def grad1(self, x, y):
        return 1.01 * super().grad1(x, y)


def test_selftest_passes():
    assert cmd_selftest(stream=io.StringIO()) == 0


def test_selftest_catches_corrupted_derivative():
    kernels = default_kernels() + [CorruptedKernel("rbf", 2, bandwidth=0.8)]
    buf = io.StringIO()
    assert cmd_selftest(kernels, stream=buf) == 1
    assert "FAIL" in buf.getvalue()


def test_selftest_output_is_deterministic():
    a, b = io.StringIO(), io.StringIO()
    print_table(run_selftest(), a)
    print_table(run_selftest(), b)
    assert a.getvalue() == b.getvalue()


def test_write_atomic_replaces(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    write_atomic(p, "one")
    write_atomic(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]
