import csv
import json
import math

import numpy as np
import pytest

from markovcp import cli
from markovcp.errors import BadHeader, ParseError, UnsupportedFormat
from markovcp.harness import ExperimentConfig, run_coverage_experiment


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def small_report():
    return run_coverage_experiment(ExperimentConfig(N_train=100, n_cal=100, trials=5))


# -- series files ------------------------------------------------------------------


def test_load_series_two_rows(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("t,value\n0,1.0\n1,1.1")
    s = cli.load_series_csv(f)
    assert len(s) == 2
    assert s.timestamps == ["0", "1"]
    np.testing.assert_array_equal(s.values, [1.0, 1.1])


def test_load_series_bad_header(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("time,price\n0,1.0\n")
    with pytest.raises(BadHeader):
        cli.load_series_csv(f)


def test_load_series_parse_error_line(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("t,value\n0,1\n1,2\n2,3\n3,abc\n4,5\n")
    with pytest.raises(ParseError) as exc:
        cli.load_series_csv(f)
    assert exc.value.line == 5
    assert "line 5" in str(exc.value)


def test_load_series_rejects_non_finite(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("t,value\n0,nan\n")
    with pytest.raises(ParseError):
        cli.load_series_csv(f)


def test_load_series_missing_file(tmp_path):
    with pytest.raises(OSError):
        cli.load_series_csv(tmp_path / "nope.csv")


def test_series_round_trip(tmp_path):
    values = np.random.default_rng(0).normal(size=50)
    f = tmp_path / "s.csv"
    cli.write_series_csv(f, values)
    np.testing.assert_array_equal(cli.load_series_csv(f).values, values)


# -- reports -------------------------------------------------------------------------


def test_report_json_round_trip(tmp_path, small_report):
    f = tmp_path / "r.json"
    cli.write_report(small_report, f, "json")
    assert cli.read_report_json(f) == small_report
    data = json.loads(f.read_text())
    for summary in data.values():
        assert list(summary) == [
            "coverage_mean",
            "coverage_se",
            "mean_halfwidth",
            "relative_length_error",
            "k_used",
            "trials",
            "infinite_intervals",
        ]


def test_report_csv_header(tmp_path, small_report):
    f = tmp_path / "r.csv"
    cli.write_report(small_report, f, "csv")
    lines = f.read_text().splitlines()
    assert lines[0] == "method,coverage_mean,coverage_se,mean_halfwidth,relative_length_error,k_used,trials,infinite_intervals"
    assert [r[0] for r in csv.reader(lines[1:])] == list(small_report.methods)


def test_report_csv_values(tmp_path, small_report):
    f = tmp_path / "r.csv"
    cli.write_report(small_report, f, "csv")
    rows = list(csv.DictReader(f.open()))
    for row in rows:
        s = small_report[row["method"]]
        assert float(row["coverage_mean"]) == s.coverage_mean
        assert int(row["trials"]) == s.trials


def test_report_unsupported_format(tmp_path, small_report):
    with pytest.raises(UnsupportedFormat):
        cli.write_report(small_report, tmp_path / "r.xml", "xml")


# -- plot data -------------------------------------------------------------------------


def test_plot_rows_count():
    sweep = {x: {"split": {"coverage_mean": 0.9}} for x in (3, 1, 2)}
    text = cli.emit_plot_data(sweep, metrics=("coverage_mean",))
    lines = text.splitlines()
    assert lines[0] == "x,method,metric,value"
    assert len(lines) == 4


def test_plot_rows_sorted():
    sweep = {
        2: {"ksplit": {"b": 1, "a": 2}, "split": {"a": 3}},
        1: {"split": {"a": 4}, "ksplit": {"a": 5}},
    }
    rows = cli.plot_rows(sweep, metrics=("a", "b"))
    keys = [(r[0], r[1], r[2]) for r in rows]
    assert keys == sorted(keys)
    assert len(rows) == 5


def test_plot_rows_empty():
    with pytest.raises(ValueError):
        cli.plot_rows({})


def test_plot_data_from_sweep_reports(tmp_path):
    from markovcp.harness import sweep_calibration_sizes

    cfg = ExperimentConfig(N_train=100, trials=3)
    sweep = sweep_calibration_sizes(cfg, [250, 500, 1000, 2000])
    f = tmp_path / "p.csv"
    cli.emit_plot_data(sweep, f)
    rows = list(csv.DictReader(f.open()))
    assert len(rows) == 4 * 3 * 4
    assert sorted({int(r["x"]) for r in rows}) == [250, 500, 1000, 2000]


# -- subcommands ---------------------------------------------------------------------------

HELP_FLAGS = {
    ("simulate",): ["--chain", "--w", "--theta", "--omega", "--len", "--seed", "--out"],
    ("experiment",): ["--config", "--out", "--format"],
    ("rolling",): ["--series", "--train", "--cal", "--alpha", "--method", "--k", "--out"],
    ("estimate-gap",): ["--traj", "--states"],
    ("estimate-rho",): ["--series", "--max-lag"],
    ("kstar",): ["--n", "--rho"],
    ("bounds", "gamma-restart"): ["--n", "--tmix", "--u"],
    ("bounds", "gamma"): ["--n", "--r", "--u", "--delta-N", "--beta-r"],
    ("bounds", "gamma-opt"): ["--n", "--r", "--tmix"],
    ("bounds", "kstar"): ["--n", "--rho"],
    ("bounds", "ksplit-gap"): ["--n", "--K", "--beta-K"],
    ("bounds", "quantile-dev"): ["--n", "--kappa", "--cN", "--dN", "--delta", "--mode"],
    ("bounds", "iid"): ["--m", "--alpha"],
}


@pytest.mark.parametrize("cmd", sorted(HELP_FLAGS))
def test_help_lists_flags(cmd, capsys):
    code, out, _ = run(list(cmd) + ["--help"], capsys)
    assert code == 0
    for flag in HELP_FLAGS[cmd]:
        assert flag in out


def test_bounds_help_lists_kinds(capsys):
    code, out, _ = run(["bounds", "--help"], capsys)
    for kind in ("gamma-restart", "gamma", "gamma-opt", "kstar", "ksplit-gap", "quantile-dev", "iid"):
        assert kind in out


def test_kstar_command(capsys):
    code, out, _ = run(["kstar", "--n", "1000", "--rho", "0.9"], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["k_star"] == 70 and math.isclose(data["k_star_real"], 69.51, abs_tol=0.01)


def test_bounds_commands(capsys):
    code, out, _ = run(["bounds", "gamma-restart", "--n", "1000", "--tmix", "5", "--u", "0.1"], capsys)
    assert code == 0 and json.loads(out)["gamma"] == pytest.approx(0.1 + math.exp(-20 / 45))
    code, out, _ = run(["bounds", "ksplit-gap", "--n", "1000", "--K", "10", "--beta-K", "1e-4"], capsys)
    assert json.loads(out) == {"low": pytest.approx(0.02), "high": pytest.approx(0.03)}
    code, out, _ = run(["bounds", "iid", "--m", "9"], capsys)
    assert json.loads(out) == {"low": pytest.approx(0.9), "high": pytest.approx(1.0)}
    code, out, _ = run(["bounds", "gamma-opt", "--n", "1000", "--r", "3", "--tmix", "5"], capsys)
    assert code == 0 and json.loads(out)["arg_r"] == 3
    code, out, _ = run(["bounds", "quantile-dev", "--n", "10000", "--tmix", "5", "--kappa", "1"], capsys)
    assert json.loads(out)["u_star"] == pytest.approx(math.sqrt(45 * math.log(40) / 20000))


def test_exit_codes(capsys, tmp_path):
    assert run(["bounds", "gamma-restart", "--n", "100", "--u", "0"], capsys)[0] == 1
    assert run(["kstar", "--n", "100", "--rho", "1.5"], capsys)[0] == 1
    assert run(["nonsense"], capsys)[0] == 1
    assert run(["rolling", "--series", str(tmp_path / "x.csv"), "--train", "5", "--cal", "5"], capsys)[0] == 1
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"trails": 3}))
    code, _, err = run(["experiment", "--config", str(bad)], capsys)
    assert code == 1 and "trails" in err


def test_internal_error_exit_code(capsys, monkeypatch):
    def boom(args):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "cmd_kstar", boom)
    assert run(["bounds", "kstar", "--n", "10", "--rho", "0.5"], capsys)[0] == 2


def test_simulate_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for f in (a, b):
        assert run(["simulate", "--chain", "ar1", "--len", "200", "--seed", "5", "--out", str(f)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(cli.load_series_csv(a)) == 200
    _, out, _ = run(["simulate", "--chain", "lazy-walk", "--w", "5", "--len", "10", "--seed", "1"], capsys)
    assert out.splitlines()[0] == "t,value" and len(out.splitlines()) == 11


def test_experiment_byte_identical(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chain": {"kind": "ar1", "theta": 0.8}, "N_train": 100, "n_cal": 100, "trials": 6}))
    outs = []
    for i, fmt in enumerate(["json", "json", "csv"]):
        f = tmp_path / f"r{i}.{fmt}"
        assert run(["experiment", "--config", str(cfg), "--out", str(f), "--format", fmt], capsys)[0] == 0
        outs.append(f.read_bytes())
    assert outs[0] == outs[1]
    assert outs[2].startswith(b"method,coverage_mean")


def test_experiment_sweep_plot_data(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N_train": 100, "trials": 3, "methods": ["split"]}))
    plot = tmp_path / "p.csv"
    code, out, _ = run(
        ["experiment", "--config", str(cfg), "--sweep-n", "50,100", "--plot-data", str(plot)], capsys
    )
    assert code == 0 and "split" in json.loads(out)
    assert plot.read_text().splitlines()[0] == "x,method,metric,value"


def test_estimate_commands(tmp_path, capsys):
    traj = tmp_path / "traj.csv"
    assert run(["simulate", "--chain", "lazy-walk", "--w", "6", "--len", "20000", "--seed", "2", "--out", str(traj)], capsys)[0] == 0
    code, out, _ = run(["estimate-gap", "--traj", str(traj), "--states", "6", "--n", "1000"], capsys)
    data = json.loads(out)
    assert code == 0 and abs(data["rho_hat"] - (1 + math.cos(math.pi / 3)) / 2) < 0.05
    assert data["K_hat"] >= 1

    ar = tmp_path / "ar.csv"
    run(["simulate", "--chain", "ar1", "--theta", "0.8", "--len", "50000", "--seed", "3", "--out", str(ar)], capsys)
    code, out, _ = run(["estimate-rho", "--series", str(ar), "--max-lag", "20"], capsys)
    assert code == 0 and 0.75 <= json.loads(out)["rho_hat"] <= 0.85


def test_rolling_command(tmp_path, capsys):
    r = 0.01 * np.random.default_rng(4).normal(size=1500)
    prices = 100 * np.cumprod(np.concatenate([[1.0], 1 + r]))
    series = tmp_path / "p.csv"
    cli.write_series_csv(series, prices)
    out = tmp_path / "r.csv"
    plot = tmp_path / "plot.csv"
    args = [
        "rolling", "--series", str(series), "--train", "200", "--cal", "200",
        "--k", "fixed:2", "--method", "split", "--method", "ksplit",
        "--bucket", "300", "--out", str(out), "--format", "csv", "--plot-data", str(plot),
    ]
    assert run(args, capsys)[0] == 0
    first = out.read_bytes()
    assert run(args, capsys)[0] == 0
    assert out.read_bytes() == first
    rows = list(csv.DictReader(out.open()))
    assert [r["method"] for r in rows] == ["split", "ksplit"]
    assert rows[0]["relative_length_error"] == ""
    assert len(plot.read_text().splitlines()) == 1 + 2 * math.ceil(1099 / 300)
