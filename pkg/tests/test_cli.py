import json

import pytest

from wavecqr import io as wio
from wavecqr.cli import run
from wavecqr.socp import import_problem


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run(["simulate", "--n", "60", "--snr", "5", "--noise", "normal", "--seed", "7",
                "--grid-len", "32", "--out", str(d)]) == 0
    return d


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_simulate_writes_dataset_and_truth(simdir):
    data = wio.read_dataset(simdir)
    assert (data.n, data.m, data.grid_len, data.q) == (60, 12, 32, 2)
    meta = json.loads((simdir / "truth.json").read_text())
    assert meta["true_groups"] == [1, 2, 3, 4] and meta["sigma"] > 0
    prov, *_ = wio.read_csv(simdir / "curves.csv")
    assert prov["seed"] == 7 and prov["config"]["snr"] == 5.0


def test_full_pipeline(tmp_path):
    sim = tmp_path / "sim"
    assert run(["simulate", "--n", "200", "--snr", "5", "--noise", "normal", "--seed", "7", "--out", str(sim)]) == 0
    assert run(["fit", "--data", str(sim), "--out", str(tmp_path / "fit"), "--lambda1", "0.05", "--lambda2", "0.1"]) == 0
    report = tmp_path / "eval.json"
    assert run(["evaluate", "--fit", str(tmp_path / "fit"), "--truth", str(sim), "--out", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["mise"] >= 0 and len(rep["ise"]) == 12 and 0 <= rep["ga"] <= 1


def test_fit_is_byte_identical_and_inputs_untouched(simdir, tmp_path):
    before = snapshot(simdir)
    args = ["--lambda1", "0.02", "--lambda2", "0.05", "--filter", "haar"]
    assert run(["fit", "--data", str(simdir), "--out", str(tmp_path / "a"), *args]) == 0
    assert run(["fit", "--data", str(simdir), "--out", str(tmp_path / "b"), *args]) == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert set(a) == {"coefficients.csv", "beta.csv", "diagnostics.json"}
    assert a == b
    assert snapshot(simdir) == before
    diag = json.loads(a["diagnostics.json"])
    assert diag["taus"] == [0.5] and "kkt_residual" in diag
    prov, *_ = wio.read_csv(tmp_path / "a" / "coefficients.csv")
    assert prov["config"]["lambda2"] == 0.05


def test_config_file_and_flag_precedence(simdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda1": 0.5, "lambda2": 0.5, "filter": "haar", "max-outer": 50}))
    assert run(["fit", "--config", str(cfg), "--data", str(simdir), "--out", str(tmp_path / "o"),
                "--lambda2", "0.7"]) == 0
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert (diag["lambda1"], diag["lambda2"]) == (0.5, 0.7)
    assert diag["provenance"]["config"]["max_outer"] == 50


def test_unknown_config_key(simdir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lamda1": 0.5}))
    assert run(["fit", "--config", str(cfg), "--data", str(simdir), "--out", str(tmp_path / "o")]) == 1
    assert capsys.readouterr().err.startswith("wavecqr-error[usage]: ")


@pytest.mark.parametrize("argv", [[], ["bogus"], ["fit"], ["fit", "--data", "x"], ["tune", "--lambda1", "abc"]])
def test_usage_errors(argv, capsys):
    assert run(argv) == 1
    assert "wavecqr-error[usage]" in capsys.readouterr().err


def test_data_errors(tmp_path, simdir, capsys):
    assert run(["fit", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("wavecqr-error[data]: ")
    broken = tmp_path / "broken"
    broken.mkdir()
    for p in simdir.glob("*.csv"):
        (broken / p.name).write_bytes(p.read_bytes())
    (broken / "response.csv").write_text("sample,y\n1,oops\n")
    assert run(["fit", "--data", str(broken), "--out", str(tmp_path / "o")]) == 2
    assert "response.csv:2" in capsys.readouterr().err


def test_strict_non_convergence(simdir, tmp_path, capsys):
    base = ["fit", "--data", str(simdir), "--out", str(tmp_path / "o"), "--lambda1", "0.01", "--lambda2", "0.01",
            "--max-outer", "1", "--filter", "haar"]
    assert run(base) == 0
    assert "wavecqr-warning" in capsys.readouterr().err
    assert run(base + ["--strict"]) == 3
    assert capsys.readouterr().err.startswith("wavecqr-error[solver]: ")


def test_trace_file(simdir, tmp_path):
    trace = tmp_path / "trace.jsonl"
    assert run(["fit", "--data", str(simdir), "--out", str(tmp_path / "o"), "--lambda1", "0.1", "--lambda2", "0.1",
                "--filter", "haar", "--no-polish", "--trace", str(trace)]) == 0
    records = [json.loads(line) for line in trace.read_text().splitlines()]
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert len(records) == diag["outer_iters"]


def test_tune_writes_path_and_selection(simdir, tmp_path):
    tune_dir = tmp_path / "tuneset"
    assert run(["simulate", "--n", "60", "--seed", "8", "--grid-len", "32", "--out", str(tune_dir)]) == 0
    out = tmp_path / "t"
    assert run(["tune", "--data", str(simdir), "--tune-data", str(tune_dir), "--out", str(out),
                "--criterion", "validation", "--n-lambda", "5", "--min-ratio", "0.01"]) == 0
    _, header, rows, _ = wio.read_csv(out / "path.csv")
    assert len(rows) == 5 and {"lambda", "gic", "tune_loss"} <= set(header)
    sel = json.loads((out / "selection.json").read_text())
    losses = [float(r[header.index("tune_loss")]) for r in rows]
    assert losses[sel["index"]] == min(losses)
    assert (out / "coefficients.csv").exists()
    assert run(["tune", "--data", str(simdir), "--out", str(out), "--criterion", "validation"]) == 1


def test_export_socp(simdir, tmp_path):
    out = tmp_path / "p.socp"
    assert run(["export-socp", "--data", str(simdir), "--out", str(out), "--lambda1", "0.1", "--lambda2", "0.2",
                "--tau", "0.25", "--tau", "0.75"]) == 0
    prob = import_problem(out)
    assert prob.num_vars == 2 + 2 + 2 * 12 * 32 + 12 + 2 * 2 * 60


def test_stability_select(simdir, tmp_path):
    out = tmp_path / "s"
    assert run(["stability-select", "--data", str(simdir), "--out", str(out), "--B", "2", "--n-lambda", "4",
                "--min-ratio", "0.01", "--jobs", "1"]) == 0
    _, header, rows, _ = wio.read_csv(out / "boxplot.csv")
    assert header[:6] == ["predictor", "min", "q1", "median", "q3", "max"] and len(rows) == 12
    sel = json.loads((out / "selection.json").read_text())
    assert all(1 <= l <= 12 for l in sel["selected"])


def test_reproduce_small(tmp_path):
    out = tmp_path / "r"
    assert run(["reproduce", "table1-row", "--n", "40", "--noise", "1", "--snr", "5", "--reps", "2",
                "--method", "qSGL,qL", "--criterion", "gic,validation", "--grid-len", "16", "--n-lambda", "4",
                "--jobs", "1", "--out", str(out)]) == 0
    _, header, rows, _ = wio.read_csv(out / "aggregate.csv")
    assert len(rows) == 4 and "mise_median" in header and "mise_iqr" in header
    _, header, rows, _ = wio.read_csv(out / "reps.csv")
    assert len(rows) == 8


def test_help(capsys):
    assert run(["fit", "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--lambda1", "--tau", "--eps-abs", "--strict", "--config"):
        assert flag in text
