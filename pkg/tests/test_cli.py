import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import coexist_params
from scyfi.cli import main
from scyfi.core import params_to_dict, save_params
from scyfi.search import CycleLibrary
from scyfi.sweep import read_events_jsonl, read_rows_csv
from scyfi.training import read_trace


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def linear_params(tmp_path):
    return write_json(tmp_path / "lin.json", {"M": 2, "A": [0.5, -0.3], "W": [[0, 0], [0, 0]], "h": [1, 1]})


@pytest.fixture
def coexist_file(tmp_path):
    return write_json(tmp_path / "coexist.json", params_to_dict(coexist_params().to_plrnn()))


def tent_spec(tmp_path, target="W[0,0]", lo=-2.4, hi=0.7):
    return write_json(tmp_path / "sweep.json", {
        "params": {"M": 1, "A": [[0.5]], "W": [[0.0]], "h": [1.0], "generalized": True},
        "axes": [{"target": target, "lo": lo, "hi": hi, "n_steps": 40}],
        "k_max": 2, "seed": 3})


def test_find_linear_summary(linear_params, capsys, tmp_path):
    assert main(["find", "--params", linear_params, "--kmax", "3", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "1 stable fixed point, 0 cycles" in out
    lib = CycleLibrary.from_jsonl(tmp_path / "o" / "library.jsonl")
    assert len(lib) == 1


def test_find_reports_coexisting_cycles(coexist_file, capsys):
    assert main(["find", "--params", coexist_file, "--kmax", "3"]) == 0
    out = capsys.readouterr().out
    assert "stable 2-cycle" in out and "stable 3-cycle" in out


def test_malformed_json_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["find", "--params", str(bad)]) == 2
    wrong = write_json(tmp_path / "w.json", {"M": 2, "A": [0.5, 0.1], "W": [[0, 1]], "h": [0, 0]})
    assert main(["find", "--params", wrong]) == 2
    assert "W" in capsys.readouterr().err


def test_missing_file_and_bad_flag(tmp_path):
    assert main(["find", "--params", str(tmp_path / "nope.json")]) == 2
    assert main(["find", "--bogus"]) == 2


def test_budget_guard_exit_code(coexist_file):
    assert main(["find", "--params", coexist_file, "--kmax", "3", "--max-nout", "5"]) == 3


def test_find_is_deterministic(coexist_file, tmp_path):
    outs = []
    for d in ("a", "b"):
        main(["find", "--params", coexist_file, "--seed", "7", "--out", str(tmp_path / d)])
        outs.append((tmp_path / d / "library.jsonl").read_bytes())
    assert outs[0] == outs[1]


def test_sweep_outputs(tmp_path, capsys):
    assert main(["sweep", "--spec", tent_spec(tmp_path), "--out", str(tmp_path / "s")]) == 0
    events = read_events_jsonl(tmp_path / "s" / "events.jsonl")
    assert sorted(e.kind for e in events) == ["BCB", "DFB", "DTB"]
    rows = read_rows_csv(tmp_path / "s" / "grid.csv")
    assert len(rows) == 40 and "n_stable" in rows[0]
    first = (tmp_path / "s" / "events.jsonl").read_bytes()
    assert main(["sweep", "--spec", tent_spec(tmp_path), "--out", str(tmp_path / "s"), "--threads", "2"]) == 0
    assert (tmp_path / "s" / "events.jsonl").read_bytes() == first


def test_sweep_no_effect_parameter(tmp_path):
    spec = write_json(tmp_path / "s.json", {
        "params": {"M": 2, "A": [0.5, 0.3], "W": [[0, 0], [0, 0]], "h": [1.0, 0.5]},
        "axes": [{"target": "h[1]", "lo": -1, "hi": 1, "n_steps": 10}]})
    assert main(["sweep", "--spec", spec, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "events.jsonl").read_text() == ""


def test_sweep_bad_spec(tmp_path):
    spec = write_json(tmp_path / "s.json", {"params": {"M": 1, "A": [0.5], "W": [[0]], "h": [1]},
                                            "axes": [{"target": "Q[0]", "lo": 0, "hi": 1, "n_steps": 3}]})
    assert main(["sweep", "--spec", spec, "--out", str(tmp_path)]) == 2


def test_oracle_check_params(coexist_file, capsys):
    assert main(["oracle-check", "--params", coexist_file, "--kmax", "3"]) == 0
    assert capsys.readouterr().out.count("match") == 1


def test_oracle_check_2d_spec(tmp_path, capsys):
    spec = write_json(tmp_path / "s.json", {"b_l": -0.4, "b_r": 0.5, "c": 0.8, "d": 0.2, "h1": 1.0,
                                            "h2": 0.0, "a_l_range": [-3, 1], "a_r_range": [-3, 1], "n": 6})
    assert main(["oracle-check", "--spec", spec, "--out", str(tmp_path / "o")]) == 0
    assert "0 disagreements" in capsys.readouterr().out
    assert (tmp_path / "o" / "oracle_scan.csv").exists()


def test_scaling_modes(tmp_path):
    assert main(["scaling", "--mode", "dimension", "--dims", "2,4", "--seeds", "3",
                 "--out", str(tmp_path)]) == 0
    rows = read_rows_csv(tmp_path / "scaling_dimension.csv")
    assert [int(r["M"]) for r in rows] == [2, 4]
    assert main(["scaling", "--mode", "cycle-order", "--kmax", "2", "--systems", "1", "--seeds", "2",
                 "--out", str(tmp_path)]) == 0
    assert main(["scaling", "--mode", "embedding", "--dims", "3", "--systems", "1", "--seeds", "2",
                 "--out", str(tmp_path)]) == 0
    assert main(["scaling", "--mode", "dimension", "--dims", "2,x"]) == 2


def test_train_and_analyze(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--demo", "--epochs", "30", "--out", str(run)]) == 0
    tr = read_trace(run)
    assert len(tr.losses) == 30 and len(tr.snapshots) == 31
    assert main(["analyze-trace", "--trace", str(run), "--kmax", "2", "--direction", "1",
                 "--out", str(tmp_path / "an")]) == 0
    rows = read_rows_csv(tmp_path / "an" / "diagram.csv")
    assert rows and {"value", "projection", "stable"} <= set(rows[0])
    read_events_jsonl(tmp_path / "an" / "events.jsonl")


def test_train_from_files(tmp_path):
    p = tmp_path / "p.json"
    save_params(coexist_params().to_plrnn(), p)
    x = np.random.default_rng(0).normal(size=(12, 2))
    np.savetxt(tmp_path / "x.csv", x, delimiter=",")
    assert main(["train", "--params", str(p), "--targets", str(tmp_path / "x.csv"), "--epochs", "3",
                 "--trainable", "A[0,1];h[1]", "--alpha", "0.2", "--out", str(tmp_path / "r")]) == 0
    tr = read_trace(tmp_path / "r")
    assert np.array_equal(tr.snapshots[-1].W, tr.snapshots[0].W)
    np.savetxt(tmp_path / "y.csv", x[:, :1], delimiter=",")
    assert main(["train", "--params", str(p), "--targets", str(tmp_path / "y.csv")]) == 2


def test_alpha_bound(tmp_path, capsys):
    p = write_json(tmp_path / "p.json", {"M": 2, "A": [1.2, 0.1], "W": [[0, 0.8], [0, 0]], "h": [0, 0]})
    assert main(["alpha-bound", "--params", p]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["alpha_star"] == pytest.approx(0.5)


def test_module_entry_point(linear_params):
    r = subprocess.run([sys.executable, "-m", "scyfi", "find", "--params", linear_params],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "1 stable fixed point, 0 cycles" in r.stdout
