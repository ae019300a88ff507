import json

import numpy as np
import pytest

from conftest import small_panel
from spillover.cli import main
from spillover.errors import IngestionError
from spillover.files import load_panel_data, read_panel_csv, read_weights_csv, write_panel_csv, write_weights_csv


@pytest.fixture
def panel_files(tmp_path):
    tr = small_panel(n=6, T=5, seed=2)
    data = tr.panel
    write_panel_csv(tmp_path / "panel.csv", data, X_initial=tr.X_star_initial)
    paths = []
    for q, W in enumerate(data.weights.matrices):
        paths.append(tmp_path / f"W{q + 1}.csv")
        write_weights_csv(paths[-1], W)
    return tmp_path, data, paths


def test_panel_round_trip(panel_files):
    root, data, wpaths = panel_files
    back, units = load_panel_data(root / "panel.csv", wpaths, data.layout)
    assert units == [str(i) for i in range(1, 7)]
    np.testing.assert_array_equal(back.Y, data.Y)
    np.testing.assert_array_equal(back.Y_lag, data.Y_lag)
    np.testing.assert_array_equal(back.X_star, data.X_star)
    for a, b in zip(back.weights.matrices, data.weights.matrices):
        np.testing.assert_array_equal(a.values, b.values)


def test_rows_may_come_in_any_order(panel_files):
    root, data, wpaths = panel_files
    lines = (root / "panel.csv").read_text().splitlines()
    (root / "shuffled.csv").write_text("\n".join([lines[0]] + lines[1:][::-1]) + "\n")
    back, _ = load_panel_data(root / "shuffled.csv", wpaths, data.layout)
    assert set(back.Y.ravel()) == set(data.Y.ravel())


def test_corrupt_row_reports_line(panel_files):
    root, _, _ = panel_files
    lines = (root / "panel.csv").read_text().splitlines()
    parts = lines[4].split(",")
    parts[2] = "abc"
    lines[4] = ",".join(parts)
    (root / "bad.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestionError, match=r"bad.csv: line 5"):
        read_panel_csv(root / "bad.csv")


def test_duplicate_and_missing_cells(panel_files):
    root, _, _ = panel_files
    lines = (root / "panel.csv").read_text().splitlines()
    (root / "dup.csv").write_text("\n".join(lines + [lines[3]]) + "\n")
    with pytest.raises(IngestionError, match="duplicate"):
        read_panel_csv(root / "dup.csv")
    (root / "gap.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(IngestionError, match="unbalanced"):
        read_panel_csv(root / "gap.csv")


def test_dimension_mismatch_names_file(panel_files, tmp_path):
    root, data, wpaths = panel_files
    small = tmp_path / "small.csv"
    write_weights_csv(small, np.array([[0, 1.0], [1.0, 0]]))
    with pytest.raises(IngestionError, match="small.csv"):
        load_panel_data(root / "panel.csv", [wpaths[0], small], data.layout)


def test_weights_file_checks(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("0,1\n1\n")
    with pytest.raises(IngestionError, match="square"):
        read_weights_csv(p)
    p.write_text("1,1\n1,0\n")
    with pytest.raises(IngestionError, match="w.csv: line 1: nonzero diagonal"):
        read_weights_csv(p)


def _run(*args):
    return main([str(a) for a in args])


def test_simulate_then_estimate(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert _run("simulate", "--n", 25, "--t", 25, "--seed", 3, "--out", sim, "--create", "--emit-truth") == 0
    truth = json.loads((sim / "truth.json").read_text())
    assert len(truth["theta0"]) == len(truth["names"])
    est = tmp_path / "est"
    assert _run("estimate", "--model", sim / "model.json", "--fix-r", 3, "--out", est, "--create") == 0
    rep = json.loads((est / "report.json").read_text())
    assert rep["R_used"] == 3 and rep["names"] == truth["names"]
    assert (est / "gamma_trace.csv").read_text().startswith("gamma_rho,gamma_beta,")


def test_simulate_without_truth_flag(tmp_path):
    assert _run("simulate", "--n", 25, "--t", 25, "--out", tmp_path) == 0
    assert not (tmp_path / "truth.json").exists()


def test_commands_are_byte_deterministic(tmp_path):
    outs = []
    for tag in ("a", "b"):
        o = tmp_path / tag
        assert _run("montecarlo", "--n", 25, "--t", 25, "--reps", 2, "--seed", 9, "--out", o, "--create") == 0
        outs.append(o)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["manifest.json", "replications.csv", "summary.csv", "summary.txt"]
    for nm in names:
        assert (outs[0] / nm).read_bytes() == (outs[1] / nm).read_bytes()
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert len(man["seeds"]) == 2 and man["plan"]["master_seed"] == 9


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"n": 25, "t": 25, "seed": 1, "out": "o", "create": True}))
    assert _run("simulate", "--config", cfg, "--seed", 2) == 0
    model = json.loads((tmp_path / "o" / "model.json").read_text())
    assert model["seed"] == 2


def test_exit_codes(tmp_path, capsys):
    assert _run("simulate", "--n", 7, "--t", 25, "--out", tmp_path) == 2
    assert _run("simulate", "--n", 25, "--t", 25, "--out", tmp_path / "missing") == 4
    assert not (tmp_path / "missing").exists()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run("simulate", "--config", bad) == 4
    assert _run("simulate", "--n", 25) == 2
    assert _run("nonsense") == 2


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    import spillover.cli as cli
    from spillover.errors import OptimizationFailure

    assert _run("simulate", "--n", 25, "--t", 25, "--out", tmp_path / "s", "--create") == 0

    def boom(*a, **k):
        raise OptimizationFailure("synthetic")

    monkeypatch.setattr(cli, "estimate_fixed_r", boom)
    assert _run("estimate", "--model", tmp_path / "s" / "model.json", "--fix-r", 1, "--out", tmp_path) == 3


def test_estimate_from_raw_files(panel_files):
    root, data, wpaths = panel_files
    out = root / "est"
    rc = _run("estimate", "--panel", root / "panel.csv", "--weights", *wpaths, "--fix-r", 0, "--gamma", 0.0,
              "--out", out, "--create")
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["gamma_star"] == [0.0, 0.0]


def test_estimate_smoke_support_matches_truth(tmp_path):
    sim, est = tmp_path / "sim", tmp_path / "est"
    assert _run("simulate", "--n", 25, "--t", 25, "--seed", 1, "--out", sim, "--create", "--emit-truth") == 0
    assert _run("estimate", "--model", sim / "model.json", "--r-max", 6, "--out", est, "--create") == 0
    truth = json.loads((sim / "truth.json").read_text())
    rep = json.loads((est / "report.json").read_text())
    assert rep["support"] == [nm for nm, v in zip(truth["names"], truth["theta0"]) if v != 0]
    assert rep["R_used"] == 3
