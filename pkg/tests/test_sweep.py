import json

import numpy as np
import pytest

from decorr.cli import main
from decorr.graph import Graph, GraphFormatError
from decorr.sweep import (
    SweepSpec, SweepSpecError, aggregate, best_cells, build_train_config, cell_id, expand_cells,
    load_dataset, read_runs, run_sweep, summarize_runs, table_markdown, training_split,
)

SYN = "sbm:sizes=60/60,p_in=0.1,p_out=0.01,dim=6,mean_scale=1.5"


def test_build_train_config_maps_flat_names():
    g, _, _ = load_dataset(None, SYN)
    cfg = build_train_config(g, {"layers": 3, "alpha": 0.1, "beta": 1, "sample_size": 7, "lr": 0.005,
                                 "row_normalize": False, "norm": "pair"}, seed=4)
    assert cfg.model.layers == 3 and cfg.model.hidden == 64 and cfg.model.norm == "pair"
    assert cfg.decorr.alpha == 0.1 and cfg.decorr.sample_size == 7
    assert cfg.seed == 4 and cfg.lr == 0.005 and cfg.row_normalize is False
    with pytest.raises(SweepSpecError):
        build_train_config(g, {"gamma": 3}, seed=0)


def test_cell_ids_are_sorted_and_stable():
    assert cell_id("decorr", {"lr": 0.01, "alpha": 0.1}) == "decorr__alpha=0.1__lr=0.01"


def test_expand_cells_drops_unused_axes():
    cells = expand_cells(["none", "decorr", "dropedge"], {"layers": [2, 15], "alpha": [0.1, 1.0]},
                         base={"epochs": 5})
    by_method = {}
    for c in cells:
        by_method.setdefault(c.method, []).append(c.params)
    assert len(by_method["none"]) == 2
    assert len(by_method["decorr"]) == 4
    assert all(p["beta"] == 1.0 for p in by_method["decorr"])
    assert all(p["dropedge"] == 0.3 and "alpha" not in p for p in by_method["dropedge"])
    assert all(p["epochs"] == 5 for c in cells for p in [c.params])
    ablate = expand_cells(["decorr-alpha"], {"beta": [1, 10]})
    assert [c.params["beta"] for c in ablate] == [0.0]
    for bad in ([], ["gat"]):
        with pytest.raises(SweepSpecError):
            expand_cells(bad, {"layers": [2]})
    with pytest.raises(SweepSpecError):
        expand_cells(["none"], {"layers": []})


def test_spec_parsing(tmp_path):
    spec = SweepSpec.from_dict({"methods": ["none"], "grid": {"layers": [2]}, "seeds": 3})
    assert spec.seeds == [0, 1, 2]
    for bad in ({"grid": {"layers": [2]}, "colour": 1}, {"grid": {}}, {"grid": {"layers": [2]}, "seeds": []}):
        with pytest.raises(SweepSpecError):
            SweepSpec.from_dict(bad)
    with pytest.raises(SweepSpecError):
        SweepSpec.load(tmp_path / "none.json")


def test_training_split_needs_labels():
    g = Graph.from_edges(3, [], np.zeros((3, 1)))
    with pytest.raises(GraphFormatError):
        training_split(g, None)


@pytest.fixture(scope="module")
def swept(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    spec = SweepSpec.from_dict({
        "methods": ["none", "decorr"], "grid": {"layers": [2, 4]}, "seeds": 2,
        "base": {"epochs": 4, "hidden": 6, "t": 1}, "synthetic": SYN})
    rows = run_sweep(spec, out, workers=1, record_timing=False)
    return out, rows


def test_sweep_outputs(swept):
    out, rows = swept
    assert len(rows) == 4
    assert all(r["runs"] == 2 and r["failed"] == 0 for r in rows)
    assert len(list(out.glob("runs/*/run_*.json"))) == 8
    header = (out / "summary.csv").read_text().splitlines()[0]
    assert header == "cell,method,model,layers,params,runs,failed,val_mean,val_std,test_mean,test_std,corr_mean"
    table = (out / "table.md").read_text()
    assert "| Method | L2 | L4 |" in table
    assert table.count("| none |") == 1 and table.count("| decorr |") == 1


def test_reaggregation_is_bytewise_identical(swept):
    out, _ = swept
    before = {p: (out / p).read_bytes() for p in ("summary.csv", "table.md")}
    aggregate(out)
    assert all((out / p).read_bytes() == b for p, b in before.items())


def test_single_cell_summary_equals_run(tmp_path):
    spec = SweepSpec.from_dict({"methods": ["none"], "grid": {"layers": [2]}, "seeds": [7],
                                "base": {"epochs": 3, "hidden": 4}, "synthetic": SYN})
    rows = run_sweep(spec, tmp_path, workers=1, record_timing=False)
    run = read_runs(tmp_path)[0]
    assert rows[0]["test_mean"] == run["test_acc"] and rows[0]["test_std"] == 0.0
    assert rows[0]["val_mean"] == run["best_val_acc"]


def test_best_cells_prefers_validation_then_first():
    rows = [{"cell": "a", "method": "m", "model": "gcn", "layers": 2, "val_mean": 0.5, "test_mean": 0.1},
            {"cell": "b", "method": "m", "model": "gcn", "layers": 2, "val_mean": 0.7, "test_mean": 0.2},
            {"cell": "c", "method": "m", "model": "gcn", "layers": 2, "val_mean": 0.7, "test_mean": 0.9},
            {"cell": "d", "method": "m", "model": "gcn", "layers": 2, "val_mean": None, "test_mean": None}]
    assert best_cells(rows)[("m", "gcn", 2)]["cell"] == "b"


def test_failed_runs_are_recorded(tmp_path):
    spec = SweepSpec.from_dict({"methods": ["none"], "grid": {"lr": [1e300, 0.01]}, "seeds": 1,
                                "base": {"epochs": 3, "hidden": 4}, "synthetic": SYN})
    with np.errstate(all="ignore"):
        rows = run_sweep(spec, tmp_path, workers=1, record_timing=False)
    assert sorted(r["failed"] for r in rows) == [0, 1]


def test_missing_feature_table():
    rows = [{"method": "none", "model": "gcn", "layers": k, "val_mean": v, "test_mean": v, "test_std": 0.0,
             "missing_features": True} for k, v in ((2, 0.4), (8, 0.6))]
    table = table_markdown(rows)
    assert "| Method | Acc | #K |" in table
    assert "| none | 60.0 ± 0.0 | 8 |" in table


def test_cli_sweep_and_aggregate_only(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"methods": ["none"], "grid": {"layers": [2]}, "seeds": 1,
                                "base": {"epochs": 2, "hidden": 4}}))
    out = tmp_path / "o"
    assert main(["sweep", str(spec), "--synthetic", SYN, "--out", str(out), "--workers", "1", "--no-timing"]) == 0
    first = capsys.readouterr().out
    assert "| none |" in first
    assert main(["sweep", "--aggregate-only", "--out", str(out)]) == 0
    assert capsys.readouterr().out == first
    assert main(["sweep", "--aggregate-only", "--out", str(tmp_path / "empty")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["sweep", str(bad)]) == 2


def test_summary_plot(swept, tmp_path, capsys):
    out, _ = swept
    assert main(["plot", str(out / "summary.csv"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "accuracy_vs_depth.svg").exists() and (tmp_path / "ablation.svg").exists()


def test_summarize_runs_handles_failed_cells():
    runs = [{"config": {"cell": "x", "method": "none", "model": {"kind": "gcn", "layers": 2}, "params": {}},
             "seed": 0, "status": "failed: boom", "best_val_acc": 0.0, "test_acc": 0.0, "best_corr": None}]
    row = summarize_runs(runs)[0]
    assert row["failed"] == 1 and row["test_mean"] is None
