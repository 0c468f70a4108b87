"""Grid sweeps: expand method presets × hyperparameter grid × seeds, run
each cell in a worker pool, and aggregate run files into ``summary.csv``
and ``table.md``."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from decorr.graph import Graph, GraphFormatError, Split, load_graph, parse_recipe, planetoid_split
from decorr.models import ModelConfig
from decorr.objective import DecorrConfig
from decorr.tensor import make_rng
from decorr.trainer import DivergenceError, RunResult, TrainConfig, train

log = logging.getLogger(__name__)

DATA_DIR_ENV = "DECORR_DATA_DIR"
DEFAULT_DATASET = "cora.gnnb"
SPLIT_SEED = 0

# hyperparameters every method accepts; the rest belong to one preset
COMMON_KEYS = ("model", "layers", "hidden", "lr", "weight_decay", "dropout", "epochs",
               "cheby_order", "missing_features", "metrics_every", "row_normalize")
PRESETS: dict[str, dict] = {
    "none": {"fixed": {}, "keys": ()},
    "decorr": {"fixed": {}, "keys": ("alpha", "beta", "t", "sample_size")},
    "decorr-alpha": {"fixed": {"beta": 0.0}, "keys": ("alpha", "sample_size")},
    "decorr-beta": {"fixed": {"alpha": 0.0}, "keys": ("beta", "t")},
    "batchnorm": {"fixed": {"norm": "batch"}, "keys": ()},
    "pairnorm": {"fixed": {"norm": "pair"}, "keys": ("pair_scale",)},
    "dropedge": {"fixed": {}, "keys": ("dropedge",)},
    "residual": {"fixed": {"residual": True}, "keys": ()},
}
PRESET_DEFAULTS = {"alpha": 0.1, "beta": 1.0, "dropedge": 0.3}

SUMMARY_COLUMNS = ("cell", "method", "model", "layers", "params", "runs", "failed",
                   "val_mean", "val_std", "test_mean", "test_std", "corr_mean")


class SweepSpecError(ValueError):
    """The sweep specification is malformed."""


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

def resolve_dataset_path(dataset: str | None) -> Path:
    root = os.environ.get(DATA_DIR_ENV)
    if dataset is None:
        if not root:
            raise SweepSpecError(f"no dataset given and {DATA_DIR_ENV} is unset")
        return Path(root) / DEFAULT_DATASET
    path = Path(dataset)
    if not path.is_absolute() and not path.exists() and root:
        return Path(root) / path
    return path


def load_dataset(dataset: str | None = None, synthetic: str | None = None) -> tuple[Graph, Split | None, str]:
    """Graph, split (if any) and a short identifier for the config echo."""
    if dataset is not None and synthetic is not None:
        raise SweepSpecError("give either a dataset path or a synthetic recipe, not both")
    if synthetic is not None:
        g, split = parse_recipe(synthetic)
        return g, split, f"synthetic:{synthetic}"
    path = resolve_dataset_path(dataset)
    g, split = load_graph(path)
    return g, split, path.name


def training_split(g: Graph, split: Split | None) -> Split:
    if g.num_classes < 2 or (g.labels < 0).all():
        raise GraphFormatError("graph has no class labels to train on")
    if split is None:
        split = planetoid_split(g, make_rng(SPLIT_SEED))
    split.check(g.n)
    return split


# --------------------------------------------------------------------------
# configs
# --------------------------------------------------------------------------

def build_train_config(g: Graph, params: dict, seed: int) -> TrainConfig:
    """TrainConfig from flat hyperparameter names (CLI flag names with ``_``)."""
    p = dict(params)
    model = ModelConfig(
        kind=p.pop("model", "gcn"), layers=int(p.pop("layers", 2)), hidden=int(p.pop("hidden", 64)),
        in_dim=g.features.shape[1], num_classes=g.num_classes, norm=p.pop("norm", "none"),
        residual=bool(p.pop("residual", False)), dropout=float(p.pop("dropout", 0.0)),
        cheby_order=int(p.pop("cheby_order", 2)), pair_scale=float(p.pop("pair_scale", 1.0)))
    sample_size = p.pop("sample_size", None)
    decorr = DecorrConfig(alpha=float(p.pop("alpha", 0.0)), beta=float(p.pop("beta", 0.0)),
                          t=int(p.pop("t", 5)),
                          sample_size=None if sample_size is None else int(sample_size))
    cfg = TrainConfig(model=model, decorr=decorr, lr=float(p.pop("lr", 0.01)),
                      weight_decay=float(p.pop("weight_decay", 5e-4)),
                      epochs=int(p.pop("epochs", 1000)), seed=seed,
                      dropedge=float(p.pop("dropedge", 0.0)),
                      missing_features=bool(p.pop("missing_features", False)),
                      row_normalize=bool(p.pop("row_normalize", True)),
                      metrics_every=int(p.pop("metrics_every", 10)))
    if p:
        raise SweepSpecError(f"unknown hyperparameter(s): {sorted(p)}")
    return cfg


def _fmt_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def cell_id(method: str, params: dict) -> str:
    parts = [method] + [f"{k}={_fmt_value(params[k])}" for k in sorted(params)]
    return "__".join(parts)


@dataclass(frozen=True)
class Cell:
    method: str
    params: dict

    @property
    def id(self) -> str:
        return cell_id(self.method, self.params)


def expand_cells(methods: list[str], grid: dict[str, list], base: dict | None = None) -> list[Cell]:
    """Cartesian product of each method's relevant grid axes.

    Axes a preset does not use are dropped for it, so e.g. ``none`` is not
    repeated for every ``alpha``. Preset-specific keys absent from the grid
    fall back to :data:`PRESET_DEFAULTS`.
    """
    if not methods:
        raise SweepSpecError("sweep needs at least one method")
    for key, vals in grid.items():
        if not isinstance(vals, list) or not vals:
            raise SweepSpecError(f"grid axis {key!r} must be a nonempty list")
    base = dict(base or {})
    cells = []
    for method in methods:
        if method not in PRESETS:
            raise SweepSpecError(f"unknown method {method!r}; choose from {sorted(PRESETS)}")
        preset = PRESETS[method]
        axes = {k: v for k, v in grid.items() if k in COMMON_KEYS or k in preset["keys"]}
        for k in preset["keys"]:
            if k not in axes and k not in base and k in PRESET_DEFAULTS:
                axes[k] = [PRESET_DEFAULTS[k]]
        keys = sorted(axes)
        for combo in itertools.product(*(axes[k] for k in keys)):
            params = {k: v for k, v in base.items() if k in COMMON_KEYS or k in preset["keys"]}
            params.update(zip(keys, combo))
            params.update(preset["fixed"])
            cells.append(Cell(method, params))
    seen, unique = set(), []
    for c in cells:
        if c.id not in seen:
            seen.add(c.id)
            unique.append(c)
    return unique


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------

def _run_job(job) -> str:
    g, split, cfg, extra, path, record_timing = job
    try:
        res = train(g, split, cfg, extra_config=extra, record_timing=record_timing)
    except DivergenceError as exc:
        res = exc.result
        log.warning("%s diverged: %s", path, exc)
    except Exception as exc:  # recorded per cell; the sweep continues
        res = RunResult(config={**extra, **cfg.to_dict()}, epochs=[], best_epoch=0, test_acc=0.0,
                        wall_secs=None, seed=cfg.seed, status=f"failed: {type(exc).__name__}: {exc}")
        log.warning("%s failed: %s", path, exc)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    res.save(path)
    return res.status


@dataclass(frozen=True)
class SweepSpec:
    methods: list[str]
    grid: dict[str, list]
    seeds: list[int]
    base: dict
    dataset: str | None = None
    synthetic: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        known = {"methods", "grid", "seeds", "base", "dataset", "synthetic"}
        extra = set(d) - known
        if extra:
            raise SweepSpecError(f"unknown sweep spec key(s): {sorted(extra)}")
        seeds = d.get("seeds", 5)
        if isinstance(seeds, int):
            seeds = list(range(seeds))
        if not seeds:
            raise SweepSpecError("sweep needs at least one seed")
        grid = d.get("grid", {})
        methods = d.get("methods", ["none"])
        if not grid and not d.get("base"):
            raise SweepSpecError("sweep grid is empty")
        return cls(list(methods), dict(grid), [int(s) for s in seeds], dict(d.get("base", {})),
                   d.get("dataset"), d.get("synthetic"))

    @classmethod
    def load(cls, path) -> "SweepSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise SweepSpecError(f"cannot read sweep spec {path}: {exc}") from exc


def run_sweep(spec: SweepSpec, out_dir, workers: int | None = None, record_timing: bool = True,
              graph: tuple[Graph, Split | None, str] | None = None) -> list[dict]:
    """Run every (cell, seed), then aggregate. Returns the summary rows."""
    g, split, name = graph if graph is not None else load_dataset(spec.dataset, spec.synthetic)
    split = training_split(g, split)
    out = Path(out_dir)
    cells = expand_cells(spec.methods, spec.grid, spec.base)
    jobs = []
    for cell in cells:
        for seed in spec.seeds:
            cfg = build_train_config(g, cell.params, seed)
            extra = {"dataset": name, "method": cell.method, "cell": cell.id, "params": cell.params}
            jobs.append((g, split, cfg, extra, out / "runs" / cell.id / f"run_{seed}.json", record_timing))
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        statuses = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            statuses = list(pool.map(_run_job, jobs))
    log.info("sweep finished: %d runs, %d not ok", len(statuses), sum(s != "ok" for s in statuses))
    return aggregate(out)


# --------------------------------------------------------------------------
# aggregation (a pure function of the run files)
# --------------------------------------------------------------------------

def _mean_std(vals: list[float]) -> tuple[float | None, float | None]:
    if not vals:
        return None, None
    a = np.asarray(vals, dtype=np.float64)
    return float(a.mean()), float(a.std())


def summarize_runs(runs: list[dict]) -> list[dict]:
    by_cell: dict[str, list[dict]] = {}
    for r in runs:
        by_cell.setdefault(r["config"]["cell"], []).append(r)
    rows = []
    for cid in sorted(by_cell):
        group = sorted(by_cell[cid], key=lambda r: r["seed"])
        ok = [r for r in group if r["status"] == "ok"]
        cfg = group[0]["config"]
        val_m, val_s = _mean_std([r["best_val_acc"] for r in ok])
        test_m, test_s = _mean_std([r["test_acc"] for r in ok])
        corr_m, _ = _mean_std([r["best_corr"] for r in ok if r.get("best_corr") is not None])
        rows.append({
            "cell": cid, "method": cfg["method"], "model": cfg["model"]["kind"],
            "layers": cfg["model"]["layers"],
            "params": json.dumps(cfg["params"], sort_keys=True, separators=(",", ":")),
            "runs": len(group), "failed": len(group) - len(ok),
            "val_mean": val_m, "val_std": val_s, "test_mean": test_m, "test_std": test_s,
            "corr_mean": corr_m,
            "missing_features": bool(cfg.get("missing_features", False)),
        })
    return rows


def best_cells(rows: list[dict], by=("method", "model", "layers")) -> dict[tuple, dict]:
    """Highest mean validation accuracy per group; ties keep the first cell id."""
    best: dict[tuple, dict] = {}
    for row in rows:
        if row["val_mean"] is None:
            continue
        key = tuple(row[k] for k in by)
        if key not in best or row["val_mean"] > best[key]["val_mean"]:
            best[key] = row
    return best


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def _pct(mean, std) -> str:
    return "n/a" if mean is None else f"{100 * mean:.1f} ± {100 * std:.1f}"


def _method_order(rows: list[dict]) -> list[str]:
    order = list(PRESETS)
    present = {r["method"] for r in rows}
    return [m for m in order if m in present]


def table_markdown(rows: list[dict]) -> str:
    """Depth table (method × ``L<k>``), or Acc/#K when every run drops features."""
    if not rows:
        return "_no runs_\n"
    models = sorted({r["model"] for r in rows})
    lines = []
    if all(r["missing_features"] for r in rows):
        best = best_cells(rows, by=("method", "model"))
        for model in models:
            lines += [f"### {model} (missing features)", "", "| Method | Acc | #K |", "|---|---|---|"]
            for method in _method_order(rows):
                row = best.get((method, model))
                if row is None:
                    lines.append(f"| {method} | n/a | n/a |")
                else:
                    lines.append(f"| {method} | {_pct(row['test_mean'], row['test_std'])} | {row['layers']} |")
            lines.append("")
        return "\n".join(lines)
    best = best_cells(rows)
    depths = sorted({r["layers"] for r in rows})
    for model in models:
        lines += [f"### {model}", "",
                  "| Method | " + " | ".join(f"L{k}" for k in depths) + " |",
                  "|---|" + "---|" * len(depths)]
        for method in _method_order(rows):
            cells = []
            for k in depths:
                row = best.get((method, model, k))
                cells.append("n/a" if row is None else _pct(row["test_mean"], row["test_std"]))
            lines.append(f"| {method} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def read_runs(out_dir) -> list[dict]:
    runs = []
    for path in sorted(Path(out_dir).glob("runs/*/run_*.json")):
        runs.append(json.loads(path.read_text(encoding="utf-8")))
    return runs


def aggregate(out_dir) -> list[dict]:
    """Rebuild ``summary.csv`` and ``table.md`` from the run files under ``out_dir``."""
    out = Path(out_dir)
    rows = summarize_runs(read_runs(out))
    (out / "summary.csv").write_text(summary_csv(rows), encoding="utf-8")
    (out / "table.md").write_text(table_markdown(rows), encoding="utf-8")
    return rows
