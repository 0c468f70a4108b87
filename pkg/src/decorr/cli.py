"""``decorr`` command-line entry point.

Exit codes: 0 success, 2 usage error, 3 unreadable or invalid data,
4 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from decorr import metrics, svg, sweep
from decorr.graph import GraphFormatError
from decorr.tensor import make_rng
from decorr.trainer import DivergenceError, RunResult, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("decorr")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("expected a nonempty list of integers >= 0")
    return vals


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _data_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", help="GNNB file; relative paths also resolve under $DECORR_DATA_DIR")
    src.add_argument("--synthetic", metavar="RECIPE",
                     help="synthetic graph, e.g. 'sbm:sizes=200/200,p_in=0.05,p_out=0.005'")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("gcn", "cheby", "mlp"), default="gcn")
    p.add_argument("--layers", type=_positive_int, default=2)
    p.add_argument("--hidden", type=_positive_int, default=64)
    p.add_argument("--norm", choices=("none", "batch", "pair"), default="none")
    p.add_argument("--residual", action="store_true")
    p.add_argument("--dropedge", type=float, default=0.0, metavar="RATE")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--t", type=_positive_int, default=5)
    p.add_argument("--sample-size", type=_positive_int, default=None)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--epochs", type=_positive_int, default=1000)
    p.add_argument("--cheby-order", type=_nonneg_int, default=2)
    p.add_argument("--missing-features", action="store_true")
    p.add_argument("--no-row-normalize", dest="row_normalize", action="store_false",
                   help="feed raw features instead of L1-normalized rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decorr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration for one or more seeds")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--repeats", type=_positive_int, default=1, help="seeds seed..seed+R-1")
    p.add_argument("--out", default="runs")
    p.add_argument("--epoch-csv", action="store_true", help="also write per-epoch records as CSV")
    p.add_argument("--no-timing", action="store_true", help="write wall_secs as null")

    p = sub.add_parser("sweep", help="run a grid × seeds sweep from a JSON spec")
    p.add_argument("spec", nargs="?", help="sweep spec JSON")
    _data_flags(p)
    p.add_argument("--out", default="sweep")
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--aggregate-only", action="store_true",
                   help="rebuild summary.csv and table.md from existing run files")

    p = sub.add_parser("prelim-prop", help="Corr of repeated propagation of random features")
    _data_flags(p)
    p.add_argument("--k-max", type=_nonneg_int, default=50)
    p.add_argument("--runs", type=_positive_int, default=100)
    p.add_argument("--dim", type=_positive_int, default=100)
    p.add_argument("--no-lcc", action="store_true")
    p.add_argument("--smv", action="store_true", help="also track SMV")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out", default="prelim")

    p = sub.add_parser("prelim-trans", help="Corr of random features through an untrained MLP")
    p.add_argument("--depths", type=_int_list, default=[1, 2, 5, 10, 15, 20])
    p.add_argument("--runs", type=_positive_int, default=100)
    p.add_argument("--hidden", type=_positive_int, default=16)
    p.add_argument("--dim", type=_positive_int, default=100)
    p.add_argument("--nodes", type=_positive_int, default=2708)
    p.add_argument("--variants", default="linear,relu")
    p.add_argument("--smv", action="store_true")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out", default="prelim")

    p = sub.add_parser("metrics", help="Corr and SMV of a CSV matrix (rows = nodes)")
    p.add_argument("input")

    p = sub.add_parser("plot", help="render SVG charts from run JSON, study CSV or sweep summary files")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out", default="plots")
    return parser


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _load_graph(args):
    try:
        return sweep.load_dataset(args.dataset, args.synthetic)
    except sweep.SweepSpecError as exc:
        raise UsageError(str(exc)) from exc
    except GraphFormatError as exc:
        raise DataError(str(exc)) from exc


def _flag_params(args) -> dict:
    params = {k: getattr(args, k) for k in (
        "model", "layers", "hidden", "norm", "residual", "dropedge", "alpha", "beta", "t",
        "sample_size", "lr", "weight_decay", "dropout", "epochs", "cheby_order", "missing_features",
        "row_normalize")}
    if params["sample_size"] is None:
        del params["sample_size"]
    return params


def _write_epoch_csv(path: Path, res: RunResult) -> None:
    cols = ("epoch", "loss", "l_class", "l_d", "l_m", "acc_train", "acc_val", "acc_test", "corr", "smv")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for rec in res.epochs:
            w.writerow(["" if rec[c] is None else repr(rec[c]) if isinstance(rec[c], float) else rec[c]
                        for c in cols])


def cmd_train(args) -> int:
    g, split, name = _load_graph(args)
    try:
        split = sweep.training_split(g, split)
    except GraphFormatError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = _flag_params(args)
    status = EXIT_OK
    for seed in range(args.seed, args.seed + args.repeats):
        try:
            cfg = sweep.build_train_config(g, params, seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        extra = {"dataset": name}
        try:
            res = train(g, split, cfg, extra_config=extra, record_timing=not args.no_timing)
        except DivergenceError as exc:
            res = exc.result
            print(f"seed {seed}: {exc}", file=sys.stderr)
            status = EXIT_DIVERGED
        path = out / f"run_{seed}.json"
        res.save(path)
        if args.epoch_csv:
            _write_epoch_csv(out / f"run_{seed}.epochs.csv", res)
        print(json.dumps({"seed": seed, "status": res.status, "best_epoch": res.best_epoch,
                          "test_acc": res.test_acc, "file": str(path)}))
    return status


def cmd_sweep(args) -> int:
    out = Path(args.out)
    if args.aggregate_only:
        if not (out / "runs").is_dir():
            raise UsageError(f"{out} has no runs/ directory to aggregate")
        rows = sweep.aggregate(out)
    else:
        if not args.spec:
            raise UsageError("sweep needs a spec file")
        try:
            spec = sweep.SweepSpec.load(args.spec)
        except sweep.SweepSpecError as exc:
            raise UsageError(str(exc)) from exc
        if args.dataset or args.synthetic:
            spec = sweep.SweepSpec(spec.methods, spec.grid, spec.seeds, spec.base,
                                   args.dataset, args.synthetic)
        data = None
        try:
            data = sweep.load_dataset(spec.dataset, spec.synthetic)
            sweep.expand_cells(spec.methods, spec.grid, spec.base)
        except sweep.SweepSpecError as exc:
            raise UsageError(str(exc)) from exc
        except GraphFormatError as exc:
            raise DataError(str(exc)) from exc
        out.mkdir(parents=True, exist_ok=True)
        rows = sweep.run_sweep(spec, out, workers=args.workers,
                               record_timing=not args.no_timing, graph=data)
    sys.stdout.write((out / "table.md").read_text(encoding="utf-8"))
    failed = sum(r["failed"] for r in rows)
    if failed:
        print(f"decorr: {failed} run(s) diverged or failed; see status fields", file=sys.stderr)
    return EXIT_OK


def _study_chart(rows: list[dict], title: str, xlabel: str) -> str:
    series = []
    for variant in dict.fromkeys(r["variant"] for r in rows):
        vr = [r for r in rows if r["variant"] == variant]
        series.append((f"Corr ({variant})", [r["K"] for r in vr], [r["corr_mean"] for r in vr]))
        if any(r["smv_mean"] is not None for r in vr):
            series.append((f"SMV ({variant})", [r["K"] for r in vr], [r["smv_mean"] for r in vr]))
    return svg.line_chart(series, title=title, xlabel=xlabel, ylabel="value")


def cmd_prelim_prop(args) -> int:
    g, _, _ = _load_graph(args)
    rows = metrics.propagation_study(g, args.k_max, args.runs, make_rng(args.seed), dim=args.dim,
                                     include_lcc=not args.no_lcc, track_smv=args.smv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_study_csv(out / "propagation.csv", rows)
    (out / "propagation.svg").write_text(
        _study_chart(rows, "Corr of propagated random features", "K (propagation steps)"), encoding="utf-8")
    print(out / "propagation.csv")
    return EXIT_OK


def cmd_prelim_trans(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants or set(variants) - {"linear", "relu"}:
        raise UsageError("--variants takes a comma list of linear,relu")
    rows = metrics.transformation_study(max(args.depths), args.runs, make_rng(args.seed),
                                        n=args.nodes, dim=args.dim, hidden=args.hidden,
                                        out_dim=args.hidden, variants=variants, track_smv=args.smv)
    wanted = set(args.depths)
    rows = [r for r in rows if r["K"] in wanted]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_study_csv(out / "transformation.csv", rows)
    (out / "transformation.svg").write_text(
        _study_chart(rows, "Corr after an untrained MLP", "depth"), encoding="utf-8")
    print(out / "transformation.csv")
    return EXIT_OK


def read_matrix_csv(path) -> np.ndarray:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]  # header row
    try:
        X = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from exc
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"{path}: rows have differing lengths")
    if not np.isfinite(X).all():
        raise DataError(f"{path}: non-finite value")
    return X


def cmd_metrics(args) -> int:
    X = read_matrix_csv(args.input)
    print(json.dumps(metrics.measure(X).as_dict()))
    return EXIT_OK


def _plot_runs(runs: list[tuple[str, dict]], out: Path) -> list[Path]:
    acc, cor, sm = [], [], []
    for name, r in runs:
        ep = r["epochs"]
        acc.append((f"{name} val", [e["epoch"] for e in ep], [e["acc_val"] for e in ep]))
        tracked = [e for e in ep if e["corr"] is not None or e["smv"] is not None]
        cor.append((name, [e["epoch"] for e in tracked], [e["corr"] for e in tracked]))
        sm.append((name, [e["epoch"] for e in tracked], [e["smv"] for e in tracked]))
    files = {"accuracy_vs_epoch.svg": svg.line_chart(acc, "Validation accuracy", "epoch", "accuracy"),
             "corr_vs_epoch.svg": svg.line_chart(cor, "Corr of the final representation", "epoch", "Corr"),
             "smv_vs_epoch.svg": svg.line_chart(sm, "SMV of the final representation", "epoch", "SMV")}
    for fname, text in files.items():
        (out / fname).write_text(text, encoding="utf-8")
    return [out / f for f in files]


def _plot_summary(rows: list[dict], out: Path) -> list[Path]:
    best = sweep.best_cells(rows)
    series, groups = [], sorted({(r["method"], r["model"]) for r in rows})
    for method, model in groups:
        pts = sorted((k[2], v["test_mean"]) for k, v in best.items() if k[:2] == (method, model))
        series.append((f"{method} ({model})", [p[0] for p in pts], [p[1] for p in pts]))
    depth = out / "accuracy_vs_depth.svg"
    depth.write_text(svg.line_chart(series, "Test accuracy by depth", "layers", "accuracy"), encoding="utf-8")
    depths = sorted({r["layers"] for r in rows})
    bars = [(f"L{k}", [best[(m, mo, k)]["test_mean"] if (m, mo, k) in best else None for m, mo in groups])
            for k in depths]
    abl = out / "ablation.svg"
    abl.write_text(svg.bar_chart([f"{m} ({mo})" for m, mo in groups], bars,
                                 "Test accuracy by method", "accuracy"), encoding="utf-8")
    return [depth, abl]


def cmd_plot(args) -> int:
    if not args.inputs:
        raise UsageError("plot needs at least one input file")
    runs, studies, summaries = [], [], []
    for name in args.inputs:
        path = Path(name)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        if path.suffix == ".json":
            try:
                runs.append((path.stem if len(args.inputs) == 1 else str(path.parent.name + "/" + path.stem),
                             json.loads(text)))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: {exc}") from exc
        elif text.startswith(",".join(metrics.STUDY_COLUMNS)):
            studies.append((path, metrics.read_study_csv(path)))
        elif text.startswith(",".join(sweep.SUMMARY_COLUMNS)):
            summaries.append(_read_summary(path))
        else:
            raise DataError(f"{path}: not a run JSON, study CSV or sweep summary")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if runs:
        written += _plot_runs(runs, out)
    for path, rows in studies:
        target = out / (path.stem + ".svg")
        target.write_text(_study_chart(rows, path.stem, "K"), encoding="utf-8")
        written.append(target)
    if summaries:
        written += _plot_summary([r for rows in summaries for r in rows], out)
    for w in written:
        print(w)
    return EXIT_OK


def _read_summary(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.append({"method": r["method"], "model": r["model"], "layers": int(r["layers"]),
                         "val_mean": float(r["val_mean"]) if r["val_mean"] else None,
                         "test_mean": float(r["test_mean"]) if r["test_mean"] else None})
    return rows


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "prelim-prop": cmd_prelim_prop,
            "prelim-trans": cmd_prelim_trans, "metrics": cmd_metrics, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"decorr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphFormatError) as exc:
        print(f"decorr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"decorr: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
