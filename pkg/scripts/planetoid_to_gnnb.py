#!/usr/bin/env python3
"""Convert a Planetoid archive (``ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}``)
into a GNNB v1 file.

    python3 scripts/planetoid_to_gnnb.py --root data/planetoid --name cora --out cora.gnnb

The public split is written into the file (train = the labeled ``x`` rows,
val = the next 500 nodes, test = ``test.index``) unless ``--no-split`` is
given, in which case training draws its own 20-per-class split. Test indices
missing from the archive (Citeseer has some) become isolated zero-feature,
unlabeled nodes, matching the usual loader convention.
"""

from __future__ import annotations

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from decorr.graph import Graph, Split, save_graph

PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def _load(root: Path, name: str, part: str):
    with open(root / f"ind.{name}.{part}", "rb") as fh:
        # the archives were pickled under Python 2
        return pickle.load(fh, encoding="latin1")


def _dense(m) -> np.ndarray:
    return np.asarray(m.todense() if sp.issparse(m) else m, dtype=np.float64)


def convert(root, name: str, with_split: bool = True) -> tuple[Graph, Split | None]:
    root = Path(root)
    x, y, tx, ty, allx, ally, graph = (_load(root, name, p) for p in PARTS)
    test_index = np.loadtxt(root / f"ind.{name}.test.index", dtype=np.int64).reshape(-1)
    test_sorted = np.sort(test_index)
    lo, hi = int(test_sorted.min()), int(test_sorted.max())

    tx, ty = _dense(tx), np.asarray(ty)
    full_range = np.arange(lo, hi + 1)
    if full_range.size != test_sorted.size:
        tx_ext = np.zeros((full_range.size, tx.shape[1]))
        ty_ext = np.zeros((full_range.size, ty.shape[1]))
        tx_ext[test_sorted - lo] = tx
        ty_ext[test_sorted - lo] = ty
        tx, ty = tx_ext, ty_ext

    feats = np.vstack([_dense(allx), tx])
    onehot = np.vstack([np.asarray(ally), ty])
    # rows of the test block arrive in sorted order; restore the archive's index order
    feats[test_index] = feats[test_sorted]
    onehot[test_index] = onehot[test_sorted]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1)

    n = feats.shape[0]
    edges = [(int(u), int(v)) for u, nbrs in graph.items() for v in nbrs if int(v) < n and int(u) < n]
    g = Graph.from_edges(n, edges, feats, labels, onehot.shape[1])

    split = None
    if with_split:
        n_train = np.asarray(y).shape[0]
        test = np.sort(test_index[labels[test_index] >= 0])
        val = np.arange(n_train, min(n_train + 500, n))
        val = val[~np.isin(val, test_index) & (labels[val] >= 0)]
        split = Split(np.arange(n_train), val, test)
    return g, split


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--root", required=True, help="directory holding the ind.<name>.* files")
    p.add_argument("--name", required=True, help="cora, citeseer or pubmed")
    p.add_argument("--out", required=True)
    p.add_argument("--no-split", action="store_true")
    args = p.parse_args(argv)
    try:
        g, split = convert(args.root, args.name, not args.no_split)
    except (OSError, pickle.UnpicklingError, ValueError) as exc:
        print(f"planetoid_to_gnnb: {exc}", file=sys.stderr)
        return 3
    save_graph(args.out, g, split)
    print(f"{args.out}: n={g.n} edges={g.num_edges} d0={g.features.shape[1]} classes={g.num_classes}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
