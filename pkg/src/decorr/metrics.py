"""Representation diagnostics: Pearson correlation, Corr, SMV and the
propagation / transformation studies built on them."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from decorr import _kernels
from decorr.graph import Graph, largest_connected_component, normalize_adjacency
from decorr.tensor import SparseCSR, as_matrix, glorot

EPS = 1e-12
EXACT_SMV_LIMIT = 5000


class UndefinedMetricError(ValueError):
    """The metric is undefined for this input (constant vector, zero norm, ...)."""


@dataclass(frozen=True)
class MetricReport:
    corr: float | None
    smv: float | None
    excluded_dims: int
    excluded_rows: int

    def as_dict(self) -> dict:
        return {"corr": self.corr, "smv": self.smv,
                "excluded_dims": self.excluded_dims, "excluded_rows": self.excluded_rows}


def _tol(v: np.ndarray) -> float:
    return EPS * max(1.0, float(np.max(np.abs(v), initial=0.0)))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two vectors of equal length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    nx, ny = np.linalg.norm(xc), np.linalg.norm(yc)
    if nx <= _tol(x) or ny <= _tol(y):
        raise UndefinedMetricError("pearson correlation is undefined for a constant vector")
    return float(np.clip(xc @ yc / (nx * ny), -1.0, 1.0))


def _require_finite(X: np.ndarray) -> None:
    if not np.all(np.isfinite(X)):
        raise UndefinedMetricError("input has non-finite entries")


def _corr_with_count(X: np.ndarray) -> tuple[float, int]:
    X = as_matrix(X)
    _require_finite(X)
    if X.shape[1] < 2:
        raise UndefinedMetricError("Corr needs at least two dimensions")
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    scale = EPS * np.maximum(1.0, np.abs(X).max(axis=0))
    live = norms > scale
    k = int(live.sum())
    if k < 2:
        raise UndefinedMetricError(f"Corr needs two non-constant dimensions, found {k}")
    Xl = Xc[:, live]
    gram = Xl.T @ Xl
    nl = norms[live]
    r = np.minimum(np.abs(gram / np.outer(nl, nl)), 1.0)
    off = r.sum() - np.trace(r)
    return float(off / (k * (k - 1))), X.shape[1] - k


def corr_metric(X) -> float:
    """Mean absolute Pearson correlation over distinct pairs of non-constant columns."""
    return _corr_with_count(X)[0]


def normalized_euclidean(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx <= EPS or ny <= EPS:
        raise UndefinedMetricError("normalized distance is undefined for a zero vector")
    return float(0.5 * np.linalg.norm(x / nx - y / ny))


def _smv_with_count(X, rng: np.random.Generator | None = None) -> tuple[float, int]:
    X = as_matrix(X)
    _require_finite(X)
    norms = np.linalg.norm(X, axis=1)
    live = norms > EPS
    units = X[live] / norms[live, None]
    m = units.shape[0]
    if m < 2:
        raise UndefinedMetricError(f"SMV needs two nonzero rows, found {m}")
    if m > EXACT_SMV_LIMIT:
        rng = rng if rng is not None else np.random.default_rng(0)
        units = units[np.sort(rng.choice(m, EXACT_SMV_LIMIT, replace=False))]
        m = EXACT_SMV_LIMIT
    total = _kernels.pairwise_unit_distance_sum(np.ascontiguousarray(units))
    # ordered pairs double the i<j sum and the 1/2 in D cancels it
    return float(total / (m * (m - 1))), X.shape[0] - int(live.sum())


def smv(X, rng: np.random.Generator | None = None) -> float:
    """Mean normalized Euclidean distance over distinct pairs of nonzero rows.

    Exact over all pairs up to ``EXACT_SMV_LIMIT`` nonzero rows; above that a
    uniform row subsample of that size is used.
    """
    return _smv_with_count(X, rng)[0]


def measure(X) -> MetricReport:
    """Corr and SMV together; an undefined metric is reported as ``None``."""
    X = as_matrix(X)
    try:
        corr, dims = _corr_with_count(X)
    except UndefinedMetricError:
        corr = None
        Xc = X - X.mean(axis=0)
        dims = int(np.sum(np.linalg.norm(Xc, axis=0) <= EPS * np.maximum(1.0, np.abs(X).max(axis=0, initial=0.0))))
    try:
        s, rows = _smv_with_count(X)
    except UndefinedMetricError:
        s = None
        rows = int(np.sum(np.linalg.norm(X, axis=1) <= EPS))
    return MetricReport(corr, s, dims, rows)


def _safe(fn, X):
    try:
        return fn(X)
    except UndefinedMetricError:
        return float("nan")


# --------------------------------------------------------------------------
# studies
# --------------------------------------------------------------------------

STUDY_COLUMNS = ("K", "corr_mean", "corr_std", "smv_mean", "smv_std", "variant")


def _summarize(variant: str, traces: np.ndarray, smv_traces: np.ndarray | None) -> list[dict]:
    rows = []
    for k in range(traces.shape[1]):
        row = {"K": k, "corr_mean": float(np.nanmean(traces[:, k])),
               "corr_std": float(np.nanstd(traces[:, k])),
               "smv_mean": None, "smv_std": None, "variant": variant}
        if smv_traces is not None:
            row["smv_mean"] = float(np.nanmean(smv_traces[:, k]))
            row["smv_std"] = float(np.nanstd(smv_traces[:, k]))
        rows.append(row)
    return rows


def propagation_curve(a_hat: SparseCSR, k_max: int, runs: int, rng: np.random.Generator,
                      dim: int = 100, track_smv: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
    """Corr (and optionally SMV) of ``A^K X`` for K = 0..k_max, one row per run."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    corr = np.empty((runs, k_max + 1))
    sm = np.empty((runs, k_max + 1)) if track_smv else None
    for r in range(runs):
        X = rng.standard_normal((a_hat.rows, dim))
        for k in range(k_max + 1):
            if k:
                X = a_hat.dot(X)
            corr[r, k] = _safe(corr_metric, X)
            if sm is not None:
                sm[r, k] = _safe(smv, X)
    return corr, sm


def propagation_study(g: Graph, k_max: int, runs: int, rng: np.random.Generator, dim: int = 100,
                      include_lcc: bool = True, track_smv: bool = False) -> list[dict]:
    """Mean/std of ``Corr(A^K X)`` over runs with standard-normal ``X``.

    Returns one row per (variant, K) with the ``STUDY_COLUMNS`` keys; the
    variants are ``full`` and, when requested, ``lcc``.
    """
    graphs = [("full", g)]
    if include_lcc:
        graphs.append(("lcc", largest_connected_component(g)))
    rows = []
    for variant, gv in graphs:
        corr, sm = propagation_curve(normalize_adjacency(gv), k_max, runs, rng, dim, track_smv)
        rows.extend(_summarize(variant, corr, sm))
    return rows


def transformation_curve(k_max: int, runs: int, rng: np.random.Generator, n: int = 2708,
                         dim: int = 100, hidden: int = 16, out_dim: int = 16,
                         nonlinear: bool = True, track_smv: bool = False):
    """Corr of random features pushed through an untrained MLP, per depth.

    Depth ``k >= 1`` is ``k`` hidden layers of width ``hidden`` (ReLU when
    ``nonlinear``) followed by one linear readout to ``out_dim``; depth 0 is
    the raw features. Weights are Glorot-uniform and bias-free. The readout
    matrix is drawn once per run and shared by every depth.
    """
    corr = np.empty((runs, k_max + 1))
    sm = np.empty((runs, k_max + 1)) if track_smv else None
    for r in range(runs):
        X = rng.standard_normal((n, dim))
        readout = glorot(rng, hidden, out_dim)
        H = X
        for k in range(k_max + 1):
            if k:
                H = H @ glorot(rng, H.shape[1], hidden)
                if nonlinear:
                    H = np.maximum(H, 0.0)
                rep = H @ readout
            else:
                rep = X
            corr[r, k] = _safe(corr_metric, rep)
            if sm is not None:
                sm[r, k] = _safe(smv, rep)
    return corr, sm


def transformation_study(k_max: int, runs: int, rng: np.random.Generator, n: int = 2708,
                         dim: int = 100, hidden: int = 16, out_dim: int = 16,
                         variants: Sequence[str] = ("linear", "relu"),
                         track_smv: bool = False) -> list[dict]:
    rows = []
    for variant in variants:
        if variant not in ("linear", "relu"):
            raise ValueError(f"unknown variant {variant!r}")
        corr, sm = transformation_curve(k_max, runs, rng, n, dim, hidden, out_dim,
                                        variant == "relu", track_smv)
        rows.extend(_summarize(variant, corr, sm))
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


def write_study_csv(path, rows: Iterable[dict]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for row in rows:
            w.writerow([_cell(row[c]) for c in STUDY_COLUMNS])


def read_study_csv(path) -> list[dict]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = {"K": int(row["K"]), "variant": row["variant"]}
            for c in ("corr_mean", "corr_std", "smv_mean", "smv_std"):
                rec[c] = float(row[c]) if row[c] else None
            out.append(rec)
    return out
