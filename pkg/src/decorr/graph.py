"""Graphs, the GNNB v1 text format, splits and structure edits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from decorr.tensor import SparseCSR, ShapeError, as_matrix, make_rng

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """A GNNB file (or synthetic recipe) could not be parsed."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with node features and (optional) labels.

    ``adjacency`` stores both directions of every edge with unit weight and
    no self-loops. Unlabeled nodes carry label ``-1``.
    """

    n: int
    adjacency: SparseCSR
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = as_matrix(self.features)
        if feats.shape[0] != self.n:
            raise ShapeError(f"features have {feats.shape[0]} rows for {self.n} nodes")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.n,):
            raise ShapeError("one label per node required")
        if labels.size and (labels.min() < -1 or labels.max() >= max(self.num_classes, 1)):
            raise ValueError("label outside [-1, num_classes)")
        if self.adjacency.shape != (self.n, self.n):
            raise ShapeError("adjacency must be n x n")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_edges(cls, n: int, edges, features, labels=None, num_classes: int = 1) -> "Graph":
        """Build from an undirected edge list; symmetrizes, deduplicates, drops self-loops."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoint out of range")
        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            log.info("dropping %d self-loop(s)", int(loops.sum()))
            edges = edges[~loops]
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        und = np.unique(np.stack([lo, hi], axis=1), axis=0) if edges.size else edges
        r = np.concatenate([und[:, 0], und[:, 1]])
        c = np.concatenate([und[:, 1], und[:, 0]])
        adj = SparseCSR.from_coo(n, n, r, c, np.ones(r.size))
        if labels is None:
            labels = np.full(n, -1)
        return cls(n, adj, features, labels, num_classes)

    def edges(self) -> np.ndarray:
        """Undirected edges ``(i, j)`` with ``i < j``, sorted."""
        r = self.adjacency.row_indices()
        c = self.adjacency.col_idx
        keep = r < c
        return np.stack([r[keep], c[keep]], axis=1)

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.row_ptr).astype(np.float64)

    def with_features(self, features) -> "Graph":
        return replace(self, features=features)

    def same_as(self, other: "Graph") -> bool:
        return (
            self.n == other.n
            and self.num_classes == other.num_classes
            and np.array_equal(self.adjacency.row_ptr, other.adjacency.row_ptr)
            and np.array_equal(self.adjacency.col_idx, other.adjacency.col_idx)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if self.train.size == 0:
            raise ValueError("train set is empty")
        allidx = np.concatenate([self.train, self.val, self.test])
        if np.unique(allidx).size != allidx.size:
            raise ValueError("split sets overlap")

    def check(self, n: int) -> None:
        for part in (self.train, self.val, self.test):
            if part.size and (part.min() < 0 or part.max() >= n):
                raise ValueError("split index out of range")

    def part(self, name: str) -> np.ndarray:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


# --------------------------------------------------------------------------
# GNNB v1
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    # repr is the shortest decimal that round-trips
    return repr(float(x))


def save_graph(path, g: Graph, split: Split | None = None) -> None:
    path = Path(path)
    edges = g.edges()
    lines = [f"# gnnb 1 {g.n} {len(edges)} {g.features.shape[1]} {g.num_classes}", "# features"]
    lines.extend(" ".join(map(_fmt, row)) for row in g.features.tolist())
    lines.append("# labels")
    lines.extend(str(int(v)) for v in g.labels)
    lines.append("# edges")
    lines.extend(f"{i} {j}" for i, j in edges.tolist())
    if split is not None:
        for name in ("train", "val", "test"):
            lines.append(f"# split {name}")
            lines.append(" ".join(str(int(v)) for v in split.part(name)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_graph(path) -> tuple[Graph, Split | None]:
    """Parse a GNNB v1 file. Raises :class:`GraphFormatError` on malformed input."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise GraphFormatError(f"cannot read {path}: {exc}") from exc
    return parse_gnnb(text)


def parse_gnnb(text: str) -> tuple[Graph, Split | None]:
    sections: dict[str, list[str]] = {}
    header = None
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if not parts:
                raise GraphFormatError(f"line {lineno}: empty section marker")
            if parts[0] == "gnnb":
                if header is not None or len(parts) != 6 or parts[1] != "1":
                    raise GraphFormatError(f"line {lineno}: bad header {line!r}")
                try:
                    header = tuple(int(p) for p in parts[2:])
                except ValueError as exc:
                    raise GraphFormatError(f"line {lineno}: bad header {line!r}") from exc
                continue
            if header is None:
                raise GraphFormatError("missing '# gnnb 1 ...' header")
            if parts[0] == "split" and len(parts) == 2 and parts[1] in ("train", "val", "test"):
                current = f"split {parts[1]}"
            elif parts[0] in ("features", "labels", "edges") and len(parts) == 1:
                current = parts[0]
            else:
                raise GraphFormatError(f"line {lineno}: unknown section {line!r}")
            if current in sections:
                raise GraphFormatError(f"line {lineno}: duplicate section {current!r}")
            sections[current] = []
            continue
        if current is None:
            raise GraphFormatError(f"line {lineno}: data outside a section")
        sections[current].append(line)
    if header is None:
        raise GraphFormatError("missing '# gnnb 1 ...' header")
    n, m, d0, num_classes = header
    for needed in ("features", "labels", "edges"):
        if needed not in sections:
            raise GraphFormatError(f"missing section {needed!r}")

    try:
        if d0 == 0:
            feats = np.zeros((n, 0))
        else:
            feats = np.array([[float(t) for t in ln.split()] for ln in sections["features"]])
            if feats.ndim != 2:
                raise GraphFormatError("ragged feature rows")
        labels = np.array([int(t) for ln in sections["labels"] for t in ln.split()], dtype=np.int64)
        edges = np.array([[int(t) for t in ln.split()] for ln in sections["edges"]], dtype=np.int64)
    except ValueError as exc:
        raise GraphFormatError(f"unparsable number: {exc}") from exc

    if feats.shape != (n, d0):
        raise GraphFormatError(f"features are {feats.shape}, header says ({n}, {d0})")
    if not np.all(np.isfinite(feats)):
        raise GraphFormatError("non-finite feature value")
    if labels.shape != (n,):
        raise GraphFormatError(f"{labels.size} labels for {n} nodes")
    if labels.size and (labels.min() < -1 or labels.max() >= max(num_classes, 1)):
        raise GraphFormatError("label outside [-1, C)")
    edges = edges.reshape(-1, 2) if edges.size else np.zeros((0, 2), dtype=np.int64)
    if len(sections["edges"]) != m or edges.shape[0] != m:
        raise GraphFormatError(f"expected {m} edge lines, found {len(sections['edges'])}")
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise GraphFormatError("edge endpoint out of range")
    g = Graph.from_edges(n, edges, feats, labels, num_classes)

    split = None
    if any(k.startswith("split") for k in sections):
        parts = {}
        for name in ("train", "val", "test"):
            toks = [t for ln in sections.get(f"split {name}", []) for t in ln.split()]
            try:
                parts[name] = np.array([int(t) for t in toks], dtype=np.int64)
            except ValueError as exc:
                raise GraphFormatError(f"bad split index: {exc}") from exc
        try:
            split = Split(**parts)
            split.check(n)
        except ValueError as exc:
            raise GraphFormatError(str(exc)) from exc
    return g, split


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------

def normalize_adjacency(g: Graph) -> SparseCSR:
    """``D~^{-1/2} (A + I) D~^{-1/2}`` with ``D~_ii = 1 + deg(i)``."""
    n = g.n
    r = g.adjacency.row_indices()
    c = g.adjacency.col_idx
    dinv = 1.0 / np.sqrt(1.0 + g.degrees())
    loops = np.arange(n)
    rows = np.concatenate([r, loops])
    cols = np.concatenate([c, loops])
    return SparseCSR.from_coo(n, n, rows, cols, dinv[rows] * dinv[cols])


def scaled_laplacian(g: Graph) -> SparseCSR:
    """``2 L_sym / lambda_max - I`` with ``lambda_max = 2``.

    For nodes with edges this is ``-D^{-1/2} A D^{-1/2}``. An isolated node
    has an all-zero ``L_sym`` row, so it maps to ``-1`` on the diagonal.
    """
    deg = g.degrees()
    dinv = np.zeros(g.n)
    nz = deg > 0
    dinv[nz] = 1.0 / np.sqrt(deg[nz])
    r = g.adjacency.row_indices()
    c = g.adjacency.col_idx
    iso = np.flatnonzero(~nz)
    rows = np.concatenate([r, iso])
    cols = np.concatenate([c, iso])
    vals = np.concatenate([-dinv[r] * dinv[c], -np.ones(iso.size)])
    return SparseCSR.from_coo(g.n, g.n, rows, cols, vals)


# --------------------------------------------------------------------------
# splits and transforms
# --------------------------------------------------------------------------

def planetoid_split(g: Graph, rng: np.random.Generator, per_class: int = 20,
                    num_val: int = 500, num_test: int = 1000) -> Split:
    """``per_class`` training nodes per class, then val/test uniformly from the remaining labeled nodes."""
    train = []
    for c in range(g.num_classes):
        members = np.flatnonzero(g.labels == c)
        if members.size < per_class:
            raise ValueError(f"class {c} has {members.size} labeled nodes, need {per_class}")
        train.append(rng.choice(members, size=per_class, replace=False))
    train = np.sort(np.concatenate(train))
    rest = np.setdiff1d(np.flatnonzero(g.labels >= 0), train)
    if rest.size < num_val + num_test:
        raise ValueError(f"only {rest.size} labeled nodes left for {num_val} val + {num_test} test")
    rest = rng.permutation(rest)
    return Split(train, np.sort(rest[:num_val]), np.sort(rest[num_val:num_val + num_test]))


def apply_missing_features(g: Graph, split: Split) -> Graph:
    """Zero the feature rows of validation and test nodes."""
    feats = g.features.copy()
    feats[np.concatenate([split.val, split.test])] = 0.0
    return g.with_features(feats)


def row_normalize_features(g: Graph) -> Graph:
    """Scale each feature row to unit L1 norm; all-zero rows stay zero."""
    sums = np.abs(g.features).sum(axis=1, keepdims=True)
    sums[sums == 0.0] = 1.0
    return g.with_features(g.features / sums)


def drop_edge(g: Graph, rate: float, rng: np.random.Generator) -> Graph:
    """Keep each undirected edge independently with probability ``1 - rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"drop rate {rate} outside [0, 1]")
    edges = g.edges()
    if rate == 0.0:
        return g
    keep = rng.random(len(edges)) >= rate
    return Graph.from_edges(g.n, edges[keep], g.features, g.labels, g.num_classes)


def component_labels(g: Graph) -> np.ndarray:
    adj = csr_matrix((g.adjacency.values, g.adjacency.col_idx, g.adjacency.row_ptr), shape=(g.n, g.n))
    _, labels = connected_components(adj, directed=False)
    return labels


def subgraph(g: Graph, nodes) -> Graph:
    """Induced subgraph on ``nodes`` (sorted), with indices compacted."""
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    remap = np.full(g.n, -1, dtype=np.int64)
    remap[nodes] = np.arange(nodes.size)
    e = g.edges()
    e = e[(remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)]
    return Graph.from_edges(nodes.size, remap[e], g.features[nodes], g.labels[nodes], g.num_classes)


def largest_connected_component(g: Graph) -> Graph:
    """Induced subgraph on the largest component; ties go to the component holding the smallest node id."""
    nodes = lcc_nodes(g)
    if nodes.size == g.n:
        return g
    return subgraph(g, nodes)


def lcc_nodes(g: Graph) -> np.ndarray:
    labels = component_labels(g)
    sizes = np.bincount(labels)
    # scipy numbers components in order of their smallest member
    first_min = np.full(sizes.size, g.n)
    np.minimum.at(first_min, labels, np.arange(g.n))
    best = min(range(sizes.size), key=lambda k: (-sizes[k], first_min[k]))
    return np.flatnonzero(labels == best)


# --------------------------------------------------------------------------
# synthetic graphs
# --------------------------------------------------------------------------

def _check_prob(name: str, p: float):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name}={p} is not a probability")


def _bernoulli_block(rng, rows: np.ndarray, cols: np.ndarray, p: float, same: bool) -> np.ndarray:
    if p == 0.0 or rows.size == 0 or cols.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    hit = rng.random((rows.size, cols.size)) < p
    if same:
        hit = np.triu(hit, k=1)
    i, j = np.nonzero(hit)
    return np.stack([rows[i], cols[j]], axis=1)


def erdos_renyi(n: int, p: float, rng: np.random.Generator, dim: int = 8) -> Graph:
    """G(n, p) with standard-normal features; nodes are unlabeled."""
    _check_prob("p", p)
    nodes = np.arange(n)
    edges = _bernoulli_block(rng, nodes, nodes, p, same=True)
    return Graph.from_edges(n, edges, rng.standard_normal((n, dim)), np.full(n, -1), 1)


def sbm(sizes, p_in: float, p_out: float, rng: np.random.Generator, dim: int = 16,
        mean_scale: float = 1.0, per_class: int = 20) -> tuple[Graph, Split]:
    """Stochastic block model; labels are block ids and features are a
    per-block Gaussian mean plus unit-variance noise.

    Block means are ``mean_scale`` times independent standard-normal vectors.
    The returned split holds ``per_class`` training nodes per block, with the
    remaining nodes divided 1:2 between validation and test (capped at the
    500/1000 planetoid sizes).
    """
    _check_prob("p_in", p_in)
    _check_prob("p_out", p_out)
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise ValueError("block sizes must be positive")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    n = int(bounds[-1])
    blocks = [np.arange(bounds[k], bounds[k + 1]) for k in range(len(sizes))]
    edges = []
    for a in range(len(sizes)):
        for b in range(a, len(sizes)):
            edges.append(_bernoulli_block(rng, blocks[a], blocks[b], p_in if a == b else p_out, a == b))
    labels = np.repeat(np.arange(len(sizes)), sizes)
    means = mean_scale * rng.standard_normal((len(sizes), dim))
    feats = means[labels] + rng.standard_normal((n, dim))
    g = Graph.from_edges(n, np.concatenate(edges), feats, labels, len(sizes))
    rest = n - per_class * len(sizes)
    num_val = min(500, rest // 3)
    num_test = min(1000, rest - num_val)
    return g, planetoid_split(g, rng, per_class, num_val, num_test)


# Class sizes of the Cora citation graph (2,708 nodes, 7 classes).
CORA_CLASS_SIZES = (351, 217, 418, 818, 426, 298, 180)


def cora_like(rng: np.random.Generator, dim: int = 500, words: int = 18,
              topic_words: int = 3, p_in: float = 0.0065,
              p_out: float = 0.00033) -> tuple[Graph, Split]:
    """Cora-scale stand-in used when the real dataset file is unavailable.

    Seven homophilous blocks with Cora's class sizes, roughly Cora's edge
    count and edge homophily, and sparse binary bag-of-words features: each
    node draws ``topic_words`` words from a class-specific vocabulary slice
    and ``words - topic_words`` from the whole vocabulary. The defaults put a
    2-layer GCN near 80% test accuracy. Split follows the planetoid
    20/500/1000 protocol.
    """
    sizes = CORA_CLASS_SIZES
    k = len(sizes)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    n = int(bounds[-1])
    blocks = [np.arange(bounds[c], bounds[c + 1]) for c in range(k)]
    edges = []
    for a in range(k):
        for b in range(a, k):
            edges.append(_bernoulli_block(rng, blocks[a], blocks[b], p_in if a == b else p_out, a == b))
    labels = np.repeat(np.arange(k), sizes)
    topic = np.array_split(np.arange(dim), k)
    feats = np.zeros((n, dim))
    if not 0 <= topic_words <= min(words, len(topic[-1])):
        raise ValueError("topic_words out of range")
    n_topic = topic_words
    for i in range(n):
        own = rng.choice(topic[labels[i]], size=n_topic, replace=False)
        other = rng.choice(dim, size=words - n_topic, replace=False)
        feats[i, own] = 1.0
        feats[i, other] = 1.0
    g = Graph.from_edges(n, np.concatenate(edges), feats, labels, k)
    return g, planetoid_split(g, rng)


def parse_recipe(recipe: str, rng: np.random.Generator | None = None) -> tuple[Graph, Split | None]:
    """Build a synthetic graph from ``kind:key=value,...``.

    Kinds: ``er`` (``n``, ``p``, ``dim``), ``sbm`` (``sizes`` as ``200/200``,
    ``p_in``, ``p_out``, ``dim``, ``mean_scale``) and ``cora-like``. A
    ``seed`` key seeds the generator when ``rng`` is not given.
    """
    kind, _, rest = recipe.partition(":")
    kv = {}
    for item in filter(None, rest.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise GraphFormatError(f"recipe item {item!r} is not key=value")
        kv[key.strip()] = val.strip()
    try:
        seed = int(kv.pop("seed", 0))
        rng = rng if rng is not None else make_rng(seed)
        if kind in ("er", "erdos-renyi"):
            g = erdos_renyi(int(kv.pop("n")), float(kv.pop("p")), rng, int(kv.pop("dim", 8)))
            split = None
        elif kind == "sbm":
            sizes = [int(s) for s in kv.pop("sizes", "200/200").split("/")]
            g, split = sbm(sizes, float(kv.pop("p_in", 0.05)), float(kv.pop("p_out", 0.005)), rng,
                           int(kv.pop("dim", 16)), float(kv.pop("mean_scale", 1.0)))
        elif kind == "cora-like":
            extra = {k: (int(v) if k in ("dim", "words", "topic_words") else float(v)) for k, v in kv.items()}
            kv.clear()
            g, split = cora_like(rng, **extra)
        else:
            raise GraphFormatError(f"unknown synthetic kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GraphFormatError):
            raise
        raise GraphFormatError(f"bad recipe {recipe!r}: {exc}") from exc
    if kv:
        raise GraphFormatError(f"unused recipe keys: {sorted(kv)}")
    return g, split

