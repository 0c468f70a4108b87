"""Adam, the full-graph training loop with validation-based model selection,
and evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from decorr import _kernels
from decorr.graph import (Graph, Split, apply_missing_features, drop_edge, normalize_adjacency,
                          row_normalize_features, scaled_laplacian)
from decorr.metrics import UndefinedMetricError, corr_metric, smv
from decorr.models import ModelConfig, Parameters, forward, init_parameters, is_weight_matrix
from decorr.objective import DecorrConfig, init_discriminator, overall_objective
from decorr.tensor import SparseCSR, Tape, make_rng

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
NORM_ORDER = "norm-then-relu"


class DivergenceError(RuntimeError):
    """The training loss became non-finite; ``result`` holds the epochs run so far."""

    def __init__(self, message: str, result: "RunResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    decorr: DecorrConfig = field(default_factory=DecorrConfig)
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 1000
    seed: int = 0
    dropedge: float = 0.0
    missing_features: bool = False
    row_normalize: bool = True
    metrics_every: int = 10

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.dropedge <= 1.0:
            raise ValueError("dropedge must be in [0, 1]")
        if self.metrics_every < 1:
            raise ValueError("metrics_every must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["norm_order"] = NORM_ORDER
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in names}
        d["model"] = ModelConfig.from_dict(d["model"])
        d["decorr"] = DecorrConfig(**d.get("decorr", {}))
        return cls(**d)


@dataclass
class RunResult:
    config: dict
    epochs: list[dict]
    best_epoch: int
    test_acc: float
    wall_secs: float | None
    seed: int
    best_val_acc: float = 0.0
    best_corr: float | None = None
    best_smv: float | None = None
    status: str = "ok"
    best_params: Parameters | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        del d["best_params"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunResult":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0,
              decay: Callable[[str], bool] = is_weight_matrix) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    ``weight_decay * theta`` is added to the gradient of every parameter for
    which ``decay(name)`` is true before the moments are updated.
    """
    step = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    c1 = 1.0 - ADAM_BETA1 ** step
    c2 = 1.0 - ADAM_BETA2 ** step
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} is {g.shape}, parameter is {theta.shape}")
        if weight_decay and decay(name):
            g = g + weight_decay * theta
        m = ADAM_BETA1 * state.m.get(name, 0.0) + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v.get(name, 0.0) + (1 - ADAM_BETA2) * g * g
        new_params[name] = theta - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(step, m_new, v_new)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def accuracy(logits: np.ndarray, labels: np.ndarray, idx) -> float:
    """Fraction of ``idx`` rows whose argmax (lowest index on ties) equals the label."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("accuracy over an empty node set")
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


def propagation_operator(cfg: ModelConfig, g: Graph) -> SparseCSR | None:
    if cfg.kind == "gcn":
        return normalize_adjacency(g)
    if cfg.kind == "cheby":
        return scaled_laplacian(g)
    return None


def predict(g: Graph, params: Parameters, cfg: ModelConfig, operator: SparseCSR | None = None) -> np.ndarray:
    """Eval-mode logits (no dropout, BatchNorm running statistics)."""
    if operator is None:
        operator = propagation_operator(cfg, g)
    return forward(cfg, params, operator, g.features, None, training=False).logits.value


def evaluate(g: Graph, params: Parameters, cfg: ModelConfig, idx, operator: SparseCSR | None = None) -> float:
    return accuracy(predict(g, params, cfg, operator), g.labels, idx)


def _metric(fn, x):
    try:
        return fn(x)
    except UndefinedMetricError:
        return None


def prepare_graph(g: Graph, split: Split, cfg: TrainConfig) -> Graph:
    if cfg.missing_features:
        g = apply_missing_features(g, split)
    if cfg.row_normalize:
        g = row_normalize_features(g)
    return g


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def train(g: Graph, split: Split, cfg: TrainConfig, extra_config: dict | None = None,
          record_timing: bool = True) -> RunResult:
    """Train for ``cfg.epochs`` epochs and report the best-validation snapshot.

    Deterministic for a given config: every stochastic step (initialization,
    dropout, DropEdge, node sampling, negative shuffling) draws from one
    Philox stream seeded by ``cfg.seed``. With ``record_timing=False`` the
    wall-clock field is left empty so result files compare bytewise.
    """
    split.check(g.n)
    mcfg = cfg.model
    if mcfg.in_dim != g.features.shape[1] or mcfg.num_classes != g.num_classes:
        raise ValueError("model widths do not match the graph")
    started = time.perf_counter()
    rng = make_rng(cfg.seed)
    g = prepare_graph(g, split, cfg)
    x = g.features

    params = init_parameters(mcfg, rng)
    use_mi = cfg.decorr.beta > 0 and mcfg.layers - 1 >= cfg.decorr.t
    if use_mi:
        params.weights["disc.w"] = init_discriminator(mcfg.in_dim, mcfg.hidden, rng)
    state = AdamState()
    full_op = propagation_operator(mcfg, g)

    config = {**(extra_config or {}), **cfg.to_dict(), "backend": _kernels.BACKEND}
    records: list[dict] = []
    best = {"val": -1.0, "epoch": 0, "test": 0.0, "params": params.copy()}

    def result(status: str) -> RunResult:
        secs = time.perf_counter() - started if record_timing else None
        return RunResult(config, records, best["epoch"], best["test"], secs, cfg.seed,
                         best_val_acc=max(best["val"], 0.0), status=status)

    for epoch in range(1, cfg.epochs + 1):
        op = full_op
        if cfg.dropedge > 0 and mcfg.kind != "mlp":
            op = propagation_operator(mcfg, drop_edge(g, cfg.dropedge, rng))
        tape = Tape()
        out = forward(mcfg, params, op, x, rng, training=True, tape=tape)
        w = tape.params().get("disc.w")
        terms = overall_objective(out.logits, g.labels, split.train, out.hidden, x,
                                  cfg.decorr, w, rng)
        loss = terms.total.item()
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", result("diverged"))
        grads = tape.backward(terms.total)
        params.weights, state = adam_step(params.weights, grads, state, cfg.lr, cfg.weight_decay)

        logits = predict(g, params, mcfg, full_op)
        rec = {
            "epoch": epoch,
            "loss": loss,
            "l_class": terms.l_class,
            "l_d": terms.l_d,
            "l_m": terms.l_m,
            "acc_train": accuracy(logits, g.labels, split.train),
            "acc_val": accuracy(logits, g.labels, split.val) if split.val.size else 0.0,
            "acc_test": accuracy(logits, g.labels, split.test) if split.test.size else 0.0,
            "corr": None,
            "smv": None,
        }
        if epoch % cfg.metrics_every == 0 or epoch == cfg.epochs:
            rec["corr"] = _metric(corr_metric, logits)
            rec["smv"] = _metric(smv, logits)
        records.append(rec)
        if rec["acc_val"] > best["val"]:
            best.update(val=rec["acc_val"], epoch=epoch, test=rec["acc_test"], params=params.copy())

    best_logits = predict(g, best["params"], mcfg, full_op)
    res = result("ok")
    res.best_corr = _metric(corr_metric, best_logits)
    res.best_smv = _metric(smv, best_logits)
    res.best_params = best["params"]
    return res


def default_model_config(g: Graph, **kw) -> ModelConfig:
    return ModelConfig(in_dim=g.features.shape[1], num_classes=g.num_classes, **kw)
