"""K-layer GCN / ChebyNet / MLP forward passes on the tape, with optional
BatchNorm or PairNorm and identity residual connections."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

import numpy as np

from decorr import tensor as T
from decorr.graph import Graph, scaled_laplacian
from decorr.tensor import SparseCSR, Tape, Var, glorot

KINDS = ("gcn", "cheby", "mlp")
NORMS = ("none", "batch", "pair")
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
_WEIGHT_NAME = re.compile(r"(^|\.)w\d*$")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "gcn"
    layers: int = 2
    hidden: int = 64
    in_dim: int = 1
    num_classes: int = 2
    norm: str = "none"
    residual: bool = False
    dropout: float = 0.0
    cheby_order: int = 2
    bias: bool = True
    pair_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if min(self.hidden, self.in_dim, self.num_classes) < 1:
            raise ValueError("widths must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.cheby_order < 0:
            raise ValueError("cheby_order must be >= 0")

    def widths(self) -> list[tuple[int, int]]:
        dims = [self.in_dim] + [self.hidden] * (self.layers - 1) + [self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Parameters:
    """Trainable matrices by name plus run-local BatchNorm running statistics."""

    weights: dict[str, np.ndarray] = field(default_factory=dict)
    running: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.weights.items()},
                          {k: v.copy() for k, v in self.running.items()})


def is_weight_matrix(name: str) -> bool:
    """Names of transform weights (``l3.w``, ``l0.w2``, ``disc.w``); biases and norm affine terms excluded."""
    return bool(_WEIGHT_NAME.search(name))


def init_parameters(cfg: ModelConfig, rng: np.random.Generator) -> Parameters:
    p = Parameters()
    n_terms = cfg.cheby_order + 1 if cfg.kind == "cheby" else 1
    for i, (d_in, d_out) in enumerate(cfg.widths()):
        if cfg.kind == "cheby":
            for k in range(n_terms):
                p.weights[f"l{i}.w{k}"] = glorot(rng, d_in, d_out)
        else:
            p.weights[f"l{i}.w"] = glorot(rng, d_in, d_out)
        if cfg.bias:
            p.weights[f"l{i}.b"] = np.zeros((1, d_out))
        if cfg.norm == "batch" and i < cfg.layers - 1:
            p.weights[f"l{i}.bn.gamma"] = np.ones((1, d_out))
            p.weights[f"l{i}.bn.beta"] = np.zeros((1, d_out))
            p.running[f"l{i}.bn.mean"] = np.zeros((1, d_out))
            p.running[f"l{i}.bn.var"] = np.ones((1, d_out))
    return p


@dataclass
class ForwardOutput:
    hidden: list[Var]
    logits: Var
    tape: Tape


# --------------------------------------------------------------------------
# normalization layers
# --------------------------------------------------------------------------

def pairnorm(h: Var, scale: float = 1.0) -> Var:
    """Center the columns, then rescale so the mean squared row norm is ``scale**2``."""
    hc = T.add_row(h, T.scale(T.mean_rows(h), -1.0))
    sq = T.sum_all(T.mul(hc, hc))
    if sq.item() == 0.0:
        return h.tape.const(np.zeros(h.shape))
    inv = T.reciprocal(T.sqrt(T.scale(sq, 1.0 / h.shape[0])))
    return T.scale(T.mul_scalar(hc, inv), scale)


def batchnorm(h: Var, gamma: Var | None, beta: Var | None, stats: dict[str, np.ndarray],
              training: bool, prefix: str = "") -> Var:
    """Per-dimension standardization with learnable affine.

    Training mode uses batch statistics and updates ``stats`` in place
    (``running = 0.9 * running + 0.1 * batch``, unbiased batch variance);
    eval mode uses the stored statistics.
    """
    tape = h.tape
    mean_key, var_key = f"{prefix}mean", f"{prefix}var"
    if training:
        n = h.shape[0]
        if n < 2:
            raise ValueError("batchnorm training mode needs at least two rows")
        mu = T.mean_rows(h)
        hc = T.add_row(h, T.scale(mu, -1.0))
        var = T.mean_rows(T.mul(hc, hc))
        inv = T.reciprocal(T.sqrt(T.add(var, tape.const(np.full(var.shape, BN_EPS)))))
        out = T.mul_row(hc, inv)
        stats[mean_key] = BN_MOMENTUM * stats[mean_key] + (1 - BN_MOMENTUM) * mu.value
        stats[var_key] = BN_MOMENTUM * stats[var_key] + (1 - BN_MOMENTUM) * var.value * n / (n - 1)
    else:
        shift = tape.const(-stats[mean_key])
        inv = tape.const(1.0 / np.sqrt(stats[var_key] + BN_EPS))
        out = T.mul_row(T.add_row(h, shift), inv)
    if gamma is not None:
        out = T.add_row(T.mul_row(out, gamma), beta)
    return out


# --------------------------------------------------------------------------
# forward passes
# --------------------------------------------------------------------------

def _cheby_terms(lap: SparseCSR, x: Var, order: int) -> list[Var]:
    terms = [x]
    if order >= 1:
        terms.append(T.spmm(lap, x))
    for _ in range(2, order + 1):
        terms.append(T.sub(T.scale(T.spmm(lap, terms[-1]), 2.0), terms[-2]))
    return terms


def forward(cfg: ModelConfig, params: Parameters, operator: SparseCSR | None, x,
            rng: np.random.Generator | None, training: bool, tape: Tape | None = None) -> ForwardOutput:
    """Run the configured model.

    ``operator`` is the normalized adjacency for ``gcn``, the scaled Laplacian
    for ``cheby`` and ignored for ``mlp``. Each layer applies dropout to its
    input, propagates, transforms, adds the bias and (on hidden layers with
    matching widths) the residual, then normalizes and applies ReLU. The last
    layer returns raw logits. Parameters already registered on ``tape``
    under the same name are reused rather than duplicated.
    """
    tape = tape if tape is not None else Tape()
    existing = tape.params()
    pv = {name: existing[name] if name in existing else tape.param(arr, name)
          for name, arr in params.weights.items()}
    h = x if isinstance(x, Var) else tape.const(x)
    if h.shape[1] != cfg.in_dim:
        raise T.ShapeError(f"input has {h.shape[1]} features, model expects {cfg.in_dim}")
    if cfg.kind != "mlp":
        if operator is None or operator.shape != (h.shape[0], h.shape[0]):
            raise T.ShapeError("propagation operator must be n x n")
    hidden = []
    last = cfg.layers - 1
    for i in range(cfg.layers):
        h_in = h
        z = T.dropout(h, cfg.dropout, rng, training)
        if cfg.kind == "gcn":
            w = pv[f"l{i}.w"]
            # propagate whichever side is narrower; A(ZW) == (AZ)W
            if w.shape[1] < w.shape[0]:
                z = T.spmm(operator, T.matmul(z, w))
            else:
                z = T.matmul(T.spmm(operator, z), w)
        elif cfg.kind == "cheby":
            terms = _cheby_terms(operator, z, cfg.cheby_order)
            z = T.matmul(terms[0], pv[f"l{i}.w0"])
            for k in range(1, len(terms)):
                z = T.add(z, T.matmul(terms[k], pv[f"l{i}.w{k}"]))
        else:
            z = T.matmul(z, pv[f"l{i}.w"])
        if cfg.bias:
            z = T.add_row(z, pv[f"l{i}.b"])
        if i == last:
            return ForwardOutput(hidden, z, tape)
        if cfg.residual and h_in.shape == z.shape:
            z = T.add(z, h_in)
        if cfg.norm == "batch":
            z = batchnorm(z, pv[f"l{i}.bn.gamma"], pv[f"l{i}.bn.beta"], params.running,
                          training, prefix=f"l{i}.bn.")
        elif cfg.norm == "pair":
            z = pairnorm(z, cfg.pair_scale)
        h = T.relu(z)
        hidden.append(h)
    raise AssertionError("unreachable")


def gcn_forward(cfg, params, a_hat, x, rng, training, tape=None) -> ForwardOutput:
    if cfg.kind != "gcn":
        raise ValueError("gcn_forward needs kind='gcn'")
    return forward(cfg, params, a_hat, x, rng, training, tape)


def cheby_forward(cfg, params, lap_scaled, x, rng, training, tape=None) -> ForwardOutput:
    """``lap_scaled`` may be a :class:`Graph`, in which case its scaled Laplacian is built here."""
    if cfg.kind != "cheby":
        raise ValueError("cheby_forward needs kind='cheby'")
    if isinstance(lap_scaled, Graph):
        lap_scaled = scaled_laplacian(lap_scaled)
    return forward(cfg, params, lap_scaled, x, rng, training, tape)


def mlp_forward(cfg, params, x, rng, training, tape=None) -> ForwardOutput:
    if cfg.kind != "mlp":
        raise ValueError("mlp_forward needs kind='mlp'")
    return forward(cfg, params, None, x, rng, training, tape)
