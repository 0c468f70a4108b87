"""Training regularizers: explicit decorrelation with Monte-Carlo node sampling,
a bilinear-discriminator mutual-information lower bound, and the combined
training objective."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from decorr import tensor as T
from decorr.tensor import Tape, Var, glorot

log = logging.getLogger(__name__)


class DegenerateRepresentationError(ValueError):
    """Every column of the representation is constant, so its Gram matrix vanishes."""


@dataclass(frozen=True)
class DecorrConfig:
    """Weights and sampling knobs of the regularizers.

    ``sample_size`` defaults to ``ceil(sqrt(N))`` and ``mi_batch`` to
    ``min(N, 1024)`` when left as ``None``.
    """

    alpha: float = 0.0
    beta: float = 0.0
    t: int = 5
    sample_size: int | None = None
    mi_batch: int | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.sample_size is not None and self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.mi_batch is not None and self.mi_batch < 2:
            raise ValueError("mi_batch must be >= 2")

    def sample_size_for(self, n: int) -> int:
        if self.sample_size is None:
            return math.isqrt(max(n - 1, 0)) + 1  # ceil(sqrt(n))
        return min(self.sample_size, n)

    def mi_batch_for(self, n: int) -> int:
        return min(n, self.mi_batch if self.mi_batch is not None else 1024)

    def to_dict(self) -> dict:
        return asdict(self)


def init_discriminator(in_dim: int, hidden: int, rng: np.random.Generator) -> np.ndarray:
    return glorot(rng, in_dim, hidden)


def monte_carlo_sample(n: int, sample_size: int, rng: np.random.Generator) -> np.ndarray:
    """``sample_size`` distinct node indices drawn uniformly, in sorted order."""
    if not 1 <= sample_size <= n:
        raise ValueError(f"cannot sample {sample_size} of {n} nodes")
    if sample_size == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=sample_size, replace=False))


def decorr_loss(h: Var) -> Var:
    """``|| C/||C||_F - I/sqrt(d) ||_F`` for the centered Gram ``C`` of ``h``'s rows.

    Raises :class:`DegenerateRepresentationError` when ``C`` is zero.
    """
    m, d = h.shape
    if m < 2:
        raise ValueError("decorr_loss needs at least two rows")
    hc = T.add_row(h, T.scale(T.mean_rows(h), -1.0))
    if np.abs(hc.value).max() <= 1e-12 * max(1.0, np.abs(h.value).max()):
        raise DegenerateRepresentationError("centered Gram matrix is zero")
    gram = T.scale(T.matmul(T.transpose(hc), hc), 1.0 / (m - 1))
    norm = T.frobenius_norm(gram)
    eye = h.tape.const(np.eye(d) / np.sqrt(d))
    return T.frobenius_norm(T.sub(T.mul_scalar(gram, T.reciprocal(norm)), eye))


def total_decorr_loss(hidden: list[Var], cfg: DecorrConfig, rng: np.random.Generator) -> Var:
    """Sum of :func:`decorr_loss` over hidden layers on one shared node sample."""
    if not hidden:
        raise ValueError("no hidden layers to regularize")
    tape = hidden[0].tape
    n = hidden[0].shape[0]
    idx = monte_carlo_sample(n, cfg.sample_size_for(n), rng)
    total = None
    for layer, h in enumerate(hidden, 1):
        sub = h if idx.size == n else T.take_rows(h, idx)
        try:
            term = decorr_loss(sub)
        except DegenerateRepresentationError:
            log.warning("hidden layer %d is constant on the sample; its decorrelation term is 0", layer)
            continue
        total = term if total is None else T.add(total, term)
    return total if total is not None else tape.const(0.0)


def discriminator_score(x, h, w) -> Var | float:
    """``sigmoid(x^T W h)`` for one row pair or row-aligned batches.

    With plain arrays a float is returned; if any operand is a tape node the
    result is an n×1 node differentiable in all three operands.
    """
    if not any(isinstance(v, Var) for v in (x, h, w)):
        x, h, w = (np.asarray(v, dtype=np.float64) for v in (x, h, w))
        if w.shape != (x.size, h.size):
            raise T.ShapeError(f"W is {w.shape}, expected ({x.size}, {h.size})")
        z = float(x.ravel() @ w @ h.ravel())
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    tape = next(v.tape for v in (x, h, w) if isinstance(v, Var))
    x, h, w = (v if isinstance(v, Var) else tape.const(v) for v in (x, h, w))
    if w.shape != (x.shape[1], h.shape[1]):
        raise T.ShapeError(f"W is {w.shape}, expected ({x.shape[1]}, {h.shape[1]})")
    return T.sigmoid(T.sum_cols(T.mul(T.matmul(x, w), h)))


def mi_from_scores(pos: Var, neg: Var) -> Var:
    """``-mean(pos) + log mean exp(neg)`` with a max-shifted log-sum-exp."""
    b = neg.shape[0]
    return T.add(T.scale(T.mean_all(pos), -1.0),
                 T.add(T.logsumexp(neg), pos.tape.const(-math.log(b))))


def mi_loss(h: Var, x: np.ndarray, w: Var, batch, rng: np.random.Generator) -> Var:
    """Negative MI lower bound between hidden rows and input rows on ``batch``.

    Positive pairs are ``(x_i, h_i)``; negatives pair ``h_i`` with ``x`` rows
    shuffled by a uniform random permutation of the batch.
    """
    batch = np.asarray(batch, dtype=np.int64)
    b = batch.size
    if b < 2:
        raise ValueError("mi_loss needs a batch of at least two nodes")
    tape = h.tape
    xb = tape.const(np.asarray(x)[batch])
    hb = h if b == h.shape[0] and np.array_equal(batch, np.arange(b)) else T.take_rows(h, batch)
    xw = T.matmul(xb, w)
    perm = rng.permutation(b)
    pos = T.sigmoid(T.sum_cols(T.mul(xw, hb)))
    neg = T.sigmoid(T.sum_cols(T.mul(T.take_rows(xw, perm), hb)))
    return mi_from_scores(pos, neg)


def mi_layers(num_hidden: int, t: int) -> list[int]:
    """1-based hidden-layer indices t, 2t, ... that are <= num_hidden."""
    return list(range(t, num_hidden + 1, t))


def total_mi_loss(hidden: list[Var], x: np.ndarray, w: Var, cfg: DecorrConfig,
                  rng: np.random.Generator, tape: Tape | None = None) -> Var:
    """Sum of :func:`mi_loss` over every ``t``-th hidden layer.

    One node batch is drawn per call and shared by the selected layers; each
    layer draws its own negative permutation, in layer order.
    """
    layers = mi_layers(len(hidden), cfg.t)
    tape = tape if tape is not None else (hidden[0].tape if hidden else w.tape)
    if not layers:
        return tape.const(0.0)
    n = hidden[0].shape[0]
    batch = monte_carlo_sample(n, cfg.mi_batch_for(n), rng)
    total = None
    for k in layers:
        term = mi_loss(hidden[k - 1], x, w, batch, rng)
        total = term if total is None else T.add(total, term)
    return total


@dataclass
class ObjectiveTerms:
    total: Var
    l_class: float
    l_d: float
    l_m: float


def overall_objective(logits: Var, labels, train_idx, hidden: list[Var], x: np.ndarray,
                      cfg: DecorrConfig, w: Var | None, rng: np.random.Generator) -> ObjectiveTerms:
    """Cross-entropy on training nodes + alpha * L_D + beta * L_M on one tape.

    A regularizer whose weight is zero is neither evaluated nor sampled, so
    ``alpha == beta == 0`` consumes no randomness.
    """
    tape = logits.tape
    total = T.softmax_cross_entropy(logits, labels, train_idx)
    l_class = total.item()
    l_d = l_m = 0.0
    if cfg.alpha > 0 and hidden:
        ld = total_decorr_loss(hidden, cfg, rng)
        l_d = ld.item()
        total = T.add(total, T.scale(ld, cfg.alpha))
    if cfg.beta > 0 and hidden:
        if w is None:
            raise ValueError("beta > 0 needs discriminator weights")
        lm = total_mi_loss(hidden, x, w, cfg, rng, tape)
        l_m = lm.item()
        total = T.add(total, T.scale(lm, cfg.beta))
    return ObjectiveTerms(total, l_class, l_d, l_m)
