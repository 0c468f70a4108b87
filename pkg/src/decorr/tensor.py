"""Dense/sparse float64 linear algebra with a define-by-run reverse-mode tape.

Dense matrices are plain 2-D ``float64`` numpy arrays. A :class:`Tape`
records every primitive applied to its :class:`Var` nodes; node ids are
assigned in creation order, so one reverse sweep over the ids is a valid
topological traversal.

Example
-------
>>> tape = Tape()
>>> w = tape.param(np.ones((2, 2)), "w")
>>> loss = sum_all(w * w)
>>> tape.backward(loss)["w"]
array([[2., 2.],
       [2., 2.]])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from decorr import _kernels


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator used at every stochastic call site.

    Philox is counter-based, so streams are reproducible across platforms.
    """
    return np.random.Generator(np.random.Philox(int(seed)))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot-uniform matrix with entries in ``±sqrt(6 / (fan_in + fan_out))``."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


# --------------------------------------------------------------------------
# sparse CSR
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseCSR:
    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rp = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_ptr", rp)
        object.__setattr__(self, "col_idx", ci)
        object.__setattr__(self, "values", vals)
        if rp.shape != (self.rows + 1,):
            raise ShapeError("row_ptr must have length rows + 1")
        if rp[0] != 0 or rp[-1] != vals.shape[0] or ci.shape != vals.shape:
            raise ShapeError("row_ptr does not bracket col_idx/values")
        if np.any(np.diff(rp) < 0):
            raise ShapeError("row_ptr must be non-decreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.cols:
                raise ShapeError("column index out of range")
            # strictly increasing inside a row; row starts are exempt
            step = np.diff(ci)
            starts = np.zeros(ci.size, dtype=bool)
            starts[rp[1:-1][rp[1:-1] < ci.size]] = True
            if np.any((step <= 0) & ~starts[1:]):
                raise ShapeError("col_idx must be strictly increasing within a row")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def from_coo(cls, rows: int, cols: int, r, c, v) -> "SparseCSR":
        r = np.asarray(r, dtype=np.int64)
        c = np.asarray(c, dtype=np.int64)
        v = np.asarray(v, dtype=np.float64)
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        if r.size > 1 and np.any((r[1:] == r[:-1]) & (c[1:] == c[:-1])):
            raise ShapeError("duplicate entries in COO input")
        row_ptr = np.zeros(rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=rows), out=row_ptr[1:])
        return cls(rows, cols, row_ptr, c, v)

    @classmethod
    def from_dense(cls, dense) -> "SparseCSR":
        dense = as_matrix(dense)
        r, c = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], dense.shape[1], r, c, dense[r, c])

    @classmethod
    def identity(cls, n: int) -> "SparseCSR":
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.ones(n))

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.row_ptr))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_indices(), self.col_idx] = self.values
        return out

    @cached_property
    def T(self) -> "SparseCSR":
        return SparseCSR.from_coo(self.cols, self.rows, self.col_idx, self.row_indices(), self.values)

    def dot(self, dense: np.ndarray) -> np.ndarray:
        dense = as_matrix(dense)
        if dense.shape[0] != self.cols:
            raise ShapeError(f"spmm: operator is {self.shape}, dense has {dense.shape[0]} rows")
        return _kernels.csr_matmul(self.row_ptr, self.col_idx, self.values, dense)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Var:
    """A node on a :class:`Tape` holding a forward value."""

    __slots__ = ("value", "id", "tape", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, tape, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self.id = -1

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on a {self.shape} matrix")
        return float(self.value[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var#{self.id}{tag}{self.shape}"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Tape:
    nodes: list = field(default_factory=list)

    def _push(self, var: Var) -> Var:
        var.id = len(self.nodes)
        self.nodes.append(var)
        return var

    def param(self, value, name: str) -> Var:
        return self._push(Var(as_matrix(value), self, requires_grad=True, name=name))

    def const(self, value) -> Var:
        return self._push(Var(as_matrix(value), self))

    def record(self, value: np.ndarray, parents: Sequence[Var], backward_fn: BackwardFn) -> Var:
        needs = any(p.requires_grad for p in parents)
        return self._push(Var(value, self, parents, backward_fn if needs else None, needs))

    def params(self) -> dict[str, Var]:
        return {v.name: v for v in self.nodes if v.requires_grad and v.name is not None}

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar ``loss``; returns a gradient per named parameter.

        Gradients from several consumers are summed in reverse creation order.
        Parameters that do not influence ``loss`` get a zero gradient.
        """
        if loss.tape is not self or loss.id < 0 or self.nodes[loss.id] is not loss:
            raise ValueError("loss node is not recorded on this tape")
        if loss.value.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads.get(node.id)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        out = {}
        for name, var in self.params().items():
            out[name] = grads.get(var.id, np.zeros_like(var.value))
        return out


def _lift(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        return x
    return tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _binary(a, b) -> tuple[Var, Var, Tape]:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.tape is not b.tape:
        raise ValueError("operands live on different tapes")
    return a, b, tape


def _same_shape(a: Var, b: Var, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def matmul(a, b) -> Var:
    a, b, tape = _binary(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return tape.record(av @ bv, (a, b), back)


def spmm(s: SparseCSR, d: Var) -> Var:
    """Sparse operator times a dense node; the gradient w.r.t. ``d`` is ``s.T @ g``."""
    if s.cols != d.shape[0]:
        raise ShapeError(f"spmm: operator is {s.shape}, dense has {d.shape[0]} rows")

    def back(g):
        return (s.T.dot(g),)

    return d.tape.record(s.dot(d.value), (d,), back)


def add(a, b) -> Var:
    a, b, tape = _binary(a, b)
    _same_shape(a, b, "add")
    return tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Var:
    a, b, tape = _binary(a, b)
    _same_shape(a, b, "sub")
    return tape.record(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    a, b, tape = _binary(a, b)
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return tape.record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Var, c: float) -> Var:
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape.record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Var) -> Var:
    x = a.value
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return a.tape.record(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape.record(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    x = a.value
    return a.tape.record(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return a.tape.record(out, (a,), lambda g: (g * 0.5 / out,))


ELEMENTWISE_KINDS = ("add", "sub", "mul", "relu", "sigmoid", "scale")


def elementwise(kind: str, a, b=None, *, c: float | None = None) -> Var:
    """Dispatch by kind: binary ``add``/``sub``/``mul``, unary ``relu``/``sigmoid``,
    and ``scale`` by the constant ``c``."""
    if kind in ("add", "sub", "mul"):
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return {"add": add, "sub": sub, "mul": mul}[kind](a, b)
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "scale":
        if c is None:
            raise ValueError("scale needs the constant c")
        return scale(a, c)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def add_row(a, r) -> Var:
    """``a + r`` with the 1×d row ``r`` repeated over the rows of ``a``."""
    a, r, tape = _binary(a, r)
    if r.shape != (1, a.shape[1]):
        raise ShapeError(f"add_row: row {r.shape} does not fit {a.shape}")
    return tape.record(a.value + r.value, (a, r), lambda g: (g, g.sum(axis=0, keepdims=True)))


def mul_row(a, r) -> Var:
    a, r, tape = _binary(a, r)
    if r.shape != (1, a.shape[1]):
        raise ShapeError(f"mul_row: row {r.shape} does not fit {a.shape}")
    av, rv = a.value, r.value
    return tape.record(av * rv, (a, r),
                       lambda g: (g * rv, (g * av).sum(axis=0, keepdims=True)))


def mul_scalar(a, s) -> Var:
    """``a`` times the 1×1 node ``s``."""
    a, s, tape = _binary(a, s)
    if s.shape != (1, 1):
        raise ShapeError(f"mul_scalar: {s.shape} is not a scalar")
    av, sv = a.value, s.value[0, 0]
    return tape.record(av * sv, (a, s), lambda g: (g * sv, np.array([[np.sum(g * av)]])))


def reciprocal(a: Var) -> Var:
    out = 1.0 / a.value
    return a.tape.record(out, (a,), lambda g: (-g * out * out,))


def sum_all(a: Var) -> Var:
    shape = a.shape
    return a.tape.record(np.array([[a.value.sum()]]), (a,),
                         lambda g: (np.full(shape, g[0, 0]),))


def mean_all(a: Var) -> Var:
    return scale(sum_all(a), 1.0 / a.value.size)


def mean_rows(a: Var) -> Var:
    """Column means as a 1×d row."""
    n = a.shape[0]
    shape = a.shape
    return a.tape.record(a.value.mean(axis=0, keepdims=True), (a,),
                         lambda g: (np.broadcast_to(g / n, shape).copy(),))


def sum_cols(a: Var) -> Var:
    """Row sums as an n×1 column."""
    shape = a.shape
    return a.tape.record(a.value.sum(axis=1, keepdims=True), (a,),
                         lambda g: (np.broadcast_to(g, shape).copy(),))


def take_rows(a: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return a.tape.record(a.value[idx], (a,), back)


def transpose(a: Var) -> Var:
    return a.tape.record(np.ascontiguousarray(a.value.T), (a,), lambda g: (g.T,))


def frobenius_norm(a: Var) -> Var:
    """``||a||_F``; the gradient at the zero matrix is taken as zero."""
    val = float(np.sqrt(np.sum(a.value * a.value)))
    av = a.value

    def back(g):
        if val == 0.0:
            return (np.zeros_like(av),)
        return (g[0, 0] * av / val,)

    return a.tape.record(np.array([[val]]), (a,), back)


def logsumexp(a: Var) -> Var:
    """log of the sum of exp over every entry, shifted by the max."""
    x = a.value
    m = x.max()
    w = np.exp(x - m)
    s = w.sum()
    p = w / s
    return a.tape.record(np.array([[m + np.log(s)]]), (a,), lambda g: (g[0, 0] * p,))


def softmax_cross_entropy(logits: Var, labels, mask) -> Var:
    """Mean over ``mask`` rows of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("softmax_cross_entropy: empty mask")
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows")
    y = labels[mask]
    if y.min() < 0 or y.max() >= c:
        raise ValueError("label out of class range on a masked node")
    z = logits.value[mask]
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(mask.size)
    loss = float(np.mean(lse - z[rows, y]))
    prob = np.exp(z - lse[:, None])

    def back(g):
        d = prob.copy()
        d[rows, y] -= 1.0
        full = np.zeros((n, c))
        np.add.at(full, mask, d * (g[0, 0] / mask.size))
        return (full,)

    return logits.tape.record(np.array([[loss]]), (logits,), back)


def dropout(a: Var, p: float, rng: np.random.Generator | None, training: bool) -> Var:
    """Inverted dropout; returns ``a`` itself in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape, dtype=np.float32) >= np.float32(p)) / (1.0 - p)
    return a.tape.record(a.value * keep, (a,), lambda g: (g * keep,))
