import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from decorr import tensor as T
from decorr.tensor import ShapeError, SparseCSR, Tape, make_rng
from tests.conftest import fd_check


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def const(x):
    return Tape().const(x)


# --------------------------------------------------------------------------
# forward values
# --------------------------------------------------------------------------

def test_matmul_identity_and_dot():
    tape = Tape()
    np.testing.assert_array_equal(T.matmul(tape.const(np.eye(2)), tape.const([[3, 4], [5, 6]])).value,
                                  [[3, 4], [5, 6]])
    assert T.matmul(tape.const([[1, 2]]), tape.const([[3], [4]])).item() == 11.0


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    tape = Tape()
    np.testing.assert_allclose(T.matmul(tape.const(a), tape.const(b)).value, naive_matmul(a, b), atol=1e-12)


def test_matmul_shape_error():
    tape = Tape()
    with pytest.raises(ShapeError):
        T.matmul(tape.const(np.ones((2, 3))), tape.const(np.ones((2, 3))))


def test_matmul_associative(rng):
    a, b, c = (rng.standard_normal((3, 3)) for _ in range(3))
    np.testing.assert_allclose((a @ b) @ c, a @ (b @ c), atol=1e-10)


def test_spmm_identity_and_two_node_graph(rng):
    d = rng.standard_normal((4, 3))
    tape = Tape()
    np.testing.assert_array_equal(T.spmm(SparseCSR.identity(4), tape.const(d)).value, d)
    a_hat = SparseCSR.from_dense([[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(T.spmm(a_hat, tape.const(np.eye(2))).value, [[0.5, 0.5], [0.5, 0.5]])


def test_spmm_matches_dense(rng):
    dense = np.zeros((5, 5))
    flat = rng.choice(25, size=8, replace=False)
    dense.flat[flat] = rng.standard_normal(8)
    d = rng.standard_normal((5, 3))
    s = SparseCSR.from_dense(dense)
    assert s.nnz == 8
    np.testing.assert_allclose(s.dot(d), dense @ d, atol=1e-12)


def test_spmm_shape_error():
    with pytest.raises(ShapeError):
        T.spmm(SparseCSR.identity(3), const(np.ones((2, 2))))


def test_sparse_rejects_duplicates():
    with pytest.raises(ShapeError):
        SparseCSR.from_coo(2, 2, [0, 0], [1, 1], [1.0, 2.0])


def test_sparse_transpose(rng):
    dense = np.where(rng.random((4, 6)) < 0.4, rng.standard_normal((4, 6)), 0.0)
    np.testing.assert_array_equal(SparseCSR.from_dense(dense).T.to_dense(), dense.T)


def test_elementwise_examples():
    tape = Tape()
    np.testing.assert_array_equal(T.elementwise("relu", tape.const([[-1, 2]])).value, [[0, 2]])
    assert T.elementwise("sigmoid", tape.const([[0.0]])).item() == 0.5
    a = tape.const([[1.5, -2.0], [3.0, 0.25]])
    np.testing.assert_array_equal(T.elementwise("add", a, T.scale(a, -1.0)).value, np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        T.elementwise("add", a, tape.const(np.ones((1, 2))))
    with pytest.raises(ValueError):
        T.elementwise("tanh", a)


def test_sigmoid_is_stable_at_extremes():
    s = T.sigmoid(const([[-1000.0, 1000.0]])).value
    np.testing.assert_array_equal(s, [[0.0, 1.0]])
    assert np.isfinite(s).all()


def test_softmax_cross_entropy_examples():
    tape = Tape()
    assert T.softmax_cross_entropy(tape.const([[0.0, 0.0]]), [0], [0]).item() == pytest.approx(np.log(2), abs=1e-12)
    big = T.softmax_cross_entropy(tape.const([[1000.0, 0.0]]), [0], [0]).item()
    assert 0.0 <= big < 1e-12


def test_softmax_cross_entropy_matches_direct_formula(rng):
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 2])
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    expected = -np.mean(np.log(p[np.arange(4), labels]))
    got = T.softmax_cross_entropy(const(logits), labels, np.arange(4)).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_softmax_cross_entropy_errors():
    tape = Tape()
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(tape.const(np.zeros((2, 2))), [0, 1], [])
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(tape.const(np.zeros((2, 2))), [0, 5], [0, 1])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_cross_entropy_shift_invariant(logits, shift):
    labels = [0, 3, 1]
    a = T.softmax_cross_entropy(const(logits), labels, [0, 1, 2]).item()
    b = T.softmax_cross_entropy(const(logits + shift), labels, [0, 1, 2]).item()
    assert a >= 0.0
    assert abs(a - b) < 1e-10 * max(1.0, abs(a))


def test_dropout_identity_cases(rng):
    a = const(rng.standard_normal((3, 3)))
    assert T.dropout(a, 0.0, rng, training=True) is a
    assert T.dropout(a, 0.5, rng, training=False) is a
    with pytest.raises(ValueError):
        T.dropout(a, 1.0, rng, training=True)


def test_dropout_is_unbiased():
    out = T.dropout(const(np.ones((1000, 10))), 0.6, make_rng(0), training=True).value
    assert abs(out.mean() - 1.0) < 0.05
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.4}


def test_make_rng_reproducible():
    assert np.array_equal(make_rng(7).random(5), make_rng(7).random(5))


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def test_backward_sum_and_square():
    tape = Tape()
    w = tape.param(np.arange(4.0).reshape(2, 2), "w")
    np.testing.assert_array_equal(tape.backward(T.sum_all(w))["w"], np.ones((2, 2)))
    tape = Tape()
    w = tape.param(np.arange(4.0).reshape(2, 2), "w")
    np.testing.assert_allclose(tape.backward(T.sum_all(T.mul(w, w)))["w"], 2 * w.value)


def test_backward_untouched_param_gets_zero():
    tape = Tape()
    w = tape.param(np.ones((2, 2)), "w")
    tape.param(np.ones((3, 1)), "unused")
    grads = tape.backward(T.sum_all(w))
    np.testing.assert_array_equal(grads["unused"], np.zeros((3, 1)))


def test_backward_accumulates_over_consumers():
    tape = Tape()
    w = tape.param([[3.0]], "w")
    loss = T.add(T.mul(w, w), T.scale(w, 5.0))
    assert tape.backward(loss)["w"][0, 0] == pytest.approx(2 * 3.0 + 5.0)


def test_backward_rejects_foreign_or_nonscalar_loss():
    t1, t2 = Tape(), Tape()
    w = t1.param(np.ones((2, 2)), "w")
    with pytest.raises(ValueError):
        t2.backward(T.sum_all(w))
    with pytest.raises(ShapeError):
        t1.backward(w)


def test_tape_ids_are_topological():
    tape = Tape()
    w = tape.param(np.ones((2, 2)), "w")
    loss = T.sum_all(T.relu(T.matmul(w, w)))
    tape.backward(loss)
    for node in tape.nodes:
        assert all(p.id < node.id for p in node.parents)


UNARY = {
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "exp": T.exp,
    "log": lambda a: T.log(T.add(T.mul(a, a), const_like(a, 1.0))),
    "sqrt": lambda a: T.sqrt(T.add(T.mul(a, a), const_like(a, 1.0))),
    "reciprocal": lambda a: T.reciprocal(T.add(T.mul(a, a), const_like(a, 1.0))),
    "scale": lambda a: T.scale(a, -2.5),
    "transpose": T.transpose,
    "mean_rows": T.mean_rows,
    "sum_cols": T.sum_cols,
    "mean_all": T.mean_all,
    "frobenius": T.frobenius_norm,
    "logsumexp": T.logsumexp,
    "take_rows": lambda a: T.take_rows(a, [2, 0, 2, 1]),
}


def const_like(a, v):
    return a.tape.const(np.full(a.shape, v))


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, rng):
    x = rng.standard_normal((3, 4))
    x[np.abs(x) < 0.05] = 0.3  # keep relu away from its kink
    weights = rng.standard_normal
    probe = {}

    def loss(tape, v):
        out = UNARY[name](v["x"])
        if name not in probe:
            probe[name] = weights(out.shape)
        return T.sum_all(T.mul(out, tape.const(probe[name])))

    assert fd_check(loss, {"x": x}) < 1e-4


def test_binary_and_broadcast_gradients(rng):
    a, b = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    r, s = rng.standard_normal((1, 2)), rng.standard_normal((1, 1)) + 2.0
    w = rng.standard_normal((2, 4))
    sp = SparseCSR.from_dense(np.where(rng.random((3, 3)) < 0.5, rng.random((3, 3)), 0.0) + np.eye(3))

    def loss(tape, v):
        z = T.add(T.mul(v["a"], v["b"]), T.sub(v["a"], v["b"]))
        z = T.mul_row(T.add_row(z, v["r"]), v["r"])
        z = T.mul_scalar(T.spmm(sp, z), v["s"])
        z = T.matmul(z, v["w"])
        return T.frobenius_norm(z)

    assert fd_check(loss, {"a": a, "b": b, "r": r, "s": s, "w": w}) < 1e-4


def test_cross_entropy_and_dropout_gradients(rng):
    logits = rng.standard_normal((5, 3))

    def loss(tape, v):
        z = T.dropout(v["z"], 0.4, make_rng(3), training=True)
        return T.softmax_cross_entropy(z, [0, 1, 2, 1, 0], [0, 2, 3])

    assert fd_check(loss, {"z": logits}) < 1e-4


def test_repeated_forward_backward_is_bitwise_identical(rng):
    x = rng.standard_normal((4, 3))

    def run():
        tape = Tape()
        v = tape.param(x, "x")
        out = T.dropout(T.relu(v), 0.5, make_rng(11), training=True)
        return tape.backward(T.logsumexp(out))["x"]

    assert np.array_equal(run(), run())
