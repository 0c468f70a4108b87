import numpy as np
import pytest

from decorr.graph import Graph
from decorr.tensor import Tape, make_rng

FD_STEP = 1e-5
FD_REL = 1e-4
FD_ABS = 1e-8


def fd_check(build_loss, params: dict[str, np.ndarray], step: float = FD_STEP):
    """Compare tape gradients with central differences.

    ``build_loss(tape, vars)`` must rebuild the loss from scratch (and reseed
    any randomness) on every call. Returns the worst relative error; an
    element passes if its relative error is below ``FD_REL`` or its absolute
    error below ``FD_ABS``; the reported worst case only counts elements
    whose gradient exceeds 1e-6 in magnitude.
    """
    def loss_of(values):
        tape = Tape()
        vs = {k: tape.param(v, k) for k, v in values.items()}
        return tape, build_loss(tape, vs)

    tape, loss = loss_of(params)
    grads = tape.backward(loss)
    worst = 0.0
    for name, value in params.items():
        num = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += step
            minus[name][idx] -= step
            num[idx] = (loss_of(plus)[1].item() - loss_of(minus)[1].item()) / (2 * step)
        ana = grads[name]
        err = np.abs(ana - num)
        rel = err / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-300)
        bad = (rel >= FD_REL) & (err >= FD_ABS)
        assert not bad.any(), f"{name}: analytic {ana[bad]} vs numeric {num[bad]}"
        big = np.maximum(np.abs(ana), np.abs(num)) > 1e-6
        worst = max(worst, float(rel[big].max(initial=0.0)))
    return worst


@pytest.fixture
def rng():
    return make_rng(1234)


def path_graph(n: int, dim: int = 2) -> Graph:
    edges = [(i, i + 1) for i in range(n - 1)]
    return Graph.from_edges(n, edges, np.ones((n, dim)))


def random_graph(n: int, p: float, rng, dim: int = 3, classes: int = 2) -> Graph:
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    labels = np.arange(n) % classes
    return Graph.from_edges(n, edges, rng.standard_normal((n, dim)), labels, classes)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion line and fails the test when ``ok`` is false."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n: int, ok: bool, detail: str):
        lines[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
        assert ok, lines[n]

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
