import json
import math

import numpy as np
import pytest

from decorr.graph import Graph, Split, sbm
from decorr.models import ModelConfig, Parameters, init_parameters
from decorr.objective import DecorrConfig
from decorr.tensor import make_rng
from decorr.trainer import (
    AdamState, DivergenceError, RunResult, TrainConfig, accuracy, adam_step,
    default_model_config, evaluate, predict, prepare_graph, train,
)
from tests.conftest import random_graph


def reference_adam(theta, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        trace.append(theta)
    return trace


@pytest.fixture(scope="module")
def small_problem():
    g, split = sbm([40, 40], 0.15, 0.01, make_rng(3), dim=6, mean_scale=1.5, per_class=10)
    return g, split


def small_config(g, **kw):
    model = kw.pop("model", None) or default_model_config(g, layers=3, hidden=8, dropout=0.5)
    kw.setdefault("metrics_every", 5)
    return TrainConfig(model=model, epochs=kw.pop("epochs", 25), **kw)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

def test_adam_first_step():
    new, state = adam_step({"w": np.array([[0.0]])}, {"w": np.array([[1.0]])}, AdamState(), lr=0.01)
    assert new["w"][0, 0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_adam_zero_gradient_is_identity():
    p = {"w": np.array([[1.5, -2.0]]), "b": np.array([[0.3]])}
    new, _ = adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, AdamState(), lr=0.1)
    for k in p:
        np.testing.assert_array_equal(new[k], p[k])


def test_adam_matches_reference_on_quadratic():
    params, state = {"w": np.array([[1.0]])}, AdamState()
    trace = []
    for _ in range(100):
        params, state = adam_step(params, {"w": 2 * params["w"]}, state, lr=0.1)
        trace.append(params["w"][0, 0])
    ref = reference_adam(1.0, lambda th: 2 * th, 0.1, 100)
    np.testing.assert_allclose(trace, ref, rtol=1e-12, atol=1e-15)
    # the magnitude shrinks steadily over the first stretch before Adam starts oscillating
    mags = np.abs(trace[:8])
    assert np.all(np.diff(mags) < 0)
    assert abs(trace[-1]) < 0.1


def test_adam_weight_decay_only_on_weight_matrices():
    p = {"l0.w": np.array([[1.0]]), "l0.b": np.array([[1.0]]), "l0.bn.gamma": np.array([[1.0]])}
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    new, _ = adam_step(p, zero, AdamState(), lr=0.01, weight_decay=0.5)
    assert new["l0.w"][0, 0] < 1.0
    assert new["l0.b"][0, 0] == 1.0 and new["l0.bn.gamma"][0, 0] == 1.0


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros((2, 2))}, {"w": np.zeros((2, 1))}, AdamState(), lr=0.1)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def test_accuracy_examples():
    labels = np.array([0, 2, 1, 1])
    assert accuracy(np.eye(3)[labels], labels, np.arange(4)) == 1.0
    assert accuracy(np.zeros((4, 3)), labels, np.arange(4)) == 0.25
    assert accuracy(np.zeros((4, 3)), labels, [0]) == 1.0
    with pytest.raises(ValueError):
        accuracy(np.zeros((4, 3)), labels, [])


def test_untrained_gcn_is_at_chance():
    g, split = sbm([100] * 7, 0.05, 0.01, make_rng(0), dim=8, mean_scale=0.0, per_class=20)
    accs = []
    for seed in range(20):
        cfg = default_model_config(g, layers=2, hidden=16)
        accs.append(evaluate(g, init_parameters(cfg, make_rng(seed)), cfg, np.arange(g.n)))
    assert abs(np.mean(accs) - 1 / 7) < 0.04


def test_predict_is_eval_mode(small_problem):
    g, _ = small_problem
    cfg = default_model_config(g, layers=3, hidden=4, dropout=0.9, norm="batch")
    params = init_parameters(cfg, make_rng(0))
    before = {k: v.copy() for k, v in params.running.items()}
    assert np.array_equal(predict(g, params, cfg), predict(g, params, cfg))
    assert all(np.array_equal(before[k], params.running[k]) for k in before)


def test_prepare_graph(small_problem):
    g, split = small_problem
    cfg = small_config(g, missing_features=True, row_normalize=False)
    out = prepare_graph(g, split, cfg)
    assert not out.features[split.test].any()
    np.testing.assert_array_equal(out.features[split.train], g.features[split.train])


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def test_config_validation_and_round_trip(small_problem):
    g, _ = small_problem
    for bad in (dict(lr=0), dict(weight_decay=-1), dict(epochs=0), dict(dropedge=2.0), dict(metrics_every=0)):
        with pytest.raises(ValueError):
            small_config(g, **bad)
    cfg = small_config(g, decorr=DecorrConfig(alpha=0.1, beta=1.0, t=1))
    d = cfg.to_dict()
    assert d["norm_order"] == "norm-then-relu"
    assert TrainConfig.from_dict(json.loads(json.dumps(d))) == cfg


def test_training_learns_and_selects_best_epoch(small_problem):
    g, split = small_problem
    res = train(g, split, small_config(g, epochs=40), record_timing=False)
    assert res.wall_secs is None and res.status == "ok"
    assert len(res.epochs) == 40
    vals = [r["acc_val"] for r in res.epochs]
    assert res.best_epoch == int(np.argmax(vals)) + 1  # argmax keeps the earliest maximum
    assert res.test_acc == res.epochs[res.best_epoch - 1]["acc_test"]
    assert res.best_val_acc == max(vals)
    assert res.test_acc > 0.8
    assert [r["epoch"] for r in res.epochs if r["corr"] is not None] == [5, 10, 15, 20, 25, 30, 35, 40]
    np.testing.assert_allclose(res.best_corr is not None, True)
    assert res.config["backend"] in ("numba", "numpy")


def test_best_epoch_ties_go_to_earliest():
    # a graph whose validation accuracy cannot move: every val node is isolated with zero features
    n = 30
    labels = np.arange(n) % 2
    feats = np.zeros((n, 2))
    feats[:10, 0] = labels[:10]
    feats[:10, 1] = 1 - labels[:10]
    g = Graph.from_edges(n, [], feats, labels, 2)
    split = Split(np.arange(10), np.arange(10, 20), np.arange(20, 30))
    cfg = TrainConfig(model=default_model_config(g, layers=2, hidden=4, bias=False), epochs=15, row_normalize=False)
    res = train(g, split, cfg, record_timing=False)
    assert len({r["acc_val"] for r in res.epochs}) == 1
    assert res.best_epoch == 1


def test_loss_terms_add_up(small_problem):
    g, split = small_problem
    dc = DecorrConfig(alpha=0.1, beta=1.0, t=1)
    res = train(g, split, small_config(g, decorr=dc, epochs=10), record_timing=False)
    for r in res.epochs:
        assert abs(r["loss"] - (r["l_class"] + 0.1 * r["l_d"] + 1.0 * r["l_m"])) < 1e-10
        assert r["l_d"] > 0 and r["l_m"] != 0


def test_training_is_bitwise_deterministic(small_problem, tmp_path):
    g, split = small_problem
    cfg = small_config(g, decorr=DecorrConfig(alpha=0.1, beta=1.0, t=1), dropedge=0.3, epochs=12)
    a = train(g, split, cfg, record_timing=False)
    b = train(g, split, cfg, record_timing=False)
    assert a.to_json() == b.to_json()
    a.save(tmp_path / "a.json")
    assert RunResult.load(tmp_path / "a.json").to_json() == a.to_json()
    c = train(g, split, small_config(g, decorr=DecorrConfig(alpha=0.1, beta=1.0, t=1), dropedge=0.3,
                                     epochs=12, seed=1), record_timing=False)
    assert c.to_json() != a.to_json()


@pytest.mark.parametrize("kind,norm", [("cheby", "batch"), ("mlp", "none"), ("gcn", "pair")])
def test_other_models_train(small_problem, kind, norm):
    g, split = small_problem
    model = default_model_config(g, kind=kind, layers=2, hidden=8, norm=norm)
    res = train(g, split, small_config(g, model=model, epochs=8), record_timing=False)
    assert res.status == "ok" and 0 <= res.test_acc <= 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(small_problem):
    g, split = small_problem
    cfg = small_config(g, lr=1e300, epochs=5)
    with pytest.raises(DivergenceError) as info:
        train(g, split, cfg)
    assert info.value.result.status == "diverged"


def test_width_mismatch_rejected(small_problem):
    g, split = small_problem
    bad = TrainConfig(model=ModelConfig(in_dim=3, num_classes=2))
    with pytest.raises(ValueError):
        train(g, split, bad)


def test_run_result_json_has_stable_fields(small_problem):
    g, split = small_problem
    d = json.loads(train(g, split, small_config(g, epochs=3), record_timing=False).to_json())
    assert {"config", "epochs", "best_epoch", "test_acc", "wall_secs", "seed"} <= d.keys()
    assert set(d["epochs"][0]) == {"epoch", "loss", "l_class", "l_d", "l_m", "acc_train",
                                   "acc_val", "acc_test", "corr", "smv"}
    assert "best_params" not in d


def test_best_params_reproduce_reported_accuracy(small_problem):
    g, split = small_problem
    cfg = small_config(g, epochs=20)
    res = train(g, split, cfg, record_timing=False)
    gp = prepare_graph(g, split, cfg)
    assert evaluate(gp, res.best_params, cfg.model, split.test) == res.test_acc
    assert isinstance(res.best_params, Parameters)


def test_random_graph_helper_trains(rng):
    g = random_graph(40, 0.1, rng, dim=3, classes=2)
    split = Split(np.arange(10), np.arange(10, 25), np.arange(25, 40))
    res = train(g, split, TrainConfig(model=default_model_config(g, layers=2, hidden=4), epochs=3), record_timing=False)
    assert len(res.epochs) == 3
