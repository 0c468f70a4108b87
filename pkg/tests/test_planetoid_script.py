import importlib.util
import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from decorr.graph import load_graph

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "planetoid_to_gnnb.py"


def _module():
    spec = importlib.util.spec_from_file_location("planetoid_to_gnnb", SCRIPT)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def _fabricate(root: Path, missing_test_node: bool = False):
    """A 9-node, 2-class archive: nodes 0-5 in allx (0-1 labeled as x), test nodes 6-8."""
    d = 3
    rng = np.random.default_rng(0)
    allx = rng.random((6, d))
    ally = np.eye(2)[[0, 1, 0, 1, 1, 0]]
    test_index = np.array([8, 6] if missing_test_node else [8, 6, 7])
    tx = np.array([[1.0, 0, 0], [0, 1.0, 0]] + ([] if missing_test_node else [[0, 0, 1.0]]))
    ty = np.eye(2)[[1, 0] + ([] if missing_test_node else [1])]
    # tx rows follow the order of test.index
    parts = {"x": sp.csr_matrix(allx[:2]), "y": ally[:2], "tx": sp.csr_matrix(tx), "ty": ty,
             "allx": sp.csr_matrix(allx), "ally": ally,
             "graph": {0: [1, 6], 1: [0, 2], 2: [1], 3: [4], 4: [3, 8], 5: [], 6: [0], 7: [], 8: [4, 8]}}
    for name, obj in parts.items():
        with open(root / f"ind.toy.{name}", "wb") as fh:
            pickle.dump(obj, fh, protocol=2)
    (root / "ind.toy.test.index").write_text("\n".join(map(str, test_index)) + "\n")
    return allx, test_index


def test_convert_and_round_trip(tmp_path):
    allx, test_index = _fabricate(tmp_path)
    mod = _module()
    assert mod.main(["--root", str(tmp_path), "--name", "toy", "--out", str(tmp_path / "toy.gnnb")]) == 0
    g, split = load_graph(tmp_path / "toy.gnnb")
    assert g.n == 9 and g.num_classes == 2
    np.testing.assert_array_equal(g.features[:6], allx)
    # node 8 was listed first in test.index with features [1, 0, 0]
    np.testing.assert_array_equal(g.features[8], [1.0, 0, 0])
    np.testing.assert_array_equal(g.features[6], [0, 1.0, 0])
    assert g.labels.tolist() == [0, 1, 0, 1, 1, 0, 0, 1, 1]
    assert g.num_edges == 5  # the 8-8 self-loop is dropped
    np.testing.assert_array_equal(split.train, [0, 1])
    np.testing.assert_array_equal(split.val, [2, 3, 4, 5])
    np.testing.assert_array_equal(split.test, [6, 7, 8])


def test_missing_test_nodes_become_unlabeled(tmp_path):
    _fabricate(tmp_path, missing_test_node=True)
    g, split = _module().convert(tmp_path, "toy", with_split=False)
    assert split is None
    assert g.labels[7] == -1 and not g.features[7].any()


def test_missing_archive_exits_3(tmp_path, capsys):
    assert _module().main(["--root", str(tmp_path), "--name", "nope", "--out", str(tmp_path / "x")]) == 3
