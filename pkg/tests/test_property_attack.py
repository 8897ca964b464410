import logging

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from graphleak import property_attack as pa
from graphleak.graphs import PROPERTIES, BucketScheme, Graph, build_bucket_scheme


def sized_graphs(sizes):
    # paths of the given sizes: num_nodes, num_edges, diameter and radius all vary with n
    return [Graph(n, [(i, i + 1) for i in range(n - 1)], np.ones((n, 1))) for n in sizes]


class OracleNet(torch.nn.Module):
    """Reads the true class from the first embedding coordinate."""

    def __init__(self, k):
        super().__init__()
        self.k = k
        self.heads = torch.nn.ModuleDict({"num_nodes": torch.nn.Identity()})

    def forward(self, h):
        return {"num_nodes": F.one_hot(h[:, 0].long(), self.k).float()}


def test_training_set_one_sample_per_graph():
    aux = sized_graphs(range(3, 23))
    schemes = pa.make_schemes(aux, 2)
    x, y = pa.build_training_set(aux, None, schemes, embeddings=np.zeros((20, 4)))
    assert x.shape == (20, 4)
    assert set(y) == set(schemes)
    assert all(len(v) == 20 for v in y.values())


def test_density_label_example():
    scheme = build_bucket_scheme(sized_graphs([3, 4]), "density", 2)
    # K4 minus one edge: density 5/6 lies in the upper half of [0, 1]
    g = Graph(4, [(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)], np.ones((4, 1)))
    assert pa.property_labels([g], {"density": scheme})["density"].tolist() == [1]


def test_degenerate_property_skipped_by_make_schemes(caplog):
    aux = [Graph(4, [(0, 1)], np.ones((4, 1)))] * 3
    with caplog.at_level(logging.WARNING):
        schemes = pa.make_schemes(aux, 2)
    assert "num_nodes" not in schemes and "density" in schemes
    assert "skipping property num_nodes" in caplog.text


def test_loss_decreases_and_single_class_head_skipped():
    rng = np.random.default_rng(0)
    aux = sized_graphs(rng.integers(9, 40, size=120))
    schemes = pa.make_schemes(aux, 4)
    # embedding carries the node count, so every size-derived property is learnable
    emb = np.array([[g.num_nodes / 40.0, 1.0] for g in aux], dtype=np.float32)
    emb = np.hstack([emb, rng.normal(scale=0.01, size=(120, 6)).astype(np.float32)])
    _, labels = pa.build_training_set(aux, None, schemes, embeddings=emb)
    attack = pa.train(emb, labels, schemes, epochs=60, seed=0)
    assert attack.skipped == ["density"]  # paths have density in the lowest bucket of [0,1]
    assert sorted(attack.properties) == sorted(p for p in PROPERTIES if p != "density")
    assert attack.history[-1] < attack.history[0]
    acc = attack.evaluate_accuracy(emb, labels)
    assert acc["num_nodes"] > 0.7


def test_head_count_is_five_on_varied_graphs():
    rng = np.random.default_rng(2)
    aux = []
    for n in rng.integers(3, 12, size=40):
        a = np.triu(rng.random((n, n)) < rng.uniform(0.2, 1.0), 1)
        a[np.arange(n - 1), np.arange(1, n)] = True  # keep connected
        aux.append(Graph.from_adjacency((a | a.T).astype(float)))
    schemes = pa.make_schemes(aux, 2)
    _, labels = pa.build_training_set(aux, None, schemes, embeddings=np.zeros((40, 3)))
    attack = pa.train(np.zeros((40, 3)), labels, schemes, epochs=1)
    assert len(attack.net.heads) == len(PROPERTIES) == 5


def test_all_heads_kept_when_not_skipping():
    aux = sized_graphs(range(3, 13))
    schemes = pa.make_schemes(aux, 2)
    _, labels = pa.build_training_set(aux, None, schemes, embeddings=np.zeros((10, 2)))
    attack = pa.train(np.zeros((10, 2)), labels, schemes, epochs=2, skip_single_class=False)
    assert "density" in attack.properties and attack.skipped == []


def test_single_task_matches_joint_loss_formula():
    torch.manual_seed(0)
    out = {"a": torch.randn(5, 3), "b": torch.randn(5, 2)}
    tgt = {"a": torch.tensor([0, 1, 2, 0, 1]), "b": torch.tensor([1, 0, 1, 1, 0])}
    single = pa.joint_loss({"a": out["a"]}, {"a": tgt["a"]})
    torch.testing.assert_close(single, F.cross_entropy(out["a"], tgt["a"]))
    torch.testing.assert_close(pa.joint_loss(out, tgt),
                               F.cross_entropy(out["a"], tgt["a"]) + F.cross_entropy(out["b"], tgt["b"]))


def test_training_requires_a_usable_property():
    aux = sized_graphs([5] * 4)
    schemes = {"density": build_bucket_scheme(aux, "density", 2)}
    _, labels = pa.build_training_set(aux, None, schemes, embeddings=np.zeros((4, 2)))
    with pytest.raises(ValueError):
        pa.train(np.zeros((4, 2)), labels, schemes, epochs=1)


def test_predictions_in_range_and_deterministic():
    aux = sized_graphs(range(3, 33))
    schemes = pa.make_schemes(aux, 8)
    emb = np.random.default_rng(1).normal(size=(30, 5)).astype(np.float32)
    _, labels = pa.build_training_set(aux, None, schemes, embeddings=emb)
    attack = pa.train(emb, labels, schemes, epochs=5)
    p1, p2 = attack.predict(emb), attack.predict(emb)
    for prop, pred in p1.items():
        assert pred.min() >= 0 and pred.max() < 8
        np.testing.assert_array_equal(pred, p2[prop])
    assert attack.evaluate_accuracy(emb, labels) == attack.evaluate_accuracy(emb, labels)
    one = attack.infer(emb[3])
    assert one == {p: int(v[3]) for p, v in p1.items()}
    with pytest.raises(ValueError):
        attack.infer(np.full(5, np.nan))


def test_ties_go_to_lowest_class():
    scheme = BucketScheme.equal_width("num_nodes", 3, 0, 3)
    net = pa.PropertyAttackNet(2, {"num_nodes": 3})
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    attack = pa.PropertyAttack(net, {"num_nodes": scheme})
    assert attack.predict(np.ones((4, 2)))["num_nodes"].tolist() == [0, 0, 0, 0]


def test_perfect_classifier_scores_one():
    labels = np.array([0, 1, 1, 0, 1])
    attack = pa.PropertyAttack(OracleNet(2), {"num_nodes": BucketScheme.equal_width("num_nodes", 2, 0, 1)})
    emb = np.stack([labels, np.zeros(5)], axis=1).astype(np.float32)
    assert attack.evaluate_accuracy(emb, {"num_nodes": labels}) == {"num_nodes": 1.0}


@pytest.mark.parametrize("k, expected", [(2, 0.5), (8, 0.125)])
def test_random_baseline(k, expected):
    assert pa.baseline_random(k) == expected


def test_summarize_baseline():
    aux = sized_graphs([4, 6, 8, 10])  # mean 7 -> upper bucket of [4, 10] split at 7
    scheme = build_bucket_scheme(aux, "num_nodes", 2)
    test = sized_graphs([9, 10, 5, 4])
    assert pa.baseline_summarize(aux, test, scheme) == 0.5
    single = BucketScheme.equal_width("num_nodes", 1, 4, 10)
    assert pa.baseline_summarize(aux, aux, single) == 1.0
