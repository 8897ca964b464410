import numpy as np
import pytest
import torch

from graphleak.graphs import Graph
from graphleak.models import (
    POOLINGS,
    EncoderConfig,
    GraphEncoder,
    SAGELayer,
    TrainConfig,
    TrainedEncoder,
    TrainingError,
    cluster_counts,
    collate,
    coarsen,
    diffpool_losses,
    hierarchical_pool_layer,
    mean_pool,
    message_passing_layer,
    mincut_losses,
    size_batches,
    total_loss,
    train_target,
)
from graphleak.synthetic import make_dataset

from oracles import finite_difference_check


def random_graph(rng, n, d=4, p=0.4):
    a = np.triu(rng.random((n, n)) < p, 1)
    return Graph.from_adjacency((a | a.T).astype(float), rng.normal(size=(n, d)).astype(np.float32))


def small_encoder(pooling, d=4, hidden=16, max_nodes=12, seed=0):
    torch.manual_seed(seed)
    return GraphEncoder(EncoderConfig(in_dim=d, hidden_dim=hidden, pooling=pooling, max_nodes=max_nodes)).eval()


# ----------------------------------------------------------------------------- message passing


def test_identity_update_returns_input():
    h = np.array([[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]])
    adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    out = message_passing_layer(h, adj, np.eye(2), np.zeros((2, 2)), activation="identity")
    np.testing.assert_allclose(out, h)


def test_two_nodes_swap_rows():
    h = np.array([[1.0, 2.0], [5.0, 7.0]])
    adj = np.array([[0, 1], [1, 0]], dtype=float)
    out = message_passing_layer(h, adj, np.zeros((2, 2)), np.eye(2), activation="identity")
    np.testing.assert_allclose(out, h[::-1])


def test_isolated_node_gets_zero_message():
    h = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = message_passing_layer(h, np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), activation="identity")
    np.testing.assert_allclose(out, 0)


def test_message_passing_equivariance():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 7)
    w1, w2 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    perm = rng.permutation(7)
    out = message_passing_layer(g.features.astype(float), g.adjacency, w1, w2)
    gp = g.permute(perm)
    out_p = message_passing_layer(gp.features.astype(float), gp.adjacency, w1, w2)
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


def test_sage_layer_matches_functional_form():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 6)
    layer = SAGELayer(4, 3, "relu")
    h = torch.tensor(g.features)
    adj = torch.tensor(g.adjacency)
    expected = message_passing_layer(h, adj, layer.lin_self.weight.T, layer.lin_neigh.weight.T,
                                     layer.lin_neigh.bias)
    torch.testing.assert_close(layer(h, adj), expected)


# ----------------------------------------------------------------------------- pooling


def test_mean_pool_examples():
    np.testing.assert_allclose(mean_pool(np.array([[0.0, 2.0], [2.0, 0.0]])), [1.0, 1.0])
    np.testing.assert_allclose(mean_pool(np.tile([3.0, -1.0], (5, 1))), [3.0, -1.0])
    with pytest.raises(ValueError):
        mean_pool(np.zeros((0, 2)))


def test_hard_assignment_sums_columns():
    h = torch.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    s = torch.tensor([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    h2, _ = coarsen(h, torch.zeros(3, 3), s)
    torch.testing.assert_close(h2[0], h.sum(0))


def test_ring_coarsening_off_diagonal_is_two():
    ring = torch.tensor([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], dtype=torch.float64)
    s = torch.tensor([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=torch.float64)
    _, a2 = coarsen(torch.zeros(4, 1, dtype=torch.float64), ring, s)
    # hand product: each pair has 1 internal edge (counted twice) and 2 edges to the other pair
    torch.testing.assert_close(a2, torch.tensor([[2.0, 2.0], [2.0, 2.0]], dtype=torch.float64))


@pytest.mark.parametrize("kind", ["diffpool", "mincut"])
def test_hierarchical_layer_is_permutation_consistent(kind):
    rng = np.random.default_rng(2)
    g = random_graph(rng, 6)
    logits = torch.as_tensor(rng.normal(size=(6, 3)))
    h = torch.tensor(g.features, dtype=torch.float64)
    adj = torch.tensor(g.adjacency, dtype=torch.float64)
    h2, a2, aux, s = hierarchical_pool_layer(h, adj, logits, kind)
    torch.testing.assert_close(s.sum(-1), torch.ones(6, dtype=torch.float64))
    perm = torch.as_tensor(rng.permutation(6))
    h2p, a2p, auxp, _ = hierarchical_pool_layer(h[perm], adj[perm][:, perm], logits[perm], kind)
    torch.testing.assert_close(h2p, h2)
    torch.testing.assert_close(a2p, a2)
    for k in aux:
        torch.testing.assert_close(auxp[k], aux[k])


def test_hierarchical_layer_rejects_too_many_clusters():
    with pytest.raises(ValueError):
        hierarchical_pool_layer(torch.zeros(3, 2), torch.zeros(3, 3), torch.zeros(3, 3), "diffpool")
    with pytest.raises(ValueError):
        hierarchical_pool_layer(torch.zeros(3, 2), torch.zeros(3, 3), torch.zeros(3, 2), "sum")


def test_diffpool_loss_values():
    # A equal to S S^T with one-hot S: zero link loss and zero entropy
    adj = torch.tensor([[1.0, 1.0], [1.0, 1.0]])
    s = torch.tensor([[1.0, 0.0], [1.0, 0.0]])
    aux = diffpool_losses(adj, s)
    assert aux["link"].item() == pytest.approx(0.0, abs=1e-6)
    assert aux["entropy"].item() == pytest.approx(0.0, abs=1e-6)
    uniform = torch.full((4, 2), 0.5)
    assert diffpool_losses(torch.zeros(4, 4), uniform)["entropy"].item() == pytest.approx(np.log(2))


def test_mincut_loss_values():
    # two disjoint edges, each assigned to its own cluster: perfect cut and orthogonal S
    adj = torch.tensor([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=torch.float64)
    s = torch.tensor([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=torch.float64)
    aux = mincut_losses(adj, s)
    assert aux["cut"].item() == pytest.approx(-1.0)
    assert aux["ortho"].item() == pytest.approx(0.0, abs=1e-6)


def test_cluster_counts_round_up_with_floor():
    counts = cluster_counts(torch.tensor([1, 3, 4, 5, 100]), 0.25, cap=16)
    assert counts.tolist() == [1, 1, 1, 2, 16]


# ----------------------------------------------------------------------------- encoder


@pytest.mark.parametrize("pooling", POOLINGS)
def test_encoder_permutation_invariance(pooling):
    rng = np.random.default_rng(3)
    enc = small_encoder(pooling)
    for _ in range(5):
        g = random_graph(rng, int(rng.integers(4, 12)))
        with torch.no_grad():
            base = enc(collate([g]))[0]
            perm = enc(collate([g.permute(rng.permutation(g.num_nodes))]))[0]
        torch.testing.assert_close(perm, base, atol=1e-5, rtol=0)


@pytest.mark.parametrize("pooling", POOLINGS)
def test_batched_equals_unbatched(pooling):
    rng = np.random.default_rng(4)
    enc = small_encoder(pooling)
    graphs = [random_graph(rng, n) for n in (3, 9, 5, 12, 1)]
    with torch.no_grad():
        batched, aux_b, s_b = enc(collate(graphs), return_assignments=True)
        for i, g in enumerate(graphs):
            single = enc(collate([g]))[0][0]
            torch.testing.assert_close(batched[i], single, atol=1e-5, rtol=0)
    for s in s_b:
        rows = s.sum(-1)
        valid = rows > 0
        torch.testing.assert_close(rows[valid], torch.ones_like(rows[valid]), atol=1e-6, rtol=0)


@pytest.mark.parametrize("pooling", POOLINGS)
def test_gradients_match_finite_differences(pooling):
    rng = np.random.default_rng(5)
    g = random_graph(rng, 5, p=0.6)
    torch.manual_seed(0)
    from graphleak.models import GraphClassifier

    model = GraphClassifier(EncoderConfig(in_dim=4, hidden_dim=6, pooling=pooling, max_nodes=5)).double()
    batch = collate([g], dtype=torch.float64)
    y = torch.tensor([1])

    def loss_fn():
        logits, _, aux = model(batch)
        return total_loss(logits, y, aux)

    params = [p for p in model.parameters()]
    err = finite_difference_check(loss_fn, params, max_coords=20)
    assert err <= 1e-3


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(in_dim=3, pooling="sum")
    with pytest.raises(ValueError):
        EncoderConfig(in_dim=3, hidden_dim=0)
    assert EncoderConfig(in_dim=3, pooling="diffpool").ratios == (0.25, 0.0625)
    assert EncoderConfig(in_dim=3, pooling="mincut").ratios == (0.5, 0.25)


def test_size_batches_cover_every_graph_once():
    rng = np.random.default_rng(6)
    graphs = [random_graph(rng, int(n)) for n in rng.integers(1, 30, size=50)]
    groups = list(size_batches(graphs, 8, max_cells=2000, shuffle_rng=np.random.default_rng(0)))
    flat = sorted(i for grp in groups for i in grp)
    assert flat == list(range(50))
    for grp in groups:
        n = max(graphs[i].num_nodes for i in grp)
        assert len(grp) <= 8 and (len(grp) == 1 or len(grp) * n * n <= 2000)


# ----------------------------------------------------------------------------- training


@pytest.fixture(scope="module")
def molecule_data():
    ds, _ = make_dataset("MOL", 160, max_nodes=16, seed=0)
    return ds


@pytest.fixture(scope="module")
def trained(molecule_data):
    cfg = EncoderConfig(in_dim=molecule_data.feature_dim, hidden_dim=32, pooling="mean", max_nodes=16)
    return train_target(list(molecule_data)[:120], cfg, TrainConfig(epochs=15, patience=15), seed=0)


def test_training_reduces_loss(trained):
    hist = trained.metadata["loss_history"]
    assert hist[-1] < hist[0]
    assert trained.metadata["epochs"] == len(hist)


def test_encode_is_deterministic_and_finite(trained, molecule_data):
    g = molecule_data[130]
    a, b = trained.encode(g), trained.encode(g)
    assert a.shape == (32,) and np.array_equal(a, b) and np.isfinite(a).all()
    many = trained.encode_many(list(molecule_data)[120:])
    np.testing.assert_allclose(many[10], a, atol=1e-5)


def test_encode_rejects_wrong_features(trained):
    with pytest.raises(ValueError):
        trained.encode(Graph(2, [(0, 1)], np.ones((2, 3))))


def test_checkpoint_roundtrip(trained, molecule_data, tmp_path):
    trained.save(tmp_path / "enc.pt")
    back = TrainedEncoder.load(tmp_path / "enc.pt")
    g = molecule_data[140]
    np.testing.assert_array_equal(back.encode(g), trained.encode(g))
    assert back.metadata["seed"] == 0


def test_shuffled_labels_give_majority_level_accuracy(molecule_data):
    rng = np.random.default_rng(0)
    labels = rng.permutation([g.label for g in molecule_data])
    graphs = [Graph(g.num_nodes, g.edges, g.features, int(y)) for g, y in zip(molecule_data, labels)]
    cfg = EncoderConfig(in_dim=molecule_data.feature_dim, hidden_dim=16, max_nodes=16)
    enc = train_target(graphs[:100], cfg, TrainConfig(epochs=10), seed=0)
    test = graphs[100:]
    majority = max(np.mean([g.label for g in test]), 1 - np.mean([g.label for g in test]))
    # no signal: accuracy cannot be far above the majority rate
    assert enc.accuracy(test) <= majority + 0.12


def test_training_needs_two_classes():
    g = Graph(2, [(0, 1)], np.ones((2, 1)))
    with pytest.raises(ValueError):
        train_target([g] * 5, EncoderConfig(in_dim=1, hidden_dim=4))


def test_non_finite_loss_aborts():
    graphs = [Graph(2, [(0, 1)], np.full((2, 1), np.inf), label=i % 2) for i in range(4)]
    with pytest.raises(TrainingError):
        train_target(graphs, EncoderConfig(in_dim=1, hidden_dim=4), TrainConfig(epochs=1))


def test_hierarchical_training_records_aux_losses(molecule_data):
    cfg = EncoderConfig(in_dim=molecule_data.feature_dim, hidden_dim=16, pooling="mincut", max_nodes=16)
    enc = train_target(list(molecule_data)[:40], cfg, TrainConfig(epochs=2), seed=1)
    assert np.isfinite(enc.metadata["final_loss"])
