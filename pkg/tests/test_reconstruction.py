import numpy as np
import pytest
import torch

from graphleak import reconstruction as rc
from graphleak.graphs import Graph
from graphleak.matching import slots_to_matrix
from graphleak.metrics import SIMILARITIES, STATISTICS
from graphleak.models import EncoderConfig, TrainConfig, train_target
from graphleak.synthetic import make_dataset


@pytest.fixture(scope="module")
def data():
    ds, _ = make_dataset("REC", 60, kind="molecule", min_nodes=5, max_nodes=10, seed=1)
    return list(ds)


@pytest.fixture(scope="module")
def autoencoder(data):
    return rc.train_autoencoder(data[:40], rc.ReconConfig(hidden_dim=16, decoder_hidden=(32,), epochs=8))


def fixed_decoder(n_max, slot_values):
    dec = rc.EdgeDecoder(2, n_max, hidden=())
    with torch.no_grad():
        dec.out.weight.zero_()
        p = torch.as_tensor(np.asarray(slot_values, dtype=np.float32))
        dec.out.bias.copy_(torch.log(p / (1 - p)))
    return dec


def test_decode_thresholds_and_drops_isolated_slots():
    # slots (0,1) (0,2) (0,3) (1,2) (1,3) (2,3): edges 0-1 and 1-2 survive, slot 3 is isolated
    dec = fixed_decoder(4, [0.9, 0.2, 0.1, 0.7, 0.3, 0.4])
    prob, g = rc.decode(dec, np.zeros(2))
    np.testing.assert_allclose(prob, prob.T)
    assert prob[0, 1] == pytest.approx(0.9, abs=1e-6) and np.all(np.diag(prob) == 0)
    assert g.num_nodes == 3 and sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 2)]
    _, lower = rc.decode(dec, np.zeros(2), threshold=0.35)
    assert lower.num_edges == 3


def test_decode_validation():
    dec = fixed_decoder(3, [0.5, 0.5, 0.5])
    for t in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            rc.decode(dec, np.zeros(2), threshold=t)
    with pytest.raises(ValueError):
        rc.decode(dec, np.array([np.nan, 0.0]))


def test_all_low_probabilities_give_empty_graph():
    g = rc.graph_from_probabilities(slots_to_matrix(np.full(10, 0.1), 5))
    assert g.num_nodes == 0


def test_training_reduces_loss(autoencoder):
    h = autoencoder.history
    assert len(h) == 8 and h[-1] < h[0]
    assert autoencoder.n_max == 10


def test_oversized_graph_rejected(data):
    with pytest.raises(ValueError):
        rc.train_autoencoder(data, rc.ReconConfig(max_nodes=6, epochs=1))


def test_single_graph_overfits():
    ring = Graph(6, [(i, (i + 1) % 6) for i in range(6)], np.ones((6, 1)))
    ae = rc.train_autoencoder([ring], rc.ReconConfig(hidden_dim=8, decoder_hidden=(16,), epochs=300,
                                                      lr=1e-2, batch_size=1))
    assert ae.history[-1] < 0.02
    h = ae.encoder(rc.collate([ring]))[0][0].detach().numpy()
    rec = ae.reconstruct(h)
    assert rec.num_nodes == 6 and sorted(rec.degrees.tolist()) == [2] * 6


def test_fine_tune_zero_epochs_is_identity(autoencoder, data):
    target = train_target(data[:20], EncoderConfig(in_dim=data[0].feature_dim, hidden_dim=16),
                          TrainConfig(epochs=1))
    tuned = rc.fine_tune_decoder(autoencoder, data[40:], target, epochs=0)
    for a, b in zip(tuned.decoder.parameters(), autoencoder.decoder.parameters()):
        assert torch.equal(a, b)
    assert tuned.decoder is not autoencoder.decoder


def test_fine_tune_updates_decoder_copy_only(autoencoder, data):
    target = train_target(data[:20], EncoderConfig(in_dim=data[0].feature_dim, hidden_dim=16),
                          TrainConfig(epochs=1))
    before = [p.detach().clone() for p in autoencoder.decoder.parameters()]
    tuned = rc.fine_tune_decoder(autoencoder, data[40:], target, epochs=3)
    assert len(tuned.finetune_history) == 3
    assert any(not torch.equal(a, b) for a, b in zip(tuned.decoder.parameters(), before))
    for a, b in zip(autoencoder.decoder.parameters(), before):
        assert torch.equal(a, b)


def test_fine_tune_dimension_mismatch(autoencoder, data):
    target = train_target(data[:20], EncoderConfig(in_dim=data[0].feature_dim, hidden_dim=12),
                          TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        rc.fine_tune_decoder(autoencoder, data[40:], target)


def test_evaluate_returns_full_grid(autoencoder, data):
    targets = data[40:50]
    emb = autoencoder.encoder(rc.collate(targets))[0].detach().numpy()
    out = rc.evaluate_reconstruction(autoencoder, targets, emb)
    assert 0 <= out["wl_kernel"] <= 1
    assert set(out["stats"]) == set(STATISTICS)
    for row in out["stats"].values():
        assert set(row) == set(SIMILARITIES)
        assert -1e-12 <= row["js"] <= 1 and 0 <= row["wasserstein"] <= 1
    assert out["mean_target_nodes"] == pytest.approx(np.mean([g.num_nodes for g in targets]))
