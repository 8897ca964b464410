"""Graph reconstruction: a graph auto-encoder whose MLP decoder maps an embedding to
independent edge probabilities over a fixed set of ``n_max`` node slots. Training aligns
each ground-truth graph to the prediction with max-pool matching, then applies binary
cross-entropy to the aligned slots. The decoder is afterwards fine-tuned on embeddings
obtained from the target model."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .graphs import Graph
from .matching import CLAMP_EPS, aligned_target, max_pool_match, slots_to_matrix, triu_slots
from .metrics import SIMILARITIES, STATISTICS, profile_similarities, wl_kernel
from .models import EncoderConfig, GraphEncoder, TrainingError, collate, size_batches

log = logging.getLogger(__name__)


class EdgeDecoder(nn.Module):
    def __init__(self, in_dim: int, n_max: int, hidden=(256, 512)):
        super().__init__()
        self.n_max = n_max
        self.in_dim = in_dim
        layers, prev = [], in_dim
        for width in hidden:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        self.out = nn.Linear(prev, n_max * (n_max - 1) // 2)
        self.body = nn.Sequential(*layers)

    def forward(self, h):
        return torch.sigmoid(self.out(self.body(h)))


@dataclass
class ReconConfig:
    hidden_dim: int = 192
    decoder_hidden: tuple = (256, 512)
    epochs: int = 10
    finetune_epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 32
    threshold: float = 0.5
    max_nodes: int | None = None
    match_iterations: int = 30
    seed: int = 0


@dataclass
class GraphAutoEncoder:
    encoder: GraphEncoder
    decoder: EdgeDecoder
    n_max: int
    threshold: float = 0.5
    history: list[float] = field(default_factory=list)
    finetune_history: list[float] = field(default_factory=list)

    @torch.no_grad()
    def reconstruct(self, h) -> Graph:
        return decode(self.decoder, h, self.threshold)[1]


def decode(decoder: EdgeDecoder, h, threshold: float = 0.5) -> tuple[np.ndarray, Graph]:
    """Symmetric edge-probability matrix and the thresholded graph with isolated slots dropped."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    h = np.asarray(h, dtype=np.float32)
    if not np.all(np.isfinite(h)):
        raise ValueError("embedding contains non-finite values")
    decoder.eval()
    with torch.no_grad():
        slots = decoder(torch.as_tensor(h[None]))[0].numpy().astype(float)
    prob = slots_to_matrix(slots, decoder.n_max)
    return prob, graph_from_probabilities(prob, threshold)


def graph_from_probabilities(prob: np.ndarray, threshold: float = 0.5) -> Graph:
    adj = (prob >= threshold).astype(np.float32)
    np.fill_diagonal(adj, 0)
    keep = np.flatnonzero(adj.sum(1) > 0)
    adj = adj[np.ix_(keep, keep)]
    return Graph.from_adjacency(adj, np.ones((len(keep), 1), dtype=np.float32))


def _check_sizes(graphs: Sequence[Graph], n_max: int):
    too_big = [g.num_nodes for g in graphs if g.num_nodes > n_max]
    if too_big:
        raise ValueError(f"{len(too_big)} graphs exceed n_max={n_max} (largest {max(too_big)})")


def _matched_targets(graphs: Sequence[Graph], probs: np.ndarray, n_max: int, iterations: int) -> np.ndarray:
    r, c = triu_slots(n_max)
    out = np.zeros_like(probs)
    for b, (g, p) in enumerate(zip(graphs, probs)):
        pm = slots_to_matrix(p, n_max)
        match = max_pool_match(g.adjacency, pm, iterations)
        out[b] = aligned_target(g.adjacency, match.assignment)[r, c]
    return out


def _fit(decoder: EdgeDecoder, graphs: Sequence[Graph], embed, params, epochs: int, lr: float,
         batch_size: int, iterations: int, rng: np.random.Generator) -> list[float]:
    """Shared loop: embed -> decode -> match (held fixed) -> clamped BCE -> step."""
    opt = torch.optim.Adam(params, lr=lr)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for idx in size_batches(graphs, batch_size, shuffle_rng=rng):
            batch_graphs = [graphs[i] for i in idx]
            probs = decoder(embed(idx, batch_graphs))
            targets = _matched_targets(batch_graphs, probs.detach().numpy().astype(float),
                                       decoder.n_max, iterations)
            loss = F.binary_cross_entropy(probs.clamp(CLAMP_EPS, 1 - CLAMP_EPS),
                                          torch.as_tensor(targets, dtype=probs.dtype))
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite reconstruction loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(graphs))
        log.debug("reconstruction epoch %d loss %.4f", epoch, history[-1])
    return history


def train_autoencoder(aux: Sequence[Graph], config: ReconConfig | None = None) -> GraphAutoEncoder:
    """Jointly train a mean-pool SAGE encoder and the edge decoder on the auxiliary graphs."""
    config = config or ReconConfig()
    n_max = config.max_nodes or max(g.num_nodes for g in aux)
    _check_sizes(aux, n_max)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    enc = GraphEncoder(EncoderConfig(in_dim=aux[0].feature_dim, hidden_dim=config.hidden_dim,
                                     pooling="mean", max_nodes=n_max))
    dec = EdgeDecoder(config.hidden_dim, n_max, config.decoder_hidden)
    slots = n_max * (n_max - 1) / 2
    density = float(np.clip(np.mean([g.num_edges / slots for g in aux]), 1e-4, 0.5))
    with torch.no_grad():
        dec.out.bias.fill_(float(np.log(density / (1 - density))))

    def embed(idx, graphs):
        return enc(collate(graphs))[0]

    enc.train()
    dec.train()
    history = _fit(dec, aux, embed, list(enc.parameters()) + list(dec.parameters()), config.epochs,
                   config.lr, config.batch_size, config.match_iterations, rng)
    enc.eval()
    dec.eval()
    return GraphAutoEncoder(enc, dec, n_max, config.threshold, history)


def fine_tune_decoder(ae: GraphAutoEncoder, aux: Sequence[Graph], target, epochs: int = 10,
                      lr: float = 1e-3, batch_size: int = 32, iterations: int = 30, seed: int = 0,
                      embeddings: np.ndarray | None = None) -> GraphAutoEncoder:
    """Return a copy of ``ae`` whose decoder is adapted to target-model embeddings.

    The auto-encoder's own encoder is not used; embeddings come from querying ``target``.
    """
    if target.embedding_dim != ae.decoder.in_dim:
        raise ValueError(f"target embedding dimension {target.embedding_dim} differs from decoder "
                         f"input {ae.decoder.in_dim}")
    _check_sizes(aux, ae.n_max)
    tuned = GraphAutoEncoder(ae.encoder, copy.deepcopy(ae.decoder), ae.n_max, ae.threshold,
                             list(ae.history))
    if epochs == 0:
        return tuned
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    if embeddings is None:
        embeddings = target.encode_many(aux)
    emb = torch.as_tensor(np.asarray(embeddings, dtype=np.float32))
    tuned.decoder.train()
    tuned.finetune_history = _fit(tuned.decoder, aux, lambda idx, _: emb[idx],
                                  tuned.decoder.parameters(), epochs, lr, batch_size, iterations, rng)
    tuned.decoder.eval()
    return tuned


def _nonempty(g: Graph) -> Graph:
    # an all-below-threshold decode is scored as a single isolated node
    return g if g.num_nodes else Graph(1, np.zeros((0, 2), np.int64), np.ones((1, 1), np.float32))


def evaluate_reconstruction(ae: GraphAutoEncoder, targets: Sequence[Graph], embeddings: np.ndarray,
                            wl_iterations: int = 3) -> dict:
    """Mean WL kernel and the 4 x 3 statistic-similarity grid over target graphs."""
    wl, grid = [], {s: {k: [] for k in SIMILARITIES} for s in STATISTICS}
    recon_sizes = []
    for g, h in zip(targets, embeddings):
        rec = _nonempty(ae.reconstruct(h))
        recon_sizes.append(rec.num_nodes)
        wl.append(wl_kernel(rec, g, wl_iterations))
        for s, row in profile_similarities(g, rec).items():
            for k, v in row.items():
                grid[s][k].append(v)
    return {
        "wl_kernel": float(np.mean(wl)),
        "stats": {s: {k: float(np.mean(v)) for k, v in row.items()} for s, row in grid.items()},
        "mean_reconstructed_nodes": float(np.mean(recon_sizes)),
        "mean_target_nodes": float(np.mean([g.num_nodes for g in targets])),
    }
