"""Whole-graph embedding models: 3-layer SAGE message passing followed by a pooling head.

Graphs are processed as dense, zero-padded batches with a node mask. Hierarchical
heads (DiffPool, MinCutPool) give each graph its own cluster count, implemented by
masking the surplus assignment columns before the softmax, so a padded batch
reproduces the per-graph outputs.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .graphs import Graph

log = logging.getLogger(__name__)

POOLINGS = ("mean", "diffpool", "mincut")
POOL_RATIOS = {"diffpool": 0.25, "mincut": 0.5}
EPS = 1e-15


class TrainingError(RuntimeError):
    pass


# --------------------------------------------------------------------------- batching


@dataclass
class Batch:
    x: torch.Tensor       # (B, N, F)
    adj: torch.Tensor     # (B, N, N)
    mask: torch.Tensor    # (B, N) bool
    num_nodes: torch.Tensor  # (B,)

    def __len__(self):
        return self.x.shape[0]


def collate(graphs: Sequence[Graph], dtype=torch.float32) -> Batch:
    n_max = max(g.num_nodes for g in graphs)
    d = graphs[0].feature_dim
    x = torch.zeros(len(graphs), n_max, d, dtype=dtype)
    adj = torch.zeros(len(graphs), n_max, n_max, dtype=dtype)
    mask = torch.zeros(len(graphs), n_max, dtype=torch.bool)
    for b, g in enumerate(graphs):
        n = g.num_nodes
        x[b, :n] = torch.tensor(g.features, dtype=dtype)
        if g.num_edges:
            e = torch.tensor(g.edges)
            adj[b, e[:, 0], e[:, 1]] = 1.0
            adj[b, e[:, 1], e[:, 0]] = 1.0
        mask[b, :n] = True
    sizes = torch.tensor([g.num_nodes for g in graphs])
    return Batch(x, adj, mask, sizes)


def size_batches(graphs: Sequence[Graph], batch_size: int, max_cells: int = 2_000_000,
                 shuffle_rng: np.random.Generator | None = None) -> Iterator[list[int]]:
    """Yield index groups of similar-size graphs, capping ``B * N_max**2``.

    Sorting by size keeps padding small; ``shuffle_rng`` shuffles batch order
    (and ties) for training.
    """
    sizes = np.array([g.num_nodes for g in graphs])
    if shuffle_rng is not None:
        jitter = shuffle_rng.permutation(len(graphs))
        order = np.lexsort((jitter, sizes))
    else:
        order = np.argsort(sizes, kind="stable")
    groups, cur = [], []
    for idx in order:
        n = sizes[idx]
        if cur and (len(cur) >= batch_size or (len(cur) + 1) * n * n > max_cells):
            groups.append(cur)
            cur = []
        cur.append(int(idx))
    if cur:
        groups.append(cur)
    if shuffle_rng is not None:
        shuffle_rng.shuffle(groups)
    yield from groups


# --------------------------------------------------------------------------- building blocks


ACTIVATIONS = {"relu": F.relu, "tanh": torch.tanh, "elu": F.elu, "identity": lambda t: t}


def mean_neighbors(h: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
    """Weighted mean of neighbor rows; isolated nodes receive a zero message."""
    deg = adj.sum(-1, keepdim=True)
    return (adj @ h) / deg.clamp(min=1.0)


def message_passing_layer(h, adj, w_self, w_neigh, bias=None, activation="relu"):
    """One SAGE-style update: ``act(H W_self + mean_nbr(H) W_neigh + b)``.

    Works on numpy arrays or tensors, single graphs (n, d) or batches (B, n, d).
    Weights are laid out ``(d_in, d_out)``.
    """
    as_numpy = isinstance(h, np.ndarray)
    h, adj, w_self, w_neigh = (torch.as_tensor(np.array(t) if isinstance(t, np.ndarray) else t)
                               for t in (h, adj, w_self, w_neigh))
    adj = adj.to(h.dtype)
    out = h @ w_self.to(h.dtype) + mean_neighbors(h, adj) @ w_neigh.to(h.dtype)
    if bias is not None:
        out = out + torch.as_tensor(bias, dtype=h.dtype)
    act = ACTIVATIONS[activation] if isinstance(activation, str) else activation
    out = act(out)
    return out.numpy() if as_numpy else out


class SAGELayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, activation: str | None = "relu"):
        super().__init__()
        self.lin_self = nn.Linear(in_dim, out_dim, bias=False)
        self.lin_neigh = nn.Linear(in_dim, out_dim)
        self.activation = activation

    def forward(self, h, adj, mask=None):
        out = self.lin_self(h) + self.lin_neigh(mean_neighbors(h, adj))
        if self.activation:
            out = ACTIVATIONS[self.activation](out)
        if mask is not None:
            out = out * mask.unsqueeze(-1).to(out.dtype)
        return out


def mean_pool(h, mask=None):
    """Column-wise mean of node embeddings (over valid nodes when masked)."""
    if isinstance(h, np.ndarray):
        if h.shape[0] == 0:
            raise ValueError("cannot mean-pool an empty graph")
        return h.mean(axis=0)
    if mask is None:
        if h.shape[-2] == 0:
            raise ValueError("cannot mean-pool an empty graph")
        return h.mean(dim=-2)
    m = mask.to(h.dtype).unsqueeze(-1)
    count = m.sum(dim=-2)
    if torch.any(count == 0):
        raise ValueError("cannot mean-pool an empty graph")
    return (h * m).sum(dim=-2) / count


def coarsen(h, adj, s):
    """``H' = S^T H`` and ``A' = S^T A S``."""
    st = s.transpose(-1, -2)
    return st @ h, st @ adj @ s


def masked_softmax(logits, node_mask=None, cluster_mask=None):
    if cluster_mask is not None:
        logits = logits.masked_fill(~cluster_mask.unsqueeze(-2), float("-inf"))
    s = torch.softmax(logits, dim=-1)
    if node_mask is not None:
        s = s * node_mask.unsqueeze(-1).to(s.dtype)
    return s


def _frob(t):
    return torch.sqrt((t ** 2).sum(dim=(-1, -2)) + EPS)


def diffpool_losses(adj, s, node_mask=None):
    """Link-prediction ``||A - S S^T||_F`` and mean per-node assignment entropy."""
    link = _frob(adj - s @ s.transpose(-1, -2))
    ent = -(s * torch.log(s + EPS)).sum(-1)
    if node_mask is None:
        ent = ent.mean(-1)
    else:
        m = node_mask.to(s.dtype)
        ent = (ent * m).sum(-1) / m.sum(-1).clamp(min=1)
    return {"link": link.mean(), "entropy": ent.mean()}


def mincut_losses(adj, s, cluster_mask=None):
    """Normalized-cut ``-tr(S^T A S)/tr(S^T D S)`` and orthogonality ``||S^TS/||S^TS|| - I/sqrt(m)||``."""
    deg = adj.sum(-1)
    num = torch.einsum("...ik,...ij,...jk->...", s, adj, s)
    den = torch.einsum("...ik,...i,...ik->...", s, deg, s)
    cut = -num / den.clamp(min=EPS)
    ss = s.transpose(-1, -2) @ s
    if cluster_mask is None:
        eye = torch.eye(ss.shape[-1], dtype=s.dtype).expand_as(ss)
        m = torch.full(ss.shape[:-2], float(ss.shape[-1]), dtype=s.dtype)
    else:
        cm = cluster_mask.to(s.dtype)
        eye = torch.diag_embed(cm)
        m = cm.sum(-1)
    ortho = _frob(ss / _frob(ss)[..., None, None] - eye / torch.sqrt(m)[..., None, None])
    return {"cut": cut.mean(), "ortho": ortho.mean()}


def hierarchical_pool_layer(h, adj, s_logits, kind: str):
    """Coarsen one graph given assignment logits ``(n, m)``.

    Returns ``(H', A', aux_losses, S)`` with ``S = softmax(s_logits)``.
    """
    h, adj, s_logits = (torch.as_tensor(t) for t in (h, adj, s_logits))
    n, m = s_logits.shape[-2:]
    if not 1 <= m < n:
        raise ValueError(f"cluster count m={m} must satisfy 1 <= m < n={n}")
    s = torch.softmax(s_logits, dim=-1)
    h2, a2 = coarsen(h, adj.to(s.dtype), s)
    if kind == "diffpool":
        aux = diffpool_losses(adj.to(s.dtype), s)
    elif kind == "mincut":
        aux = mincut_losses(adj.to(s.dtype), s)
    else:
        raise ValueError(f"unknown hierarchical pooling {kind!r}")
    return h2, a2, aux, s


def cluster_counts(num_nodes: torch.Tensor, ratio: float, cap: int) -> torch.Tensor:
    counts = torch.ceil(num_nodes.to(torch.float64) * ratio - 1e-9).to(torch.long)
    return counts.clamp(min=1, max=cap)


# --------------------------------------------------------------------------- encoder


@dataclass
class EncoderConfig:
    in_dim: int
    num_classes: int = 2
    hidden_dim: int = 192
    pooling: str = "mean"
    mp_layers: int = 3
    max_nodes: int = 64
    activation: str = "relu"

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.hidden_dim <= 0:
            raise ValueError("embedding dimension must be positive")

    @property
    def ratios(self) -> tuple[float, float] | None:
        r = POOL_RATIOS.get(self.pooling)
        return None if r is None else (r, r * r)


class GraphEncoder(nn.Module):
    """Node embedding (SAGE x mp_layers) + pooling head -> ``(B, hidden_dim)``."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        d, act = config.hidden_dim, config.activation
        dims = [config.in_dim] + [d] * config.mp_layers
        self.convs = nn.ModuleList(SAGELayer(a, b, act) for a, b in zip(dims, dims[1:]))
        if config.pooling != "mean":
            r1, r2 = config.ratios
            self.caps = (max(1, math.ceil(r1 * config.max_nodes)), max(1, math.ceil(r2 * config.max_nodes)))
            if config.pooling == "diffpool":
                self.assign = nn.ModuleList([SAGELayer(d, self.caps[0], None), SAGELayer(d, self.caps[1], None)])
            else:
                self.assign = nn.ModuleList([
                    nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, c)) for c in self.caps
                ])
            self.coarse_convs = nn.ModuleList([SAGELayer(d, d, act), SAGELayer(d, d, act)])

    @property
    def embedding_dim(self) -> int:
        return self.config.hidden_dim

    def forward(self, batch: Batch, return_assignments: bool = False):
        h, adj, mask = batch.x, batch.adj, batch.mask
        for conv in self.convs:
            h = conv(h, adj, mask)
        aux: dict[str, torch.Tensor] = {}
        assignments = []
        if self.config.pooling == "mean":
            out = mean_pool(h, mask)
        else:
            ratios = self.config.ratios
            node_mask = mask
            for level in range(2):
                counts = cluster_counts(batch.num_nodes, ratios[level], self.caps[level])
                cmask = torch.arange(self.caps[level]).unsqueeze(0) < counts.unsqueeze(1)
                if self.config.pooling == "diffpool":
                    logits = self.assign[level](h, adj)
                else:
                    logits = self.assign[level](h)
                s = masked_softmax(logits, node_mask, cmask)
                assignments.append(s)
                if self.config.pooling == "diffpool":
                    for k, v in diffpool_losses(adj, s, node_mask).items():
                        aux[f"{k}{level}"] = v
                else:
                    for k, v in mincut_losses(adj, s, cmask).items():
                        aux[f"{k}{level}"] = v
                h, adj = coarsen(h, adj, s)
                node_mask = cmask
                h = self.coarse_convs[level](h, adj, node_mask)
            out = mean_pool(h, node_mask)
        if return_assignments:
            return out, aux, assignments
        return out, aux


class GraphClassifier(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.encoder = GraphEncoder(config)
        d = config.hidden_dim
        self.head = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, config.num_classes))

    def forward(self, batch: Batch):
        emb, aux = self.encoder(batch)
        return self.head(emb), emb, aux


def total_loss(logits, labels, aux: dict) -> torch.Tensor:
    loss = F.cross_entropy(logits, labels)
    for v in aux.values():
        loss = loss + v
    return loss


# --------------------------------------------------------------------------- trained target


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    patience: int = 10
    min_delta: float = 1e-4
    max_cells: int = 2_000_000


@dataclass
class TrainedEncoder:
    """Trained target model; ``encode`` is the black-box embedding API."""

    model: GraphClassifier
    config: EncoderConfig
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.model.eval()

    @property
    def embedding_dim(self) -> int:
        return self.config.hidden_dim

    def _check(self, g: Graph):
        if g.feature_dim != self.config.in_dim:
            raise ValueError(f"feature dimension {g.feature_dim} does not match encoder input {self.config.in_dim}")
        if g.num_nodes == 0:
            raise ValueError("cannot encode an empty graph")

    @torch.no_grad()
    def encode(self, g: Graph) -> np.ndarray:
        self._check(g)
        emb, _ = self.model.encoder(collate([g]))
        return emb[0].numpy().copy()

    @torch.no_grad()
    def encode_many(self, graphs: Sequence[Graph], batch_size: int = 64) -> np.ndarray:
        for g in graphs:
            self._check(g)
        out = np.zeros((len(graphs), self.embedding_dim), dtype=np.float32)
        for idx in size_batches(graphs, batch_size):
            emb, _ = self.model.encoder(collate([graphs[i] for i in idx]))
            out[idx] = emb.numpy()
        return out

    @torch.no_grad()
    def classify_embeddings(self, embeddings: np.ndarray) -> np.ndarray:
        logits = self.model.head(torch.as_tensor(np.asarray(embeddings), dtype=torch.float32))
        return logits.argmax(-1).numpy()

    @torch.no_grad()
    def predict(self, graphs: Sequence[Graph]) -> np.ndarray:
        return self.classify_embeddings(self.encode_many(graphs))

    def accuracy(self, graphs: Sequence[Graph]) -> float:
        labels = np.array([g.label for g in graphs])
        return float((self.predict(graphs) == labels).mean())

    def save(self, path) -> None:
        torch.save({"config": asdict(self.config), "state": self.model.state_dict(),
                    "metadata": self.metadata}, path)

    @classmethod
    def load(cls, path) -> "TrainedEncoder":
        blob = torch.load(path, weights_only=False)
        config = EncoderConfig(**blob["config"])
        model = GraphClassifier(config)
        model.load_state_dict(blob["state"])
        return cls(model, config, blob.get("metadata", {}))


def train_target(graphs: Sequence[Graph], config: EncoderConfig, train: TrainConfig | None = None,
                 seed: int = 0) -> TrainedEncoder:
    """Train encoder + classification head with cross-entropy plus pooling auxiliary losses."""
    train = train or TrainConfig()
    labels = np.array([g.label for g in graphs])
    if len(np.unique(labels)) < 2:
        raise ValueError("target training needs at least two classes")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = GraphClassifier(config)
    opt = torch.optim.Adam(model.parameters(), lr=train.lr)
    history, best, stale = [], math.inf, 0
    start = time.time()
    for epoch in range(train.epochs):
        model.train()
        total, count = 0.0, 0
        for idx in size_batches(graphs, train.batch_size, train.max_cells, shuffle_rng=rng):
            batch = collate([graphs[i] for i in idx])
            y = torch.as_tensor(labels[idx])
            logits, _, aux = model(batch)
            loss = total_loss(logits, y, aux)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}: ce={F.cross_entropy(logits, y).item()}, "
                    + ", ".join(f"{k}={v.item():.4g}" for k, v in aux.items())
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        epoch_loss = total / count
        history.append(epoch_loss)
        log.debug("target epoch %d loss %.4f", epoch, epoch_loss)
        if epoch_loss < best - train.min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= train.patience:
                break
    enc = TrainedEncoder(model, config, {
        "epochs": len(history), "loss_history": history, "final_loss": history[-1],
        "optimizer": "adam", "lr": train.lr, "batch_size": train.batch_size, "seed": seed,
        "seconds": round(time.time() - start, 2),
    })
    return enc
