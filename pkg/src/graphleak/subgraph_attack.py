"""Subgraph inference: decide whether a sampled subgraph belongs to the graph behind a
target embedding. A trainable graph encoder embeds the subgraph, the two embeddings are
aggregated, and an MLP scores the pair; encoder and classifier are trained jointly."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .graphs import Graph
from .metrics import roc_auc
from .models import EncoderConfig, GraphEncoder, TrainedEncoder, TrainingError, collate, size_batches
from .sampling import SamplerSpec, sample

log = logging.getLogger(__name__)

STRATEGIES = ("concat", "difference", "distance")


@dataclass(frozen=True, eq=False)
class SubgraphSample:
    target_embedding: np.ndarray
    subgraph: Graph
    label: int
    source: int = -1


def aggregate(h_t, h_s, strategy: str):
    """Attack feature vector from target and subgraph embeddings (numpy or torch, batched or not)."""
    is_torch = torch.is_tensor(h_t)
    if strategy != "concat" and h_t.shape[-1] != h_s.shape[-1]:
        raise ValueError(f"{strategy} needs equal dimensions, got {h_t.shape[-1]} and {h_s.shape[-1]}")
    if strategy == "concat":
        return torch.cat([h_t, h_s], dim=-1) if is_torch else np.concatenate([h_t, h_s], axis=-1)
    if strategy == "difference":
        return h_t - h_s
    if strategy == "distance":
        if is_torch:
            return torch.sqrt(((h_t - h_s) ** 2).sum(-1, keepdim=True) + 1e-12)
        return np.linalg.norm(np.asarray(h_t) - np.asarray(h_s), axis=-1, keepdims=True)
    raise ValueError(f"unknown aggregation strategy {strategy!r}; expected one of {STRATEGIES}")


def feature_dim(strategy: str, d_target: int, d_sub: int) -> int:
    return {"concat": d_target + d_sub, "difference": d_target, "distance": 1}[strategy]


def generate_samples(aux: Sequence[Graph], target: TrainedEncoder | None, spec: SamplerSpec,
                     embeddings: np.ndarray | None = None) -> list[SubgraphSample]:
    """One positive and one negative sample per auxiliary graph.

    The negative subgraph is sampled from a uniformly chosen different graph; whether
    it happens to be contained in the anchor graph is not checked.
    """
    if len(aux) < 2:
        raise ValueError("need at least two auxiliary graphs")
    if embeddings is None:
        embeddings = target.encode_many(aux)
    rng = np.random.default_rng(spec.seed)
    out = []
    for i, g in enumerate(aux):
        pos = sample(g, spec, rng)
        j = int(rng.integers(len(aux) - 1))
        j += j >= i
        neg = sample(aux[j], spec, rng)
        out.append(SubgraphSample(embeddings[i], pos, 1, i))
        out.append(SubgraphSample(embeddings[i], neg, 0, i))
    return out


def mlp(in_dim: int, hidden=(128, 32)) -> nn.Sequential:
    layers, prev = [], in_dim
    for width in hidden:
        layers += [nn.Linear(prev, width), nn.ReLU()]
        prev = width
    layers.append(nn.Linear(prev, 1))
    return nn.Sequential(*layers)


class SubgraphAttackNet(nn.Module):
    """Extractor + aggregation + binary classifier. Returns logits; sigmoid gives the score."""

    def __init__(self, strategy: str, d_target: int, extractor: GraphEncoder | None,
                 d_sub: int | None = None, hidden=(128, 32)):
        super().__init__()
        self.strategy = strategy
        self.extractor = extractor
        d_sub = extractor.embedding_dim if extractor is not None else d_sub
        if strategy != "concat" and d_sub != d_target:
            raise ValueError("extractor output must match the target embedding dimension")
        self.classifier = mlp(feature_dim(strategy, d_target, d_sub), hidden)

    def forward(self, h_t, sub_batch=None, h_s=None):
        if h_s is None:
            h_s, _ = self.extractor(sub_batch)
        return self.classifier(aggregate(h_t, h_s, self.strategy)).squeeze(-1)


@dataclass
class SubgraphAttack:
    net: SubgraphAttackNet
    frozen_extractor: TrainedEncoder | None = None
    history: list[float] = field(default_factory=list)

    @property
    def strategy(self) -> str:
        return self.net.strategy

    @torch.no_grad()
    def scores(self, samples: Sequence[SubgraphSample], target_embeddings: np.ndarray | None = None,
               batch_size: int = 64) -> np.ndarray:
        self.net.eval()
        h_all = np.stack([s.target_embedding for s in samples]) if target_embeddings is None else target_embeddings
        h_all = np.asarray(h_all, dtype=np.float32)
        subs = [s.subgraph for s in samples]
        out = np.zeros(len(samples))
        if self.frozen_extractor is not None:
            h_sub = self.frozen_extractor.encode_many(subs)
            logits = self.net(torch.as_tensor(h_all), h_s=torch.as_tensor(h_sub))
            return torch.sigmoid(logits).numpy().astype(float)
        for idx in size_batches(subs, batch_size):
            logits = self.net(torch.as_tensor(h_all[idx]), collate([subs[i] for i in idx]))
            out[idx] = torch.sigmoid(logits).numpy()
        return out

    def infer(self, h_t, g_s: Graph) -> float:
        return float(self.scores([SubgraphSample(np.asarray(h_t, dtype=np.float32), g_s, -1)])[0])

    def evaluate_auc(self, samples: Sequence[SubgraphSample], target_embeddings=None) -> float:
        labels = np.array([s.label for s in samples])
        return roc_auc(self.scores(samples, target_embeddings), labels)


def train(samples: Sequence[SubgraphSample], strategy: str = "difference",
          extractor_config: EncoderConfig | None = None, frozen_extractor: TrainedEncoder | None = None,
          epochs: int = 30, lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
          hidden=(128, 32)) -> SubgraphAttack:
    """Train the attack with one binary cross-entropy loss through classifier and extractor.

    With ``frozen_extractor`` (the baseline arm) subgraph embeddings come from that
    fixed model and only the classifier is trained.
    """
    labels = np.array([s.label for s in samples])
    if len(np.unique(labels)) < 2:
        raise ValueError("training samples must contain both labels")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    h_t = np.stack([s.target_embedding for s in samples]).astype(np.float32)
    subs = [s.subgraph for s in samples]
    y = torch.as_tensor(labels, dtype=torch.float32)
    if frozen_extractor is not None:
        h_sub = torch.as_tensor(frozen_extractor.encode_many(subs))
        net = SubgraphAttackNet(strategy, h_t.shape[1], None, d_sub=h_sub.shape[1], hidden=hidden)
    else:
        if extractor_config is None:
            raise ValueError("either extractor_config or frozen_extractor is required")
        net = SubgraphAttackNet(strategy, h_t.shape[1], GraphEncoder(extractor_config), hidden=hidden)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    history = []
    for epoch in range(epochs):
        net.train()
        total = 0.0
        for idx in size_batches(subs, batch_size, shuffle_rng=rng):
            ht = torch.as_tensor(h_t[idx])
            if frozen_extractor is not None:
                logits = net(ht, h_s=h_sub[idx])
            else:
                logits = net(ht, collate([subs[i] for i in idx]))
            loss = F.binary_cross_entropy_with_logits(logits, y[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite subgraph-attack loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(samples))
        log.debug("subgraph epoch %d loss %.4f", epoch, history[-1])
    return SubgraphAttack(net, frozen_extractor, history)
