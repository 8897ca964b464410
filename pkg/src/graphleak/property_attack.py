"""Property inference: a shared MLP extractor with one softmax head per graph property,
trained on (embedding, bucketized property) pairs built from the auxiliary graphs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .graphs import PROPERTIES, BucketScheme, Graph, bucketize, build_bucket_scheme, graph_property
from .models import TrainingError

log = logging.getLogger(__name__)


class PropertyAttackNet(nn.Module):
    def __init__(self, in_dim: int, head_sizes: Mapping[str, int], hidden=(256, 256)):
        super().__init__()
        layers, prev = [], in_dim
        for width in hidden:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        self.extractor = nn.Sequential(*layers)
        self.heads = nn.ModuleDict({p: nn.Linear(prev, k) for p, k in head_sizes.items()})

    def forward(self, h):
        z = self.extractor(h)
        return {p: head(z) for p, head in self.heads.items()}


def make_schemes(aux: Sequence[Graph], k: int, properties: Sequence[str] = PROPERTIES) -> dict[str, BucketScheme]:
    """Bucket schemes built on the auxiliary graphs only; degenerate properties are dropped."""
    schemes = {}
    for p in properties:
        try:
            schemes[p] = build_bucket_scheme(aux, p, k)
        except ValueError as exc:
            log.warning("skipping property %s: %s", p, exc)
    return schemes


def property_labels(graphs: Sequence[Graph], schemes: Mapping[str, BucketScheme]) -> dict[str, np.ndarray]:
    return {p: np.array([bucketize(graph_property(g, p), s) for g in graphs], dtype=np.int64)
            for p, s in schemes.items()}


def build_training_set(aux: Sequence[Graph], target, schemes: Mapping[str, BucketScheme],
                       embeddings: np.ndarray | None = None):
    """One (embedding, labels) sample per auxiliary graph; embeddings come from querying ``target``."""
    if embeddings is None:
        embeddings = target.encode_many(aux)
    return np.asarray(embeddings, dtype=np.float32), property_labels(aux, schemes)


@dataclass
class PropertyAttack:
    net: PropertyAttackNet
    schemes: dict[str, BucketScheme]
    history: list[float] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @property
    def properties(self) -> list[str]:
        return list(self.net.heads.keys())

    @torch.no_grad()
    def predict(self, embeddings) -> dict[str, np.ndarray]:
        self.net.eval()
        x = torch.as_tensor(np.atleast_2d(np.asarray(embeddings, dtype=np.float32)))
        # torch.argmax returns the first maximal index, i.e. ties go to the lowest class
        return {p: out.argmax(-1).numpy() for p, out in self.net(x).items()}

    def infer(self, h) -> dict[str, int]:
        h = np.asarray(h)
        if not np.all(np.isfinite(h)):
            raise ValueError("embedding contains non-finite values")
        return {p: int(v[0]) for p, v in self.predict(h[None]).items()}

    def evaluate_accuracy(self, embeddings, labels: Mapping[str, np.ndarray]) -> dict[str, float]:
        preds = self.predict(embeddings)
        return {p: float((preds[p] == labels[p]).mean()) for p in preds if p in labels}


def joint_loss(outputs: Mapping[str, torch.Tensor], targets: Mapping[str, torch.Tensor]) -> torch.Tensor:
    """Cross-entropy summed over properties."""
    return sum(F.cross_entropy(outputs[p], targets[p]) for p in outputs)


def train(embeddings, labels: Mapping[str, np.ndarray], schemes: Mapping[str, BucketScheme],
          hidden=(256, 256), epochs: int = 200, lr: float = 1e-3, batch_size: int = 64,
          seed: int = 0, skip_single_class: bool = True) -> PropertyAttack:
    """Train the shared extractor and one head per property with summed cross-entropy.

    A property whose auxiliary labels all fall in one bucket is skipped with a warning.
    With ``skip_single_class=False`` its head is trained anyway and learns the constant
    class.
    """
    single = [p for p in schemes if len(np.unique(labels[p])) < 2]
    for p in single:
        log.warning("property %s has a single class in the auxiliary set%s", p,
                    "; head skipped" if skip_single_class else "")
    skipped = single if skip_single_class else []
    active = {p: s for p, s in schemes.items() if p not in skipped}
    if not active:
        raise ValueError("no property has two or more classes in the auxiliary set")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    x = torch.as_tensor(np.asarray(embeddings, dtype=np.float32))
    y = {p: torch.as_tensor(labels[p]) for p in active}
    net = PropertyAttackNet(x.shape[1], {p: s.k for p, s in active.items()}, hidden)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    history = []
    for epoch in range(epochs):
        net.train()
        perm = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch_size):
            idx = torch.as_tensor(perm[start:start + batch_size])
            loss = joint_loss(net(x[idx]), {p: t[idx] for p, t in y.items()})
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite property-attack loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(x))
    return PropertyAttack(net, dict(active), history, skipped)


def baseline_random(k: int) -> float:
    """Expected accuracy of uniform random guessing over k buckets."""
    return 1.0 / k


def baseline_summarize(aux: Sequence[Graph], test: Sequence[Graph], scheme: BucketScheme) -> float:
    """Predict the bucket of the auxiliary mean property value for every test graph."""
    mean_value = float(np.mean([graph_property(g, scheme.property_name) for g in aux]))
    guess = bucketize(mean_value, scheme)
    truth = np.array([bucketize(graph_property(g, scheme.property_name), scheme) for g in test])
    return float((truth == guess).mean())
