"""Synthetic stand-ins for TUDataset benchmarks.

``molecule`` graphs are random trees with a few ring closures and atom-type labels;
``protein`` graphs chain nodes along a sequence and add nearest-neighbor contacts in
3-D space. Class labels depend on structure (ring count, contact density) so the
classification task is learnable.
"""

from __future__ import annotations

import numpy as np

from .graphs import Graph, GraphDataset, write_tudataset


def molecule_graph(rng: np.random.Generator, n: int, num_types: int = 8) -> tuple[np.ndarray, np.ndarray, int]:
    edges = [(int(rng.integers(i)), i) for i in range(1, n)]
    rings = int(rng.poisson(0.12 * n)) if n > 4 else 0
    existing = set(edges)
    for _ in range(rings):
        a, b = sorted(rng.choice(n, size=2, replace=False).tolist())
        if (a, b) not in existing:
            existing.add((a, b))
            edges.append((a, b))
    deg = np.zeros(n, dtype=int)
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    # atom type correlates with valence
    types = np.minimum(deg - 1 + rng.integers(0, 3, size=n), num_types - 1).clip(min=0)
    cycles = len(edges) - (n - 1)
    label = int(cycles >= max(1, round(0.12 * n)))
    return np.array(edges, dtype=np.int64), types, label


def protein_graph(rng: np.random.Generator, n: int, num_types: int = 3, k: int = 3) -> tuple[np.ndarray, np.ndarray, int]:
    steps = rng.normal(size=(n, 3))
    pos = np.cumsum(steps / np.linalg.norm(steps, axis=1, keepdims=True), axis=0)
    edges = {(i, i + 1) for i in range(n - 1)}
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    np.fill_diagonal(dist, np.inf)
    compact = rng.random() < 0.5
    radius = 1.6 if compact else 1.2
    for i in range(n):
        for j in np.argsort(dist[i])[:k]:
            if dist[i, j] < radius:
                edges.add((min(i, j), max(i, j)))
    edges = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    types = rng.integers(0, num_types, size=n)
    return edges, types, int(compact)


def make_dataset(name: str, num_graphs: int, kind: str = "molecule", min_nodes: int = 6,
                 max_nodes: int = 30, seed: int = 0) -> tuple[GraphDataset, list[np.ndarray]]:
    """Return a dataset plus per-graph integer node labels (for writing the TU layout)."""
    rng = np.random.default_rng(seed)
    num_types = 8 if kind == "molecule" else 3
    make = molecule_graph if kind == "molecule" else protein_graph
    graphs, node_labels = [], []
    for _ in range(num_graphs):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        edges, types, label = make(rng, n, num_types)
        feats = np.eye(num_types, dtype=np.float32)[types]
        graphs.append(Graph(n, edges, feats, label))
        node_labels.append(types)
    return GraphDataset(name, graphs, 2), node_labels


def write_synthetic(root, name: str, num_graphs: int, kind: str = "molecule", min_nodes: int = 6,
                    max_nodes: int = 30, seed: int = 0) -> str:
    ds, labels = make_dataset(name, num_graphs, kind, min_nodes, max_nodes, seed)
    return write_tudataset(ds, root, node_labels=labels)
