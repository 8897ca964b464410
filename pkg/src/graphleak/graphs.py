"""Graph data model, TUDataset ingestion, splits, graph properties and bucketization."""

from __future__ import annotations

import math
import os
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

PROPERTIES = ("num_nodes", "num_edges", "density", "diameter", "radius")
BUCKET_CHOICES = (2, 4, 6, 8)


class DatasetFormatError(ValueError):
    """Raised when a TUDataset directory is missing files or is malformed."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted, attributed graph.

    Edges are stored once as an ``(E, 2)`` array with ``i < j``; the dense
    adjacency matrix is derived on demand.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    label: int = 0

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            if edges.min() < 0 or edges.max() >= self.num_nodes:
                raise ValueError("edge endpoint outside node range")
            edges = np.sort(edges, axis=1)
            edges = edges[edges[:, 0] != edges[:, 1]]
            edges = np.unique(edges, axis=0)
        features = np.asarray(self.features, dtype=np.float32)
        if features.ndim != 2 or features.shape[0] != self.num_nodes:
            raise ValueError(
                f"feature rows ({features.shape[0] if features.ndim else 0}) "
                f"must equal num_nodes ({self.num_nodes})"
            )
        edges.setflags(write=False)
        features.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)

    @classmethod
    def from_adjacency(cls, adjacency, features=None, label: int = 0) -> "Graph":
        adjacency = np.asarray(adjacency)
        n = adjacency.shape[0]
        if adjacency.shape != (n, n):
            raise ValueError("adjacency must be square")
        if not np.array_equal(adjacency, adjacency.T):
            raise ValueError("adjacency must be symmetric")
        rows, cols = np.nonzero(np.triu(adjacency, k=1))
        if features is None:
            features = np.ones((n, 1), dtype=np.float32)
        return cls(n, np.stack([rows, cols], axis=1), features, label)

    @classmethod
    def from_networkx(cls, nx_graph, features=None, label: int = 0) -> "Graph":
        nodes = list(nx_graph.nodes())
        index = {u: i for i, u in enumerate(nodes)}
        edges = [(index[u], index[v]) for u, v in nx_graph.edges()]
        if features is None:
            features = np.ones((len(nodes), 1), dtype=np.float32)
        return cls(len(nodes), np.array(edges, dtype=np.int64).reshape(-1, 2), features, label)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=np.float32)
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        a.setflags(write=False)
        return a

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        """Sorted neighbor arrays, one per node."""
        buckets: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, j in self.edges:
            buckets[i].append(int(j))
            buckets[j].append(int(i))
        return [np.array(sorted(b), dtype=np.int64) for b in buckets]

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        if len(self.edges):
            np.add.at(deg, self.edges.ravel(), 1)
        return deg

    def subgraph(self, nodes: Sequence[int]) -> "Graph":
        """Node-induced subgraph; node order follows ``nodes``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        if len(np.unique(nodes)) != len(nodes):
            raise ValueError("duplicate nodes in subgraph request")
        remap = np.full(self.num_nodes, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        if len(self.edges):
            e = remap[self.edges]
            e = e[(e >= 0).all(axis=1)]
        else:
            e = np.zeros((0, 2), dtype=np.int64)
        return Graph(len(nodes), e, self.features[nodes], self.label)

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        return self.subgraph(perm)

    def with_features(self, features) -> "Graph":
        return Graph(self.num_nodes, self.edges, features, self.label)

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.num_nodes))
        g.add_edges_from(map(tuple, self.edges.tolist()))
        return g

    def __repr__(self):
        return f"Graph(n={self.num_nodes}, m={self.num_edges}, d_x={self.feature_dim}, label={self.label})"


@dataclass(frozen=True)
class GraphDataset:
    name: str
    graphs: tuple[Graph, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        dims = {g.feature_dim for g in self.graphs}
        if len(dims) > 1:
            raise ValueError(f"graphs disagree on feature dimension: {sorted(dims)}")
        if any(not 0 <= g.label < self.num_classes for g in self.graphs):
            raise ValueError("graph label outside [0, num_classes)")

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, idx):
        return self.graphs[idx]

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].feature_dim if self.graphs else 0

    def subset(self, indices) -> list[Graph]:
        return [self.graphs[i] for i in indices]

    def stats(self) -> dict:
        nodes = [g.num_nodes for g in self.graphs]
        edges = [g.num_edges for g in self.graphs]
        return {
            "name": self.name,
            "graphs": len(self.graphs),
            "avg_nodes": float(np.mean(nodes)) if nodes else 0.0,
            "avg_edges": float(np.mean(edges)) if edges else 0.0,
            "max_nodes": int(max(nodes)) if nodes else 0,
            "feature_dim": self.feature_dim,
            "classes": self.num_classes,
        }


@dataclass(frozen=True)
class DataSplit:
    """40/30/30 partition: target training, attack training (auxiliary), attack testing."""

    target_train: tuple[int, ...]
    attack_train: tuple[int, ...]
    attack_test: tuple[int, ...]

    def as_dict(self) -> dict:
        return {
            "target_train": list(self.target_train),
            "attack_train": list(self.attack_train),
            "attack_test": list(self.attack_test),
        }


# --------------------------------------------------------------------------- ingestion


def _read_ints(path: str) -> np.ndarray:
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    try:
        return np.array([int(float(r)) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: non-integer entry ({exc})") from None


def _read_matrix(path: str) -> np.ndarray:
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    try:
        return np.array([[float(v) for v in r.split(",")] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: malformed row ({exc})") from None


def load_tudataset(root: str | os.PathLike, name: str) -> GraphDataset:
    """Load a dataset stored in the plain-text TUDataset layout.

    ``root`` may either be the dataset directory itself or its parent
    (``root/name/name_A.txt``).
    """
    root = os.fspath(root)
    base = root if os.path.exists(os.path.join(root, f"{name}_A.txt")) else os.path.join(root, name)

    def path(suffix):
        return os.path.join(base, f"{name}_{suffix}.txt")

    for required in ("A", "graph_indicator", "graph_labels"):
        if not os.path.exists(path(required)):
            raise DatasetFormatError(f"missing mandatory file {path(required)}")

    indicator = _read_ints(path("graph_indicator"))
    graph_labels = _read_ints(path("graph_labels"))
    num_graphs = len(graph_labels)
    total_nodes = len(indicator)
    if total_nodes == 0 or num_graphs == 0:
        raise DatasetFormatError("empty dataset")
    if indicator.min() < 1 or indicator.max() > num_graphs:
        raise DatasetFormatError("graph indicator references unknown graph id")
    if np.any(np.diff(indicator) < 0):
        raise DatasetFormatError("graph indicator is not grouped by graph")

    edges = _read_matrix(path("A")).astype(np.int64) if os.path.getsize(path("A")) else np.zeros((0, 2), np.int64)
    edges = edges.reshape(-1, 2)
    if len(edges) and (edges.min() < 1 or edges.max() > total_nodes):
        raise DatasetFormatError("edge endpoint refers to a node that does not exist")
    edges = edges - 1

    blocks = []
    if os.path.exists(path("node_attributes")):
        attrs = _read_matrix(path("node_attributes"))
        if len(attrs) != total_nodes:
            raise DatasetFormatError("node_attributes row count differs from node count")
        blocks.append(attrs)
    if os.path.exists(path("node_labels")):
        node_labels = _read_ints(path("node_labels"))
        if len(node_labels) != total_nodes:
            raise DatasetFormatError("node_labels row count differs from node count")
        values, inverse = np.unique(node_labels, return_inverse=True)
        onehot = np.zeros((total_nodes, len(values)))
        onehot[np.arange(total_nodes), inverse] = 1.0
        blocks.insert(0, onehot)
    features = np.concatenate(blocks, axis=1) if blocks else np.ones((total_nodes, 1))

    classes, labels = np.unique(graph_labels, return_inverse=True)

    graph_of_node = indicator - 1
    starts = np.searchsorted(graph_of_node, np.arange(num_graphs), side="left")
    ends = np.searchsorted(graph_of_node, np.arange(num_graphs), side="right")
    if len(edges):
        g_src = graph_of_node[edges[:, 0]]
        if np.any(g_src != graph_of_node[edges[:, 1]]):
            raise DatasetFormatError("edge connects nodes of different graphs")
        order = np.argsort(g_src, kind="stable")
        edges, g_src = edges[order], g_src[order]
        e_starts = np.searchsorted(g_src, np.arange(num_graphs), side="left")
        e_ends = np.searchsorted(g_src, np.arange(num_graphs), side="right")
    graphs = []
    for gi in range(num_graphs):
        s, e = starts[gi], ends[gi]
        if e <= s:
            raise DatasetFormatError(f"graph {gi + 1} has no nodes")
        local = edges[e_starts[gi]:e_ends[gi]] - s if len(edges) else np.zeros((0, 2), np.int64)
        graphs.append(Graph(int(e - s), local, features[s:e], int(labels[gi])))
    return GraphDataset(name, graphs, len(classes))


def write_tudataset(ds: GraphDataset, root: str | os.PathLike, node_labels: Sequence[np.ndarray] | None = None) -> str:
    """Write ``ds`` in TUDataset layout under ``root/<name>``; returns the directory.

    Features are written as node attributes unless ``node_labels`` (one integer
    array per graph) is given, in which case a labels file is written instead.
    """
    base = os.path.join(os.fspath(root), ds.name)
    os.makedirs(base, exist_ok=True)
    offset = 0
    with open(os.path.join(base, f"{ds.name}_A.txt"), "w") as fa, \
            open(os.path.join(base, f"{ds.name}_graph_indicator.txt"), "w") as fi:
        for gi, g in enumerate(ds.graphs):
            for i, j in g.edges:
                fa.write(f"{i + 1 + offset}, {j + 1 + offset}\n")
                fa.write(f"{j + 1 + offset}, {i + 1 + offset}\n")
            fi.write(f"{gi + 1}\n" * g.num_nodes)
            offset += g.num_nodes
    with open(os.path.join(base, f"{ds.name}_graph_labels.txt"), "w") as fl:
        fl.writelines(f"{g.label}\n" for g in ds.graphs)
    if node_labels is not None:
        with open(os.path.join(base, f"{ds.name}_node_labels.txt"), "w") as fn:
            for labels in node_labels:
                fn.writelines(f"{int(v)}\n" for v in labels)
    else:
        with open(os.path.join(base, f"{ds.name}_node_attributes.txt"), "w") as fn:
            for g in ds.graphs:
                for row in g.features:
                    fn.write(", ".join(f"{v:.6g}" for v in row) + "\n")
    return base


# --------------------------------------------------------------------------- splits


def split_dataset(ds: GraphDataset | Sequence, seed: int, fractions=(0.4, 0.3, 0.3)) -> DataSplit:
    n = len(ds)
    if n < 10:
        raise ValueError(f"need at least 10 graphs to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_target = int(round(fractions[0] * n))
    n_attack = int(round(fractions[1] * n))
    return DataSplit(
        tuple(int(i) for i in perm[:n_target]),
        tuple(int(i) for i in perm[n_target:n_target + n_attack]),
        tuple(int(i) for i in perm[n_target + n_attack:]),
    )


# --------------------------------------------------------------------------- properties


def _bfs_distances(g: Graph, source: int) -> np.ndarray:
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    nbrs = g.neighbors
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def connected_components(g: Graph) -> list[np.ndarray]:
    seen = np.zeros(g.num_nodes, dtype=bool)
    comps = []
    for s in range(g.num_nodes):
        if not seen[s]:
            comp = np.flatnonzero(_bfs_distances(g, s) >= 0)
            seen[comp] = True
            comps.append(comp)
    return comps


def largest_component(g: Graph) -> np.ndarray:
    comps = connected_components(g)
    return max(comps, key=len) if comps else np.zeros(0, dtype=np.int64)


def eccentricities(g: Graph) -> np.ndarray:
    """Eccentricity of every node of the largest connected component."""
    comp = largest_component(g)
    return np.array([_bfs_distances(g, int(u)).max() for u in comp], dtype=np.int64)


def graph_property(g: Graph, name: str) -> float:
    if name == "num_nodes":
        return float(g.num_nodes)
    if name == "num_edges":
        return float(g.num_edges)
    if name == "density":
        n = g.num_nodes
        return 2.0 * g.num_edges / (n * (n - 1)) if n > 1 else 0.0
    if name in ("diameter", "radius"):
        ecc = eccentricities(g)
        if len(ecc) == 0:
            return 0.0
        return float(ecc.max() if name == "diameter" else ecc.min())
    raise KeyError(f"unknown property {name!r}; expected one of {PROPERTIES}")


# --------------------------------------------------------------------------- bucketization


@dataclass(frozen=True)
class BucketScheme:
    property_name: str
    k: int
    edges: tuple[float, ...] = field(repr=False)

    def __post_init__(self):
        if len(self.edges) != self.k + 1:
            raise ValueError("bucket scheme needs k+1 boundaries")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("bucket boundaries must be strictly ascending")

    @classmethod
    def equal_width(cls, property_name: str, k: int, lo: float, hi: float) -> "BucketScheme":
        if not hi > lo:
            raise ValueError(f"degenerate range [{lo}, {hi}] for {property_name}")
        return cls(property_name, k, tuple(float(v) for v in np.linspace(lo, hi, k + 1)))

    def __call__(self, value: float) -> int:
        return bucketize(value, self)

    def to_dict(self) -> dict:
        return {"property_name": self.property_name, "k": self.k, "edges": list(self.edges)}


def build_bucket_scheme(aux: Sequence[Graph], property_name: str, k: int,
                        allowed_k: Sequence[int] | None = None) -> BucketScheme:
    """Equal-width bins over the auxiliary range of a property.

    Density always uses the fixed domain [0, 1].
    """
    if allowed_k is not None and k not in allowed_k:
        raise ValueError(f"k must be one of {tuple(allowed_k)}")
    if k < 1:
        raise ValueError("k must be positive")
    if not aux:
        raise ValueError("auxiliary set is empty")
    if property_name == "density":
        return BucketScheme.equal_width(property_name, k, 0.0, 1.0)
    values = np.array([graph_property(g, property_name) for g in aux])
    if values.min() == values.max():
        raise ValueError(f"all auxiliary {property_name} values equal {values.min()}; bins undefined")
    return BucketScheme.equal_width(property_name, k, float(values.min()), float(values.max()))


def bucketize(value: float, scheme: BucketScheme) -> int:
    # side="right": a value on an interior boundary goes to the higher bin
    idx = int(np.searchsorted(scheme.edges, value, side="right")) - 1
    return min(max(idx, 0), scheme.k - 1)


# --------------------------------------------------------------------------- features


def degree_onehot_features(g: Graph, max_degree: int) -> Graph:
    deg = np.minimum(g.degrees, max_degree)
    onehot = np.zeros((g.num_nodes, max_degree + 1), dtype=np.float32)
    onehot[np.arange(g.num_nodes), deg] = 1.0
    return g.with_features(onehot)


def ceil_ratio(ratio: float, n: int) -> int:
    """``ceil(ratio * n)`` robust to float noise such as 0.6 * 10 = 6.000000000000001."""
    return int(math.ceil(round(ratio * n, 9)))
