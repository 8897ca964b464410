"""Node-induced subgraph samplers: random walk, snowball and forest fire.

Every sampler returns exactly ``ceil(ratio * n)`` distinct nodes. When a walk or a
fire cannot reach new nodes it restarts from a fresh, uniformly chosen unvisited node.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graphs import Graph, ceil_ratio, connected_components

METHODS = ("random_walk", "snowball", "forest_fire")


@dataclass(frozen=True)
class SamplerSpec:
    method: str = "random_walk"
    ratio: float = 0.8
    seed: int = 0
    snowball_k: int = 5
    burn_probability: float = 0.4

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown sampling method {self.method!r}; expected one of {METHODS}")
        if not 0 < self.ratio < 1:
            raise ValueError("sampling ratio must lie strictly between 0 and 1")

    def with_seed(self, seed: int) -> "SamplerSpec":
        return SamplerSpec(self.method, self.ratio, seed, self.snowball_k, self.burn_probability)

    def to_dict(self) -> dict:
        return asdict(self)


def target_size(n: int, ratio: float) -> int:
    return ceil_ratio(ratio, n)


def _fresh_node(rng, selected: np.ndarray) -> int:
    return int(rng.choice(np.flatnonzero(~selected)))


def random_walk_nodes(g: Graph, t: int, rng: np.random.Generator) -> list[int]:
    comp_id = np.empty(g.num_nodes, dtype=np.int64)
    comps = connected_components(g)
    for ci, comp in enumerate(comps):
        comp_id[comp] = ci
    remaining = np.array([len(c) for c in comps])
    selected = np.zeros(g.num_nodes, dtype=bool)
    nbrs = g.neighbors

    def take(u):
        selected[u] = True
        remaining[comp_id[u]] -= 1
        order.append(u)

    order: list[int] = []
    cur = int(rng.integers(g.num_nodes))
    take(cur)
    while len(order) < t:
        if remaining[comp_id[cur]] == 0:
            cur = _fresh_node(rng, selected)
            take(cur)
            continue
        cur = int(rng.choice(nbrs[cur]))
        if not selected[cur]:
            take(cur)
    return order


def snowball_nodes(g: Graph, t: int, rng: np.random.Generator, k: int = 5) -> list[int]:
    selected = np.zeros(g.num_nodes, dtype=bool)
    order: list[int] = []
    frontier: list[int] = []
    nbrs = g.neighbors
    while len(order) < t:
        if not frontier:
            seed = _fresh_node(rng, selected)
            selected[seed] = True
            order.append(seed)
            frontier = [seed]
            continue
        nxt = []
        for u in frontier:
            cand = nbrs[u][~selected[nbrs[u]]]
            if len(cand) > k:
                cand = rng.choice(cand, size=k, replace=False)
            for v in cand:
                if len(order) == t:
                    return order
                if not selected[v]:
                    selected[v] = True
                    order.append(int(v))
                    nxt.append(int(v))
        frontier = nxt
    return order


def forest_fire_nodes(g: Graph, t: int, rng: np.random.Generator, p: float = 0.4) -> list[int]:
    """Burn a geometric number (mean ``p / (1 - p)``) of unburned neighbors per node."""
    burned = np.zeros(g.num_nodes, dtype=bool)
    order: list[int] = []
    queue: list[int] = []
    nbrs = g.neighbors
    while len(order) < t:
        if not queue:
            seed = _fresh_node(rng, burned)
            burned[seed] = True
            order.append(seed)
            queue = [seed]
            continue
        u = queue.pop(0)
        cand = nbrs[u][~burned[nbrs[u]]]
        if not len(cand):
            continue
        count = min(int(rng.geometric(1.0 - p)) - 1, len(cand))
        for v in rng.choice(cand, size=count, replace=False):
            if len(order) == t:
                break
            burned[v] = True
            order.append(int(v))
            queue.append(int(v))
    return order


def sample_nodes(g: Graph, spec: SamplerSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    if g.num_nodes == 0:
        raise ValueError("cannot sample from an empty graph")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    t = target_size(g.num_nodes, spec.ratio)
    if spec.method == "random_walk":
        nodes = random_walk_nodes(g, t, rng)
    elif spec.method == "snowball":
        nodes = snowball_nodes(g, t, rng, spec.snowball_k)
    else:
        nodes = forest_fire_nodes(g, t, rng, spec.burn_probability)
    return np.sort(np.asarray(nodes, dtype=np.int64))


def sample(g: Graph, spec: SamplerSpec, rng: np.random.Generator | None = None) -> Graph:
    """Induced subgraph on ``ceil(spec.ratio * n)`` sampled nodes (original order kept)."""
    return g.subgraph(sample_nodes(g, spec, rng))
