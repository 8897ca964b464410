"""Evaluation metrics: WL subtree kernel, macro-level statistic profiles, distribution
similarities, ROC AUC and accuracy."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.stats import rankdata

from .graphs import Graph

STATISTICS = ("degree", "lcc", "bc", "cc")
SIMILARITIES = ("cosine", "wasserstein", "js")
NUM_BINS = 10


# --------------------------------------------------------------------------- WL kernel


def wl_features(graphs: list[Graph], iterations: int = 3) -> list[Counter]:
    """Label-count features of WL refinement, sharing one label dictionary across ``graphs``.

    Initial labels are uniform, so only structure is compared.
    """
    labels = [np.zeros(g.num_nodes, dtype=np.int64) for g in graphs]
    feats = [Counter((0, int(l)) for l in lab) for lab in labels]
    for it in range(1, iterations + 1):
        table: dict[tuple, int] = {}
        new_labels = []
        for g, lab in zip(graphs, labels):
            nbrs = g.neighbors
            sigs = [(int(lab[u]), tuple(sorted(lab[nbrs[u]].tolist()))) for u in range(g.num_nodes)]
            new_labels.append(np.array([table.setdefault(s, len(table)) for s in sigs], dtype=np.int64))
        labels = new_labels
        for f, lab in zip(feats, labels):
            f.update((it, int(l)) for l in lab)
    return feats


def _dot(a: Counter, b: Counter) -> float:
    if len(a) > len(b):
        a, b = b, a
    return float(sum(v * b.get(k, 0) for k, v in a.items()))


def wl_kernel(g1: Graph, g2: Graph, iterations: int = 3) -> float:
    """Normalized WL subtree kernel ``k(g1, g2) / sqrt(k(g1, g1) k(g2, g2))``."""
    if g1.num_nodes == 0 or g2.num_nodes == 0:
        raise ValueError("WL kernel is undefined for empty graphs")
    f1, f2 = wl_features([g1, g2], iterations)
    return _dot(f1, f2) / np.sqrt(_dot(f1, f1) * _dot(f2, f2))


# --------------------------------------------------------------------------- statistics


@dataclass(frozen=True)
class StatProfile:
    degree: np.ndarray
    lcc: np.ndarray
    bc: np.ndarray
    cc: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return getattr(self, name)


def node_statistics(g: Graph) -> dict[str, np.ndarray]:
    """Per-node degree, local clustering, betweenness and closeness.

    Betweenness is normalized within each connected component; closeness uses
    within-component distances, and an isolated node gets closeness 0.
    """
    nxg = g.to_networkx()
    n = g.num_nodes
    bc = np.zeros(n)
    for comp in nx.connected_components(nxg):
        if len(comp) > 2:
            sub = nxg.subgraph(comp)
            for u, v in nx.betweenness_centrality(sub, normalized=True).items():
                bc[u] = v
    lcc = nx.clustering(nxg)
    cc = nx.closeness_centrality(nxg, wf_improved=False)
    return {
        "degree": g.degrees.astype(float),
        "lcc": np.array([lcc[u] for u in range(n)], dtype=float),
        "bc": bc,
        "cc": np.array([cc[u] for u in range(n)], dtype=float),
    }


def _histogram(values: np.ndarray, hi: float) -> np.ndarray:
    hist, _ = np.histogram(values, bins=NUM_BINS, range=(0.0, hi if hi > 0 else 1.0))
    return hist / hist.sum()


def stat_profile(g: Graph, degree_max: float | None = None, stats: dict | None = None) -> StatProfile:
    """10-bin normalized histograms; degree bins span ``[0, degree_max]``."""
    if g.num_nodes == 0:
        raise ValueError("statistic profile of an empty graph is undefined")
    stats = stats or node_statistics(g)
    if degree_max is None:
        degree_max = float(stats["degree"].max())
    return StatProfile(
        degree=_histogram(np.minimum(stats["degree"], degree_max), degree_max),
        lcc=_histogram(stats["lcc"], 1.0),
        bc=_histogram(stats["bc"], 1.0),
        cc=_histogram(stats["cc"], 1.0),
    )


def paired_profiles(g1: Graph, g2: Graph) -> tuple[StatProfile, StatProfile]:
    """Profiles sharing degree-bin edges over the pair's joint maximum degree."""
    s1, s2 = node_statistics(g1), node_statistics(g2)
    dmax = float(max(s1["degree"].max(), s2["degree"].max()))
    return stat_profile(g1, dmax, s1), stat_profile(g2, dmax, s2)


# --------------------------------------------------------------------------- similarities


def cosine_similarity(p, q) -> float:
    p, q = np.asarray(p, float), np.asarray(q, float)
    denom = np.linalg.norm(p) * np.linalg.norm(q)
    if denom == 0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(p @ q / denom)


def wasserstein(p, q) -> float:
    """1-Wasserstein distance between histograms whose bins sit at ``i / (k - 1)``."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    return float(np.abs(np.cumsum(p - q))[:-1].sum() / (len(p) - 1))


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in bits, bounded by [0, 1]."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float((a[nz] * np.log2(a[nz] / m[nz])).sum())

    return max(0.0, 0.5 * kl(p) + 0.5 * kl(q))


def similarity(p, q, kind: str) -> float:
    if len(p) != len(q):
        raise ValueError("histograms must have equal length")
    if kind == "cosine":
        return cosine_similarity(p, q)
    if kind == "wasserstein":
        return wasserstein(p, q)
    if kind == "js":
        return js_divergence(p, q)
    raise KeyError(f"unknown similarity {kind!r}")


def profile_similarities(target: Graph, recon: Graph) -> dict[str, dict[str, float]]:
    """4 statistics x 3 similarity measures between two graphs."""
    pt, pr = paired_profiles(target, recon)
    return {s: {k: similarity(pt[s], pr[s], k) for k in SIMILARITIES} for s in STATISTICS}


# --------------------------------------------------------------------------- classification


def roc_auc(scores, labels) -> float:
    """Rank-based AUC; tied scores earn half credit."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels differ in shape")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float((preds == labels).mean())
