"""Max-pooling graph matching between a ground-truth graph and a probabilistic adjacency.

Node ``a`` of the n-node graph is matched to slot ``i`` of the N-slot prediction.
Edge affinity of ``((a, b), (i, j))`` is ``A[a, b] * P[i, j] * e[i] * e[j]`` where
``e[i] = max_j P[i, j]`` scores how likely slot ``i`` is to be a real node. Node
affinity compares the degree of ``a`` with the expected degree ``sum_j P[i, j]`` of
slot ``i`` (graphs carry no usable node features at this point). The relaxed
assignment ``x`` is refined by max-pooling power iterations, discretized to a
partial permutation and finally polished by a best-improvement swap/move search on
the matched loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class MatchingResult:
    assignment: np.ndarray  # (n, N) 0/1, at most one 1 per row and per column
    matched_loss: float

    @property
    def mapping(self) -> np.ndarray:
        """Slot index for each ground-truth node."""
        return self.assignment.argmax(axis=1)


def triu_slots(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def slots_to_matrix(values: np.ndarray, n: int) -> np.ndarray:
    p = np.zeros((n, n), dtype=float)
    r, c = triu_slots(n)
    p[r, c] = values
    p[c, r] = values
    return p


def relaxed_assignment(adj: np.ndarray, prob: np.ndarray, iterations: int = 30) -> np.ndarray:
    adj = np.asarray(adj, dtype=float)
    prob = np.asarray(prob, dtype=float)
    prob = prob - np.diag(np.diag(prob))
    n, slots = adj.shape[0], prob.shape[0]
    exist = prob.max(axis=1) if slots > 1 else np.ones(slots)
    edge_aff = prob * exist[:, None] * exist[None, :]
    node_aff = exist[None, :] / (1.0 + np.abs(adj.sum(1)[:, None] - prob.sum(1)[None, :]))
    x = node_aff.copy()
    if np.linalg.norm(x) > 0:
        x /= np.linalg.norm(x)
    for _ in range(iterations):
        # pooled[b, i] = max_j x[b, j] * edge_aff[i, j]
        pooled = (x[:, None, :] * edge_aff[None, :, :]).max(axis=2)
        x_new = x * node_aff + adj @ pooled
        norm = np.linalg.norm(x_new)
        if norm == 0:
            break
        x = x_new / norm
    return x


def discretize(x: np.ndarray, method: str = "hungarian") -> np.ndarray:
    n, slots = x.shape
    y = np.zeros((n, slots), dtype=np.int8)
    if n == 0:
        return y
    if method == "hungarian":
        rows, cols = linear_sum_assignment(-x)
        y[rows, cols] = 1
    elif method == "greedy":
        order = np.argsort(-x, axis=None, kind="stable")
        used_r, used_c = set(), set()
        for flat in order:
            r, c = divmod(int(flat), slots)
            if r not in used_r and c not in used_c:
                y[r, c] = 1
                used_r.add(r)
                used_c.add(c)
                if len(used_r) == min(n, slots):
                    break
    else:
        raise ValueError(f"unknown discretization {method!r}")
    return y


def refine(adj: np.ndarray, prob: np.ndarray, assignment: np.ndarray, eps: float = CLAMP_EPS,
           max_steps: int = 1000) -> np.ndarray:
    """Best-improvement local search over node swaps and moves to free slots.

    The matched loss equals a constant plus ``1/2 sum_ab A_ab W[m_a, m_b]`` with
    ``W = log((1 - p) / p)``, so every candidate delta is read off ``W[:, m] @ A``.
    """
    adj = np.asarray(adj, dtype=float)
    n, slots = assignment.shape
    if n < 1:
        return assignment
    p = np.clip(np.asarray(prob, dtype=float), eps, 1 - eps)
    w = np.log1p(-p) - np.log(p)
    np.fill_diagonal(w, 0.0)
    m = assignment.argmax(axis=1)
    rows = np.arange(n)
    for _ in range(max_steps):
        ga = w[:, m] @ adj                      # ga[t, a]: cost of node a sitting in slot t
        cur = ga[m, rows]
        best, action = -1e-12, None
        free = np.ones(slots, dtype=bool)
        free[m] = False
        if free.any():
            moves = ga[free] - cur[None, :]
            t, a = np.unravel_index(moves.argmin(), moves.shape)
            if moves[t, a] < best:
                best, action = moves[t, a], ("move", np.flatnonzero(free)[t], a)
        cross = ga[m, :]                        # cross[a, b] = ga[m_a, b]
        wm = w[np.ix_(m, m)]
        swaps = cross.T - cur[:, None] + cross - cur[None, :]
        swaps -= adj * (np.diag(wm)[None, :] + np.diag(wm)[:, None] - 2 * wm)
        np.fill_diagonal(swaps, 0.0)
        a, b = np.unravel_index(swaps.argmin(), swaps.shape)
        if swaps[a, b] < best:
            action = ("swap", a, b)
        if action is None:
            break
        if action[0] == "move":
            m[action[2]] = action[1]
        else:
            m[a], m[b] = m[b], m[a]
    out = np.zeros_like(assignment)
    out[rows, m] = 1
    return out


def aligned_target(adj: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    """Ground-truth adjacency moved into slot space: ``Y^T A Y`` (N x N)."""
    y = assignment.astype(float)
    return y.T @ np.asarray(adj, dtype=float) @ y


def matched_loss(adj: np.ndarray, prob: np.ndarray, assignment: np.ndarray,
                 eps: float = CLAMP_EPS, reduction: str = "mean") -> float:
    """Binary cross-entropy between the aligned ground truth and every predicted edge slot.

    Unmatched slots carry a zero target, so spurious edges are penalized.
    """
    slots = prob.shape[0]
    r, c = triu_slots(slots)
    target = aligned_target(adj, assignment)[r, c]
    p = np.clip(np.asarray(prob, dtype=float)[r, c], eps, 1 - eps)
    bce = -(target * np.log(p) + (1 - target) * np.log(1 - p))
    if reduction == "sum":
        return float(bce.sum())
    return float(bce.mean()) if len(bce) else 0.0


def max_pool_match(adj: np.ndarray, prob: np.ndarray, iterations: int = 30,
                   method: str = "hungarian", local_search: bool = True,
                   restarts: int = 0, seed: int = 0) -> MatchingResult:
    """Match ``adj`` (n x n) into the slots of ``prob`` (N x N).

    ``restarts`` extra local searches start from seeded random partial permutations
    and the lowest-loss result wins; swap/move search alone can stall in a local
    optimum on dense graphs.
    """
    adj = np.asarray(adj)
    prob = np.asarray(prob, dtype=float)
    n, slots = adj.shape[0], prob.shape[0]
    if n > slots:
        raise ValueError(f"graph with {n} nodes does not fit into {slots} slots")
    x = relaxed_assignment(adj, prob, iterations)
    y = discretize(x, method)
    if not local_search:
        return MatchingResult(y, matched_loss(adj, prob, y))
    y = refine(adj, prob, y)
    best = MatchingResult(y, matched_loss(adj, prob, y))
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        start = np.zeros_like(y)
        start[np.arange(n), rng.permutation(slots)[:n]] = 1
        y = refine(adj, prob, start)
        loss = matched_loss(adj, prob, y)
        if loss < best.matched_loss:
            best = MatchingResult(y, loss)
    return best
