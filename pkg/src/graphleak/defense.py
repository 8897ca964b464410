"""Laplace perturbation of released graph embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSpec:
    beta: float
    seed: int = 0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"Laplace scale must be non-negative, got {self.beta}")


def perturb(h, spec: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Add i.i.d. Laplace(0, beta) noise to every coordinate; beta = 0 is the identity.

    Accepts a single embedding or a stack of them.
    """
    h = np.asarray(h)
    if not np.all(np.isfinite(h)):
        raise ValueError("embedding contains non-finite values")
    if spec.beta == 0:
        return h.copy()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return (h + rng.laplace(0.0, spec.beta, size=h.shape)).astype(h.dtype, copy=False)


def sweep(h, betas, evaluators, seed: int = 0) -> list[dict]:
    """Evaluate every metric on one perturbed copy of ``h`` per noise scale.

    ``evaluators`` maps a metric name to a callable taking the perturbed embeddings.
    The same noise draw is shared by all metrics at a given scale.
    """
    rows = []
    for beta in betas:
        rng = np.random.default_rng([seed, int(round(float(beta) * 1000))])
        noisy = perturb(h, NoiseSpec(float(beta)), rng)
        row = {"beta": float(beta)}
        for name, fn in evaluators.items():
            row[name] = float(fn(noisy))
        rows.append(row)
    return rows
