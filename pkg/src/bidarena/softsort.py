"""Differentiable relaxations of sorting, min, and argmax.

The relaxed sort follows the deterministic NeuralSort construction: row i of
the relaxed permutation matrix is softmax(((n + 1 - 2(i+1)) * s - A 1) / tau)
with A the pairwise absolute-difference matrix, so row 0 concentrates on the
largest score as tau -> 0. Hard operators are used when realizing outcomes;
these relaxations live on gradient paths only.

Every function here doubles as a graph builder: pass diffcore Vars to get a
differentiable node, plain arrays to get numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError

__all__ = [
    "RelaxedPermutation",
    "neural_sort",
    "neural_sort_row",
    "soft_min2",
    "soft_argmax",
]


@dataclass(frozen=True)
class RelaxedPermutation:
    """Row-stochastic near-permutation matrix with its temperature."""

    matrix: np.ndarray
    temperature: float

    def __post_init__(self):
        rows = self.matrix.sum(axis=-1)
        if not np.allclose(rows, 1.0, atol=1e-9):
            raise ConfigError("relaxed permutation rows must sum to 1")


def _check_temperature(tau):
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")


def neural_sort(scores, tau):
    """Relaxed descending-sort permutation matrix for a score vector.

    Returns a RelaxedPermutation whose matrix row i is a softmax
    distribution concentrating (as tau -> 0) on the index holding the
    i-th largest score; exact ties split their weight evenly.
    """
    _check_temperature(tau)
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise ConfigError(f"scores must be a non-empty vector, got shape {s.shape}")
    n = s.size
    rows = [neural_sort_row(s, i, tau) for i in range(n)]
    return RelaxedPermutation(np.stack(rows, axis=0), float(tau))


def neural_sort_row(scores, rank, tau):
    """Row `rank` (0 = largest) of the relaxed sort matrix.

    Accepts a vector or a batch with scores along the last axis; accepts
    diffcore Vars for gradient paths.
    """
    _check_temperature(tau)
    n = np.shape(dc._val(scores))[-1]
    if not 0 <= rank < n:
        raise ConfigError(f"rank {rank} out of range for {n} scores")
    left = dc.reshape(scores, (*np.shape(dc._val(scores))[:-1], n, 1))
    pairwise = dc.absolute(dc.sub(left, dc.reshape(scores, (*np.shape(dc._val(scores))[:-1], 1, n))))
    row_sums = dc.vsum(pairwise, axis=-1)
    coeff = n - 1 - 2 * rank
    logits = dc.mul(dc.sub(dc.mul(scores, float(coeff)), row_sums), 1.0 / tau)
    return dc.softmax(logits, axis=-1)


def soft_min2(x, y, tau):
    """Smooth two-argument min: Boltzmann average with weights softmax(-x/tau).

    Stays inside [min(x, y), max(x, y)], converges to min(x, y) as tau -> 0,
    and is differentiable in both arguments.
    """
    _check_temperature(tau)
    pair = dc.stack([x, y], axis=-1)
    weights = dc.softmax(dc.mul(pair, -1.0 / tau), axis=-1)
    return dc.vsum(dc.mul(weights, pair), axis=-1)


def soft_argmax(scores, kappa):
    """Simplex weights softmax(kappa * scores); one-hot at the max as kappa -> inf."""
    if not kappa > 0:
        raise ConfigError(f"sharpness must be positive, got {kappa}")
    return dc.softmax(dc.mul(scores, float(kappa)), axis=-1)
