"""Global top-p structured pruning over the columns of every tracked matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyInputError, ShapeError
from .linalg import as_matrix


@dataclass(frozen=True, order=True)
class NeuronRef:
    layer_index: int
    column_index: int
    score: float = 0.0


def neuron_refs(scores_per_layer: Iterable) -> list[NeuronRef]:
    """Flatten per-layer score vectors into ``NeuronRef`` records."""
    refs = []
    for li, scores in enumerate(scores_per_layer):
        for ci, s in enumerate(np.asarray(scores, dtype=np.float64)):
            refs.append(NeuronRef(li, ci, float(s)))
    return refs


def retained_count(p: float, n: int) -> int:
    # 0.3 * 100 evaluates to 30.000000000000004; do not round that up to 31
    return min(n, max(0, math.ceil(p * n - 1e-9)))


def select_retained(all_scores: list[NeuronRef], p: float) -> set[NeuronRef]:
    """Keep the ``ceil(p * N)`` highest-scoring neurons across all layers.

    Ties at the cutoff go to the lower ``(layer_index, column_index)``.
    ``p == 0`` keeps nothing.
    """
    if not all_scores:
        raise EmptyInputError("no neurons to rank")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"retained fraction must lie in [0, 1], got {p}")
    k = retained_count(p, len(all_scores))
    ranked = sorted(all_scores, key=lambda n: (-n.score, n.layer_index, n.column_index))
    return set(ranked[:k])


def retained_masks(layers, retained: Iterable[NeuronRef]) -> list[np.ndarray]:
    masks = [np.zeros(layer.shape[1], dtype=bool) for layer in layers]
    for ref in retained:
        if not 0 <= ref.layer_index < len(layers) or not 0 <= ref.column_index < layers[ref.layer_index].shape[1]:
            raise IndexError(f"neuron ({ref.layer_index}, {ref.column_index}) is outside the layer set")
        masks[ref.layer_index][ref.column_index] = True
    return masks


def apply_prune(layers, retained: Iterable[NeuronRef]):
    """Zero every non-retained column of each layer's prunable matrix, in place.

    Works on ``FactorizedLayer`` (prunes ``S``) and ``DenseLayer`` (prunes
    ``W``). Retained columns keep their current values, including columns
    that were dead before. Returns ``layers``.
    """
    masks = retained_masks(layers, retained)
    for layer, mask in zip(layers, masks):
        layer.prunable[:, ~mask] = 0.0
        layer.live_columns = mask
    return layers


def itp_step(w, scores, p: float) -> np.ndarray:
    """Single-matrix iterative-pruning step: zero columns outside the top-p scores."""
    w = as_matrix(w, "W")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.shape[0] != w.shape[1]:
        raise ShapeError(f"{scores.shape[0]} scores for a matrix with {w.shape[1]} columns")
    keep = np.zeros(w.shape[1], dtype=bool)
    for ref in select_retained(neuron_refs([scores]), p):
        keep[ref.column_index] = True
    out = w.copy()
    out[:, ~keep] = 0.0
    return out
