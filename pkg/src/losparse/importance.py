"""Sensitivity scores, their moving-average smoothing, and neuron (column) scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeError
from .linalg import as_matrix


def instant_sensitivity(w, grad) -> np.ndarray:
    """Elementwise ``|w * grad|``, the first-order loss change from zeroing each weight."""
    w = as_matrix(w, "W")
    grad = as_matrix(grad, "grad")
    if w.shape != grad.shape:
        raise ShapeError(f"weight shape {w.shape} differs from gradient shape {grad.shape}")
    return np.abs(w * grad)


@dataclass
class ImportanceState:
    """Exponential moving average of sensitivity for one tracked matrix.

    The first update copies the instant scores instead of mixing them with
    an all-zero history.
    """

    smoothed: np.ndarray
    beta: float
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        self.smoothed = as_matrix(self.smoothed, "smoothed")

    @classmethod
    def zeros(cls, shape, beta: float) -> "ImportanceState":
        return cls(np.zeros(shape), beta)


def ema_update(state: ImportanceState, instant) -> ImportanceState:
    instant = as_matrix(instant, "instant")
    if instant.shape != state.smoothed.shape:
        raise ShapeError(f"instant shape {instant.shape} differs from tracked shape {state.smoothed.shape}")
    if state.step_count == 0:
        smoothed = instant.copy()
    else:
        smoothed = state.beta * state.smoothed + (1.0 - state.beta) * instant
    return ImportanceState(smoothed, state.beta, state.step_count + 1)


def neuron_scores(smoothed) -> np.ndarray:
    """Column means of the smoothed sensitivity: one score per neuron (column)."""
    return as_matrix(smoothed, "smoothed").mean(axis=0)


def export_histogram(scores, bin_count: int) -> list[tuple[float, float, int]]:
    """Uniform histogram over ``[min, max]`` as ``(low, high, count)`` rows.

    Bins are right-open except the last. If every score is equal a single
    bin holds them all.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise EmptyInputError("cannot build a histogram of zero scores")
    if bin_count < 1:
        raise ValueError(f"bin_count must be positive, got {bin_count}")
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        return [(lo, hi, int(scores.size))]
    counts, edges = np.histogram(scores, bins=bin_count, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bin_count)]
