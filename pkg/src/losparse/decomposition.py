"""Low-rank plus column-sparse factorized linear layers.

A pretrained weight ``W0`` (d1 x d2, applied as ``Y = X @ W``) is replaced by
``U @ V + S`` where ``U @ V`` is the balanced rank-r truncated SVD and ``S``
is the residual, whose columns are pruned during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ShapeError
from .linalg import SvdResult, as_matrix, svd


@dataclass
class FactorizedLayer:
    """Weight ``U @ V + S`` with a liveness mask over the columns of ``S``.

    Dead columns of ``S`` are kept exactly zero.
    """

    U: np.ndarray
    V: np.ndarray
    S: np.ndarray
    live_columns: np.ndarray = field(default=None)

    def __post_init__(self):
        self.U = as_matrix(self.U, "U")
        self.V = as_matrix(self.V, "V")
        self.S = as_matrix(self.S, "S")
        d1, r = self.U.shape
        if self.V.shape[0] != r or self.S.shape != (d1, self.V.shape[1]):
            raise ShapeError(f"inconsistent factor shapes U{self.U.shape} V{self.V.shape} S{self.S.shape}")
        if self.live_columns is None:
            self.live_columns = np.ones(self.S.shape[1], dtype=bool)
        else:
            self.live_columns = np.asarray(self.live_columns, dtype=bool).copy()
            if self.live_columns.shape != (self.S.shape[1],):
                raise ShapeError(f"live_columns has shape {self.live_columns.shape}, expected ({self.S.shape[1]},)")

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.S.shape

    @property
    def prunable(self) -> np.ndarray:
        return self.S

    @prunable.setter
    def prunable(self, value):
        self.S = value

    def copy(self) -> "FactorizedLayer":
        return FactorizedLayer(self.U.copy(), self.V.copy(), self.S.copy(), self.live_columns.copy())


@dataclass
class DenseLayer:
    """Plain weight matrix with a column mask, used by the iterative-pruning baseline."""

    W: np.ndarray
    live_columns: np.ndarray = field(default=None)

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        if self.live_columns is None:
            self.live_columns = np.ones(self.W.shape[1], dtype=bool)
        else:
            self.live_columns = np.asarray(self.live_columns, dtype=bool).copy()

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    @property
    def prunable(self) -> np.ndarray:
        return self.W

    @prunable.setter
    def prunable(self, value):
        self.W = value

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.W.copy(), self.live_columns.copy())


@dataclass(frozen=True)
class CompressionBudget:
    """Target fraction of remaining weights and the share of it spent on U, V.

    ``lowrank_ratio`` of zero is the dense iterative-pruning baseline.
    """

    total_ratio: float
    lowrank_ratio: float

    def __post_init__(self):
        if not 0.0 < self.total_ratio <= 1.0:
            raise BudgetError(f"total_ratio must lie in (0, 1], got {self.total_ratio}")
        if not 0.0 <= self.lowrank_ratio < self.total_ratio:
            raise BudgetError(
                f"lowrank_ratio must lie in [0, total_ratio={self.total_ratio}), got {self.lowrank_ratio}"
            )


def init_from_pretrained(w0, rank: int, decomposition: SvdResult | None = None) -> FactorizedLayer:
    """Split ``w0`` into ``sqrt(sigma)``-balanced rank-``rank`` factors plus the residual.

    Pass ``decomposition`` (the ``svd`` of ``w0``) to reuse one factorization
    across several ranks.
    """
    w0 = as_matrix(w0, "W0")
    d1, d2 = w0.shape
    if not 1 <= rank <= min(d1, d2):
        raise BudgetError(f"rank {rank} outside [1, {min(d1, d2)}] for a {d1}x{d2} matrix")
    dec = svd(w0) if decomposition is None else decomposition
    root = np.sqrt(dec.singular_values[:rank])
    u = dec.left_vectors[:, :rank] * root
    v = (dec.right_vectors[:, :rank] * root).T
    return FactorizedLayer(u, v, w0 - u @ v)


def forward(layer: FactorizedLayer, x) -> np.ndarray:
    x = as_matrix(x, "X")
    if x.shape[1] != layer.U.shape[0]:
        raise ShapeError(f"input has {x.shape[1]} features, layer expects {layer.U.shape[0]}")
    return (x @ layer.U) @ layer.V + x @ layer.S


def backward(layer: FactorizedLayer, x, dy) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its gradient ``dy`` w.r.t. the layer output.

    Returns a dict with keys ``U``, ``V``, ``S`` and ``X``.
    """
    x = as_matrix(x, "X")
    dy = as_matrix(dy, "dY")
    d1, d2 = layer.shape
    if x.shape[1] != d1 or dy.shape != (x.shape[0], d2):
        raise ShapeError(f"X{x.shape} and dY{dy.shape} do not conform to a {d1}x{d2} layer")
    dy_vt = dy @ layer.V.T
    return {
        "U": x.T @ dy_vt,
        "V": (x @ layer.U).T @ dy,
        "S": x.T @ dy,
        "X": dy_vt @ layer.U.T + dy @ layer.S.T,
    }


def reconstruct(layer: FactorizedLayer) -> np.ndarray:
    return layer.U @ layer.V + layer.S


def rank_from_budget(d1: int, d2: int, lowrank_fraction: float) -> int:
    """Largest rank whose factor parameters ``r*(d1+d2)`` fit in ``lowrank_fraction*d1*d2``.

    Clamped to ``[1, min(d1, d2)]``.
    """
    if lowrank_fraction <= 0:
        raise BudgetError(f"lowrank fraction must be positive, got {lowrank_fraction}")
    # slack absorbs binary round-off on exact-integer quotients
    r = math.floor(lowrank_fraction * d1 * d2 / (d1 + d2) + 1e-9)
    return int(min(max(1, r), min(d1, d2)))


def stored_parameters(layer) -> int:
    """Weights that survive compression: factor entries plus live sparse columns."""
    d1, d2 = layer.shape
    lowrank = layer.rank * (d1 + d2) if isinstance(layer, FactorizedLayer) else 0
    return lowrank + d1 * int(np.count_nonzero(layer.live_columns))


def remaining_ratio(layers, original_param_count: int) -> float:
    return sum(stored_parameters(layer) for layer in layers) / original_param_count
