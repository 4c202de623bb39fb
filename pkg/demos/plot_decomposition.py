"""
Splitting a weight into low-rank and sparse parts
=================================================

A pretrained matrix ``W`` becomes ``U @ V + S``: the top singular directions
go into balanced factors and ``S`` holds whatever is left.
"""

import numpy as np

from losparse.decomposition import forward, init_from_pretrained, rank_from_budget, remaining_ratio
from losparse.linalg import frobenius_norm, svd

rng = np.random.default_rng(1)
w = rng.standard_normal((100, 100))

# 5% of the parameters buys rank 2 for a 100x100 matrix
r = rank_from_budget(100, 100, 0.05)
layer = init_from_pretrained(w, r)
print("rank:", r, "factor shapes:", layer.U.shape, layer.V.shape)

# nothing is lost at initialization
print("||W - UV - S||_F:", frobenius_norm(w - layer.U @ layer.V - layer.S))

# and ||W - UV||_F^2 is exactly the discarded spectral energy
sigma = svd(w).singular_values
print("residual^2:", frobenius_norm(w - layer.U @ layer.V) ** 2, "tail:", np.sum(sigma[r:] ** 2))

###############################################################################
# The layer computes ``(X @ U) @ V + X @ S`` without ever forming ``W``.

x = rng.standard_normal((3, 100))
print("forward matches X @ W:", np.allclose(forward(layer, x), x @ w))

# stored size relative to the dense matrix before and after dropping 90 columns of S
print("remaining ratio, all columns:", remaining_ratio([layer], w.size))
layer.live_columns[10:] = False
layer.S[:, 10:] = 0.0
print("remaining ratio, 10 columns:", remaining_ratio([layer], w.size))
