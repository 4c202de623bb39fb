"""
Singular values by Jacobi rotations
===================================

``losparse.linalg.svd`` orthogonalizes the columns of a matrix by plane
rotations. Here we check it against the textbook identities and look at
the spectrum of a planted low-rank-plus-sparse weight.
"""

import numpy as np

from losparse.harness import generate_task
from losparse.linalg import frobenius_norm, svd

rng = np.random.default_rng(0)
w = rng.standard_normal((40, 25))
dec = svd(w)

# the squared singular values add up to the squared Frobenius norm
print("sum sigma^2 =", np.sum(dec.singular_values ** 2))
print("||W||_F^2   =", frobenius_norm(w) ** 2)

# the factors are orthonormal and rebuild W
print("reconstruction error:", frobenius_norm(dec.reconstruct() - w))

###############################################################################
# A planted weight: rank 4 plus 8 dense columns. The first four values lead,
# but the sparse columns keep about a third of the energy in the tail, which
# a low-rank factor alone cannot absorb.

task, _, _ = generate_task(0, 64, 64, 4, 8, 0.05, 16, 16)
sigma = svd(task.weight).singular_values
print("top 8 singular values:", np.round(sigma[:8], 3))
print("tail energy past rank 4:", np.sum(sigma[4:] ** 2) / np.sum(sigma ** 2))
