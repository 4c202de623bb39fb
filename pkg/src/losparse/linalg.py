"""Dense linear algebra on float64 numpy arrays.

Matrices are plain 2-D ``numpy.ndarray`` objects. The singular value
decomposition is a one-sided (Hestenes) Jacobi method with a round-robin
pair ordering, so every rotation round acts on disjoint column pairs and
can be applied as one vectorized update.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, ShapeError

MAX_SWEEPS = 60
ORTHO_TOL = 1e-12


def as_matrix(a, name="matrix"):
    """Return ``a`` as a C-contiguous float64 2-D array, rejecting other ranks."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b):
    """Matrix product ``a @ b`` with a shape check that names both operands."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def transpose(a):
    return np.ascontiguousarray(as_matrix(a).T)


def frobenius_norm(a) -> float:
    a = as_matrix(a)
    return float(np.sqrt(np.sum(a * a)))


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``W = left_vectors @ diag(singular_values) @ right_vectors.T``.

    ``left_vectors`` is d1 x k and ``right_vectors`` is d2 x k with
    k = min(d1, d2); columns pair up with the descending ``singular_values``.
    """

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def truncated(self, rank: int) -> np.ndarray:
        """Rank-``rank`` reconstruction from the leading triples."""
        u = self.left_vectors[:, :rank]
        v = self.right_vectors[:, :rank]
        return (u * self.singular_values[:rank]) @ v.T

    def reconstruct(self) -> np.ndarray:
        return self.truncated(len(self.singular_values))


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # circle method; an odd count gets a dummy slot (index n) that is dropped
    m = n + (n % 2)
    slots = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = slots[i], slots[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        slots = [slots[0], slots[-1]] + slots[1:-1]
    return tuple(rounds)


def _jacobi_columns(a: np.ndarray, norm: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the columns of ``a`` (m >= n) in place of a copy.

    Returns the rotated matrix (columns mutually orthogonal) and the
    accumulated right rotation ``v``.
    """
    m, n = a.shape
    # columns are stored as rows so each pair gather is contiguous
    at = np.array(a.T, order="C")
    vt = np.eye(n)
    if n < 2:
        return at.T.copy(), vt.T.copy()
    floor = (ORTHO_TOL * norm) ** 2
    rounds = _round_robin(n)
    for sweep in range(1, MAX_SWEEPS + 1):
        rotated = False
        for p, q in rounds:
            x = at[p]
            y = at[q]
            alpha = np.einsum("ji,ji->j", x, x)
            beta = np.einsum("ji,ji->j", y, y)
            gamma = np.einsum("ji,ji->j", x, y)
            active = np.abs(gamma) > np.maximum(ORTHO_TOL * np.sqrt(alpha * beta), floor)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            x, y = x[active], y[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            sign = np.where(zeta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            at[p] = c * x - s * y
            at[q] = s * x + c * y
            vx = vt[p]
            vy = vt[q]
            vt[p] = c * vx - s * vy
            vt[q] = s * vx + c * vy
        if not rotated:
            return at.T.copy(), vt.T.copy()
    raise ConvergenceError(
        f"Jacobi SVD did not converge after {MAX_SWEEPS} sweeps (matrix Frobenius norm {norm:.6g})"
    )


def _complete_basis(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns of ``u`` not flagged ``good`` with an orthonormal completion."""
    m = u.shape[0]
    basis = [u[:, j] for j in range(u.shape[1]) if good[j]]
    out = u.copy()
    candidates = iter(range(m))
    for j in np.flatnonzero(~good):
        while True:
            e = np.zeros(m)
            e[next(candidates)] = 1.0
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 1e-8:
                e /= nrm
                break
        basis.append(e)
        out[:, j] = e
    return out


def svd(w) -> SvdResult:
    """Thin singular value decomposition by one-sided Jacobi rotations.

    Singular values come back in descending order (stable among ties). The
    sign of each singular pair is fixed so that the largest-magnitude entry
    of every left vector is positive.

    Raises:
        ConvergenceError: if the rotations have not converged after 60 sweeps.
    """
    w = as_matrix(w, "W")
    if not np.all(np.isfinite(w)):
        raise ValueError("svd input contains non-finite entries")
    d1, d2 = w.shape
    wide = d1 < d2
    a = w.T if wide else w
    norm = frobenius_norm(a)
    rotated, v = _jacobi_columns(a, norm)

    sigma = np.sqrt(np.einsum("ij,ij->j", rotated, rotated))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    rotated = rotated[:, order]
    v = v[:, order]

    good = sigma > max(norm, np.finfo(float).tiny) * 1e-14 * max(a.shape)
    u = np.zeros_like(rotated)
    u[:, good] = rotated[:, good] / sigma[good]
    if not good.all():
        u = _complete_basis(u, good)
        sigma = np.where(good, sigma, 0.0)

    left, right = (v, u) if wide else (u, v)
    pivot = np.argmax(np.abs(left), axis=0)
    signs = np.where(left[pivot, np.arange(left.shape[1])] < 0.0, -1.0, 1.0)
    left = np.ascontiguousarray(left * signs)
    right = np.ascontiguousarray(right * signs)
    return SvdResult(sigma, left, right)
