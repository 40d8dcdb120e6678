"""Rank, pseudoinverse, null space and minimum-norm least squares.

All routines share one SVD-based factorization and a relative cutoff
``rtol * sigma_max`` so that rank, pinv and nullspace always agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RTOL = 1e-8


@dataclass(frozen=True)
class RankedFactorization:
    singular_values: np.ndarray  # descending
    rank: int
    U: np.ndarray
    range_basis: np.ndarray  # right singular vectors, columns, for sigma > cutoff
    null_basis: np.ndarray  # orthonormal columns spanning the numerical null space
    cutoff: float


def factorize(M, rtol: float = DEFAULT_RTOL) -> RankedFactorization:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        raise ValueError("matrix must be nonempty")
    if rtol <= 0:
        raise ValueError("rtol must be positive")
    # thin SVD keeps U small for tall data matrices; wide matrices need the
    # full V to span their null space
    U, s, Vt = np.linalg.svd(M, full_matrices=M.shape[0] < M.shape[1])
    smax = s[0] if s.size else 0.0
    # floor at the smallest normal float so 1/sigma never overflows
    cutoff = max(rtol * smax, np.finfo(float).tiny)
    rank = int(np.sum(s > cutoff)) if smax > 0 else 0
    V = Vt.T
    return RankedFactorization(
        singular_values=s,
        rank=rank,
        U=U,
        range_basis=V[:, :rank],
        null_basis=V[:, rank:],
        cutoff=cutoff,
    )


def numerical_rank(M, rtol: float = DEFAULT_RTOL) -> int:
    return factorize(M, rtol).rank


def pinv(M, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse with singular values below the cutoff zeroed."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    fac = factorize(M, rtol)
    r = fac.rank
    if r == 0:
        return np.zeros(M.shape[::-1])
    s_inv = 1.0 / fac.singular_values[:r]
    return (fac.range_basis * s_inv) @ fac.U[:, :r].T


def nullspace(M, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Orthonormal null-space basis as columns (``cols x 0`` when full column rank).

    Each basis vector's sign is fixed so that its first entry of (nearly)
    largest magnitude is positive, which makes the output deterministic
    across LAPACK builds.
    """
    N = factorize(M, rtol).null_basis.copy()
    for k in range(N.shape[1]):
        a = np.abs(N[:, k])
        j = int(np.flatnonzero(a >= (1 - 1e-9) * a.max())[0])
        if N[j, k] < 0:
            N[:, k] *= -1
    return N


def lstsq_min_norm(M, z, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Minimum-norm least-squares solution ``pinv(M) @ z``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    z = np.asarray(z, dtype=float)
    if M.shape[0] != z.shape[0]:
        raise ValueError(f"row mismatch: M has {M.shape[0]} rows, z has {z.shape[0]}")
    return pinv(M, rtol) @ z


def normal_equation_solve(M, z, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """``(M^T M)^+ M^T z``; the normal-equation route to the same minimizer.

    The cutoff is applied to ``M^T M`` whose singular values are squares of
    those of ``M``, so ``rtol`` is squared to keep the two routes' ranks aligned.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    z = np.asarray(z, dtype=float)
    MtM = M.T @ M
    return pinv(MtM, max(rtol * rtol, np.finfo(float).eps * MtM.shape[0])) @ (M.T @ z)
