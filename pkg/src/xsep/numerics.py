"""Dense linear algebra kernels: thin SVD, minimum-norm least squares and
minimum-Frobenius-norm right solves used by the dictionary updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NumericalError

EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class ThinSVD:
    """Rank-revealing thin SVD ``M = G @ diag(s) @ U.T``.

    Only singular values above the rank tolerance are kept, so ``G`` is
    ``p x r`` and ``U`` is ``q x r`` with ``r`` the numerical rank.
    """

    G: np.ndarray
    s: np.ndarray
    U: np.ndarray

    @property
    def rank(self) -> int:
        return self.s.shape[0]


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise ArgumentError(f"{name} contains non-finite entries")


def rank_tolerance(shape, smax):
    return max(shape) * EPS * smax


def thin_svd(M) -> ThinSVD:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ArgumentError(f"expected a 2-D matrix, got shape {M.shape}")
    _check_finite("matrix", M)
    p, q = M.shape
    if p == 0 or q == 0:
        return ThinSVD(np.zeros((p, 0)), np.zeros(0), np.zeros((q, 0)))
    G, s, Ut = np.linalg.svd(M, full_matrices=False)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        r = 0
    else:
        r = int(np.count_nonzero(s > rank_tolerance(M.shape, smax)))
    return ThinSVD(G[:, :r].copy(), s[:r].copy(), Ut[:r].T.copy())


def pinv_apply(svd: ThinSVD, b):
    """Apply the Moore-Penrose pseudo-inverse held in ``svd`` to ``b``."""
    return svd.U @ ((svd.G.T @ b) / (svd.s if b.ndim == 1 else svd.s[:, None]))


def least_squares(A, b):
    """Minimum-norm minimiser of ``||b - A w||_2``.

    Parameters
    ----------
    A : (n, k) array
    b : (n,) array

    Returns
    -------
    w : (k,) array
        Among all least-squares minimisers, the one of smallest 2-norm.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or b.shape != (A.shape[0],):
        raise ArgumentError(f"shape mismatch: A {A.shape}, b {b.shape}")
    _check_finite("A", A)
    _check_finite("b", b)
    svd = thin_svd(A)
    if svd.rank == 0:
        return np.zeros(A.shape[1])
    return pinv_apply(svd, b)


def min_norm_right_solve(B, C):
    """Solve ``min_D ||B - D C||_F`` and return the minimum-Frobenius-norm ``D``.

    With ``C = G diag(s) U^T`` this is ``D = B U diag(1/s) G^T``, which reduces
    to ``B C^T (C C^T)^{-1}`` when ``C`` has full row rank.
    """
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if B.ndim != 2 or C.ndim != 2 or B.shape[1] != C.shape[1]:
        raise ArgumentError(f"shape mismatch: B {B.shape}, C {C.shape}")
    _check_finite("B", B)
    if not np.any(C):
        raise NumericalError("empty code matrix")
    svd = thin_svd(C)
    return ((B @ svd.U) / svd.s) @ svd.G.T
