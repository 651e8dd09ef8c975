"""Modified orthogonal matching pursuit (mOMP).

Greedy pursuit over a stacked dictionary whose columns are split into a
*common* group and an *innovation* group, each with its own sparsity budget.
At every iteration the admissible column with the largest absolute
correlation with the residual is selected (ties go to the lower column
index), the coefficients are refitted by least squares over the full support
and the residual is updated.

The pursuit itself lives in a numba kernel. A single call and a batched call
run the same per-column code, so results are bit-identical whatever the
batch composition or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ArgumentError, NumericalError

# the bundled TBB is too old for numba; fall back quietly
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

EARLY_EXIT = 1e-12


@dataclass(frozen=True)
class SparsityBudget:
    s_z: int
    s_v: int

    def __post_init__(self):
        if self.s_z < 0 or self.s_v < 0 or self.s_z + self.s_v < 1:
            raise ArgumentError(f"invalid sparsity budget ({self.s_z}, {self.s_v})")

    @property
    def total(self) -> int:
        return self.s_z + self.s_v


@dataclass(frozen=True)
class GroupedDictionary:
    """Matrix ``theta`` with column index sets for the two code groups."""

    theta: np.ndarray
    common: np.ndarray
    innovation: np.ndarray
    is_common: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        common = np.asarray(self.common, dtype=np.int64).ravel()
        innovation = np.asarray(self.innovation, dtype=np.int64).ravel()
        K = theta.shape[1]
        idx = np.concatenate([common, innovation])
        if idx.size != K or not np.array_equal(np.sort(idx), np.arange(K)):
            raise ArgumentError("common and innovation index sets must partition the columns")
        if not np.all(np.isfinite(theta)):
            raise ArgumentError("dictionary contains non-finite entries")
        if np.any(~theta.any(axis=0)):
            raise ArgumentError("dictionary has an all-zero column")
        is_common = np.zeros(K, dtype=np.bool_)
        is_common[common] = True
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "common", common)
        object.__setattr__(self, "innovation", innovation)
        object.__setattr__(self, "is_common", is_common)

    @classmethod
    def stacked(cls, theta, n_common):
        """Common group = first ``n_common`` columns, innovation = the rest."""
        K = np.shape(theta)[1]
        return cls(theta, np.arange(n_common), np.arange(n_common, K))

    def check_budget(self, budget: SparsityBudget):
        if budget.s_z > self.common.size or budget.s_v > self.innovation.size:
            raise ArgumentError(
                f"budget ({budget.s_z}, {budget.s_v}) exceeds group sizes "
                f"({self.common.size}, {self.innovation.size})"
            )


@dataclass
class SparseCode:
    z: np.ndarray
    v: np.ndarray
    support: list


@numba.njit(cache=True)
def _momp_column(thetaT, b, lam, is_common, s_z, s_v, coef, support):
    K, m = thetaT.shape
    s_w = s_z + s_v
    coef[:] = 0.0
    support[:] = -1
    bm = np.empty(m)
    bnorm2 = 0.0
    for i in range(m):
        bm[i] = b[i] * lam[i]
        bnorm2 += bm[i] * bm[i]
    if bnorm2 == 0.0:
        return 0
    stop = (EARLY_EXIT * EARLY_EXIT) * bnorm2
    r = bm.copy()
    selected = np.zeros(K, dtype=np.bool_)
    sub = np.zeros((m, s_w))
    w = np.zeros(0)
    rcond = max(m, s_w) * np.finfo(np.float64).eps
    lz = 0
    lv = 0
    nsel = 0
    for _ in range(s_w):
        best = -1
        bestval = -1.0
        for k in range(K):
            if selected[k]:
                continue
            if is_common[k]:
                if lz >= s_z:
                    continue
            elif lv >= s_v:
                continue
            acc = 0.0
            for i in range(m):
                acc += thetaT[k, i] * r[i]
            acc = abs(acc)
            if acc > bestval:
                bestval = acc
                best = k
        if best < 0:
            break
        selected[best] = True
        if is_common[best]:
            lz += 1
        else:
            lv += 1
        for i in range(m):
            sub[i, nsel] = thetaT[best, i] * lam[i]
        support[nsel] = best
        nsel += 1
        A = np.ascontiguousarray(sub[:, :nsel])
        w = np.linalg.lstsq(A, bm, rcond)[0]
        rnorm2 = 0.0
        for i in range(m):
            acc = bm[i]
            for j in range(nsel):
                acc -= A[i, j] * w[j]
            r[i] = acc
            rnorm2 += acc * acc
        if rnorm2 < stop:
            break
    for j in range(nsel):
        coef[support[j]] = w[j]
    return nsel


@numba.njit(parallel=True, cache=True)
def _momp_batch(thetaT, BT, LT, is_common, s_z, s_v, coefs, supports):
    shared_mask = LT.shape[0] == 1
    for j in numba.prange(BT.shape[0]):
        lam = LT[0] if shared_mask else LT[j]
        _momp_column(thetaT, BT[j], lam, is_common, s_z, s_v, coefs[j], supports[j])


def momp_batch(B, dictionary: GroupedDictionary, budget: SparsityBudget, masks=None):
    """Run mOMP independently on every column of ``B``.

    Parameters
    ----------
    B : (m, t) array
        Signals, one per column.
    dictionary : GroupedDictionary
    budget : SparsityBudget
    masks : (m, t) array of {0, 1}, optional
        Row masks. Column ``j`` is coded against ``theta`` and ``B[:, j]``
        with the rows where ``masks[:, j] == 0`` zeroed.

    Returns
    -------
    coefs : (K, t) array
        Coefficients indexed like the columns of ``theta``.
    supports : (t, s_z + s_v) int array
        Selected columns in selection order, padded with -1.
    """
    dictionary.check_budget(budget)
    theta = dictionary.theta
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    m, t = B.shape
    if m != theta.shape[0]:
        raise ArgumentError(f"signal length {m} does not match dictionary rows {theta.shape[0]}")
    if not np.all(np.isfinite(B)):
        raise ArgumentError("signals contain non-finite entries")
    if masks is None:
        LT = np.ones((1, m))
    else:
        LT = np.ascontiguousarray(np.asarray(masks, dtype=np.float64).T)
        if LT.shape != (t, m):
            raise ArgumentError(f"mask shape {LT.shape[::-1]} does not match signals {B.shape}")
    thetaT = np.ascontiguousarray(theta.T)
    BT = np.ascontiguousarray(B.T)
    coefs = np.zeros((t, theta.shape[1]))
    supports = np.full((t, budget.total), -1, dtype=np.int64)
    _momp_batch(thetaT, BT, LT, dictionary.is_common, budget.s_z, budget.s_v, coefs, supports)
    if not np.all(np.isfinite(coefs)):
        raise NumericalError("mOMP produced non-finite coefficients")
    return coefs.T, supports


def momp(b, dictionary: GroupedDictionary, budget: SparsityBudget) -> SparseCode:
    """Code a single signal ``b`` with separate budgets on the two groups."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise ArgumentError("momp expects a 1-D signal")
    coefs, supports = momp_batch(b[:, None], dictionary, budget)
    coef = coefs[:, 0]
    support = [int(k) for k in supports[0] if k >= 0]
    return SparseCode(coef[dictionary.common], coef[dictionary.innovation], support)
