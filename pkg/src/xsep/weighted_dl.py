"""Crack-aware coupled dictionary learning.

Training pixels flagged as cracks (mask entry 0) are excluded from the
objective through a Hadamard product with the binary mask. Sparse coding
masks both the signal and the dictionary rows per column; the dictionary
update solves one small normal-equation system per dictionary row, built only
from the samples in which that pixel is valid.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .coupled_dl import (
    CodeMatrices,
    DictionaryTriple,
    TrainConfig,
    TrainingSet,
    TrainResult,
    alternate,
    finalize_update,
)
from .errors import ArgumentError, NumericalError
from .momp import SparsityBudget, momp_batch
from .numerics import EPS

log = logging.getLogger(__name__)

RIDGE_SCALE = 1e-8


@dataclass
class MaskedTrainingSet(TrainingSet):
    """Training patches plus a binary validity mask of the same shape."""

    mask: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.mask is None:
            self.mask = np.ones_like(self.Y)
        mask = np.asarray(self.mask, dtype=np.float64)
        if mask.shape != self.Y.shape:
            raise ArgumentError(f"mask shape {mask.shape} does not match data {self.Y.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ArgumentError("mask entries must be 0 or 1")
        self.mask = mask

    def row_support(self):
        """``|S_i|``: number of valid samples per pixel row."""
        return self.mask.sum(axis=1).astype(np.int64)


def masked_sparse_code_step(data: MaskedTrainingSet, triple: DictionaryTriple, budget: SparsityBudget):
    """mOMP per column on ``[y; x] * [l; l]`` against the row-masked stacked dictionary.

    Returns
    -------
    codes : CodeMatrices
    flagged : ndarray of int
        Columns whose mask is entirely zero; their codes are zero.
    """
    if data.n != triple.n:
        raise ArgumentError(f"patch dimension {data.n} does not match dictionaries ({triple.n})")
    masks = np.vstack([data.mask, data.mask])
    coefs, _ = momp_batch(data.stacked(), triple.grouped(), budget, masks)
    flagged = np.flatnonzero(~data.mask.any(axis=0))
    if flagged.size:
        log.warning("masked_columns=%d all-crack columns coded as zero", flagged.size)
    return CodeMatrices(coefs[: triple.gamma].copy(), coefs[triple.gamma:].copy()), flagged


def _row_solve(T, codes_active, mask, ridge, label, offset_rows=0):
    """Solve ``row_i = c_i A_i^{-1}`` for every row of target ``T``."""
    k, t = codes_active.shape
    out = np.zeros((T.shape[0], k))
    full = codes_active @ codes_active.T
    for i in range(T.shape[0]):
        S = mask[i] != 0
        Zs = codes_active[:, S]
        if 2 * S.sum() >= t:
            # cracks are sparse: subtract the few excluded samples
            Zo = codes_active[:, ~S]
            A = full - Zo @ Zo.T
        else:
            A = Zs @ Zs.T
        c = Zs @ T[i, S]
        ev = np.linalg.eigvalsh(A)
        tol = k * EPS * max(ev[-1], 0.0)
        if ridge:
            A = A + (RIDGE_SCALE * np.trace(A) / k) * np.eye(k)
        elif ev[0] <= tol:
            raise NumericalError(
                f"{label}: A_{offset_rows + i} is singular (row {offset_rows + i} has |S_i| = {int(S.sum())} "
                f"valid samples for {k} atoms); use more training samples, at least as many valid "
                f"samples per row as atoms (the 64x256 reference setting needs >= 16384 samples)"
            )
        out[i] = scipy.linalg.solve(A, c, assume_a="pos")
    return out


def weighted_dictionary_update(data: MaskedTrainingSet, codes: CodeMatrices, prev: DictionaryTriple | None = None,
                               replace_dead=True, ridge=False):
    """Row-by-row closed-form update of ``Psi_c`` and ``[Phi_c Phi]`` under the crack mask.

    For row ``i`` with valid-sample set ``S_i``,
    ``A_i = sum_{tau in S_i} c_tau c_tau^T`` and
    ``row_i = (sum_{tau in S_i} T(i, tau) c_tau^T) A_i^{-1}``, where ``c`` is ``z``
    for ``Psi_c`` (target ``Y``) and the stacked ``[z; v]`` for ``[Phi_c Phi]``
    (target ``X``). Unused atoms are excluded from the systems and handled
    like in the unweighted update.
    """
    if not np.any(codes.Z) or not np.any(codes.Vbar):
        raise NumericalError("collapsed codes")
    gamma = codes.Z.shape[0]
    used_c = codes.Z.any(axis=1)
    used_bar = np.concatenate([used_c, codes.V.any(axis=1)])
    psi_c = np.zeros((data.n, gamma))
    psi_c[:, used_c] = _row_solve(data.Y, codes.Z[used_c], data.mask, ridge, "psi_c")
    Vbar = codes.Vbar
    phi_bar = np.zeros((data.n, Vbar.shape[0]))
    phi_bar[:, used_bar] = _row_solve(data.X, Vbar[used_bar], data.mask, ridge, "phi_bar")
    return finalize_update(data, psi_c, phi_bar, codes.copy(), prev, replace_dead, mask=data.mask)


def train_weighted(data: MaskedTrainingSet, cfg: TrainConfig, init: DictionaryTriple | None = None) -> TrainResult:
    """Alternate masked mOMP coding and row-wise weighted dictionary updates.

    The traced objective is ``0.5 ||(Y - Psi_c Z) * L||_F^2 + 0.5 ||(X - Phi_c Z - Phi V) * L||_F^2``.
    """
    need = cfg.gamma + cfg.d
    support = data.row_support()
    if support.min() < need:
        warnings.warn(
            f"row {int(np.argmin(support))} has only {int(support.min())} valid samples; "
            f"{need} are needed for invertible row systems",
            RuntimeWarning,
            stacklevel=2,
        )
    budget = cfg.budget

    def code(d, triple):
        return masked_sparse_code_step(d, triple, budget)[0]

    def update(d, codes, prev):
        return weighted_dictionary_update(d, codes, prev, cfg.dead_atom_replacement, cfg.ridge)

    return alternate(data, cfg, code, update, mask=data.mask, init=init)
