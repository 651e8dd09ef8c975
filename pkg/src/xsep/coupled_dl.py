"""Coupled dictionary learning for co-located visual / X-ray patches.

The model is ``Y = Psi_c Z`` for the visual patches and
``X = Phi_c Z + Phi V`` for the X-ray patches. Learning alternates a sparse
coding step (mOMP on the stacked system ``[Y; X] = [[Psi_c, 0], [Phi_c, Phi]] [Z; V]``)
with closed-form minimum-norm least-squares dictionary updates.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ArgumentError, NumericalError
from .momp import GroupedDictionary, SparsityBudget, momp_batch
from .numerics import min_norm_right_solve

log = logging.getLogger(__name__)


@dataclass
class DictionaryTriple:
    """Visual common ``psi_c`` (n x gamma), X-ray common ``phi_c`` (n x gamma)
    and X-ray innovation ``phi`` (n x d) dictionaries."""

    psi_c: np.ndarray
    phi_c: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.psi_c = np.asarray(self.psi_c, dtype=np.float64)
        self.phi_c = np.asarray(self.phi_c, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        n, g = self.psi_c.shape
        if self.phi_c.shape != (n, g) or self.phi.shape[0] != n:
            raise ArgumentError(
                f"inconsistent dictionary shapes {self.psi_c.shape}, {self.phi_c.shape}, {self.phi.shape}"
            )
        for a in (self.psi_c, self.phi_c, self.phi):
            if not np.all(np.isfinite(a)):
                raise ArgumentError("dictionary contains non-finite entries")

    @property
    def n(self) -> int:
        return self.psi_c.shape[0]

    @property
    def gamma(self) -> int:
        return self.psi_c.shape[1]

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    @property
    def phi_bar(self):
        return np.hstack([self.phi_c, self.phi])

    def stacked(self):
        """The (2n) x (gamma + d) coding matrix ``[[psi_c, 0], [phi_c, phi]]``."""
        top = np.hstack([self.psi_c, np.zeros((self.n, self.d))])
        return np.vstack([top, self.phi_bar])

    def grouped(self) -> GroupedDictionary:
        return GroupedDictionary.stacked(self.stacked(), self.gamma)

    @classmethod
    def from_stacked(cls, theta, n, gamma):
        return cls(theta[:n, :gamma].copy(), theta[n:, :gamma].copy(), theta[n:, gamma:].copy())

    def copy(self):
        return DictionaryTriple(self.psi_c.copy(), self.phi_c.copy(), self.phi.copy())

    def column_norms(self):
        common = np.sqrt((self.psi_c**2).sum(axis=0) + (self.phi_c**2).sum(axis=0))
        return common, np.linalg.norm(self.phi, axis=0)


@dataclass
class TrainingSet:
    """Co-located vectorised patches, one column per sample."""

    Y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.Y.ndim != 2 or self.Y.shape != self.X.shape:
            raise ArgumentError(f"Y {self.Y.shape} and X {self.X.shape} must be equal-shape matrices")
        if not (np.all(np.isfinite(self.Y)) and np.all(np.isfinite(self.X))):
            raise ArgumentError("training data contains non-finite entries")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def t(self) -> int:
        return self.Y.shape[1]

    def stacked(self):
        return np.vstack([self.Y, self.X])

    @classmethod
    def from_patches(cls, Y, X):
        """Build a training set with the per-column DC removed."""
        Y = np.asarray(Y, dtype=np.float64)
        X = np.asarray(X, dtype=np.float64)
        return cls(Y - Y.mean(axis=0), X - X.mean(axis=0))


@dataclass
class CodeMatrices:
    Z: np.ndarray
    V: np.ndarray

    @property
    def Vbar(self):
        return np.vstack([self.Z, self.V])

    def copy(self):
        return CodeMatrices(self.Z.copy(), self.V.copy())


@dataclass
class TrainConfig:
    s_z: int
    s_v: int
    gamma: int
    d: int
    max_iters: int = 100
    objective_tol: float = 1e-6
    dead_atom_replacement: bool = True
    init: str = "dct"
    seed: int = 0
    # keep the previous code of a column when greedy re-coding does worse
    keep_better_codes: bool = True
    # on stalled progress, try swapping the least useful atom of each group
    # for the worst-represented residual direction; kept only if it helps
    swap_stalled_atoms: bool = True
    stall_tol: float = 1e-3
    ridge: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ArgumentError("max_iters must be >= 1")
        if self.init not in ("dct", "random", "data"):
            raise ArgumentError(f"unknown init {self.init!r}")
        SparsityBudget(self.s_z, self.s_v)

    @property
    def budget(self):
        return SparsityBudget(self.s_z, self.s_v)


@dataclass
class TrainResult:
    dictionaries: DictionaryTriple
    codes: CodeMatrices
    trace: list = field(default_factory=list)


def _dct_1d(p, q):
    i = np.arange(p)[:, None]
    k = np.arange(q)[None, :]
    D = np.cos(np.pi * k * (i + 0.5) / q)
    D[:, 1:] -= D[:, 1:].mean(axis=0)
    return D / np.linalg.norm(D, axis=0)


def _isqrt(x, what):
    r = int(round(np.sqrt(x)))
    if r * r != x:
        raise ArgumentError(f"{what} = {x} is not a perfect square")
    return r


def init_overcomplete_dct(n, atoms):
    """2-D overcomplete DCT dictionary of shape ``(n, atoms)``.

    Kronecker product of a ``sqrt(n) x sqrt(atoms)`` 1-D overcomplete DCT with
    itself. Every non-constant 1-D atom is mean-free, every column has unit
    norm and the first column is constant.
    """
    if atoms < n:
        raise ArgumentError(f"atoms ({atoms}) must be >= patch dimension ({n})")
    p = _isqrt(n, "patch dimension")
    q = _isqrt(atoms, "atom count")
    D1 = _dct_1d(p, q)
    return np.kron(D1, D1)


def normalize_triple(triple: DictionaryTriple, codes: CodeMatrices | None = None):
    """Scale stacked common columns ``[psi_c_j; phi_c_j]`` and innovation
    columns ``phi_j`` to unit norm, moving the inverse scale into the codes.

    Zero columns are left untouched.
    """
    common, innov = triple.column_norms()
    sc = np.where(common > 0, common, 1.0)
    si = np.where(innov > 0, innov, 1.0)
    out = DictionaryTriple(triple.psi_c / sc, triple.phi_c / sc, triple.phi / si)
    if codes is None:
        return out
    return out, CodeMatrices(codes.Z * sc[:, None], codes.V * si[:, None])


def initial_dictionaries(cfg: TrainConfig, data: TrainingSet) -> DictionaryTriple:
    n = data.n
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "dct":
        triple = DictionaryTriple(
            init_overcomplete_dct(n, cfg.gamma),
            init_overcomplete_dct(n, cfg.gamma),
            init_overcomplete_dct(n, cfg.d),
        )
    elif cfg.init == "random":
        triple = DictionaryTriple(
            rng.standard_normal((n, cfg.gamma)),
            rng.standard_normal((n, cfg.gamma)),
            rng.standard_normal((n, cfg.d)),
        )
    else:
        S = data.stacked()
        norms = np.linalg.norm(S, axis=0)
        pool = np.flatnonzero(norms > 0)
        if pool.size == 0:
            raise ArgumentError("cannot initialise from all-zero training data")
        cols = rng.choice(pool, size=cfg.gamma, replace=pool.size < cfg.gamma)
        xnorms = np.linalg.norm(data.X, axis=0)
        xpool = np.flatnonzero(xnorms > 0)
        if xpool.size == 0:
            raise ArgumentError("cannot initialise from all-zero X-ray data")
        icols = rng.choice(xpool, size=cfg.d, replace=xpool.size < cfg.d)
        triple = DictionaryTriple(data.Y[:, cols], data.X[:, cols], data.X[:, icols])
    return normalize_triple(triple)


def residual(data: TrainingSet, triple: DictionaryTriple, codes: CodeMatrices, mask=None):
    """Stacked residual ``[Y - Psi_c Z; X - Phi_c Z - Phi V]`` (optionally masked)."""
    RY = data.Y - triple.psi_c @ codes.Z
    RX = data.X - triple.phi_c @ codes.Z - triple.phi @ codes.V
    if mask is not None:
        RY = RY * mask
        RX = RX * mask
    return RY, RX


def objective(data: TrainingSet, triple: DictionaryTriple, codes: CodeMatrices, mask=None):
    """``0.5 ||Y - Psi_c Z||_F^2 + 0.5 ||X - Phi_c Z - Phi V||_F^2`` (Hadamard-masked if given)."""
    RY, RX = residual(data, triple, codes, mask)
    return 0.5 * float(np.sum(RY * RY) + np.sum(RX * RX))


def _split_coefs(coefs, gamma):
    return CodeMatrices(coefs[:gamma].copy(), coefs[gamma:].copy())


def sparse_code_step(data: TrainingSet, triple: DictionaryTriple, budget: SparsityBudget, masks=None):
    """Code every training column with mOMP against the stacked dictionary."""
    if data.n != triple.n:
        raise ArgumentError(f"patch dimension {data.n} does not match dictionaries ({triple.n})")
    m = None if masks is None else np.vstack([masks, masks])
    coefs, _ = momp_batch(data.stacked(), triple.grouped(), budget, m)
    return _split_coefs(coefs, triple.gamma)


def finalize_update(data, psi_c, phi_bar, codes, prev=None, replace_dead=True, mask=None):
    """Shared tail of both dictionary updates: dead-atom handling, then joint
    renormalisation with the inverse scales moved into the codes."""
    gamma = codes.Z.shape[0]
    triple = DictionaryTriple(psi_c, phi_bar[:, :gamma], phi_bar[:, gamma:])
    dead_c = np.flatnonzero(~codes.Z.any(axis=1))
    dead_i = np.flatnonzero(~codes.V.any(axis=1))
    if dead_c.size or dead_i.size:
        _fill_dead(data, triple, codes, dead_c, dead_i, prev, replace_dead, mask)
    return normalize_triple(triple, codes)


def _fill_dead(data, triple, codes, dead_c, dead_i, prev, replace_dead, mask):
    n = triple.n
    order = np.zeros(0, dtype=np.int64)
    if replace_dead:
        RY, RX = residual(data, triple, codes, mask)
        err = np.sum(RY * RY, axis=0) + np.sum(RX * RX, axis=0)
        order = np.argsort(-err, kind="stable")
        order = order[err[order] > 0]
    pos = 0
    for j in dead_c:
        col = None
        while replace_dead and pos < order.size and col is None:
            tau = order[pos]
            pos += 1
            cand = np.concatenate([RY[:, tau], RX[:, tau]])
            if np.any(cand):
                col = cand
        if col is None:
            if prev is None:
                raise NumericalError(f"collapsed codes: common atom {j} unused and no fallback")
            col = np.concatenate([prev.psi_c[:, j], prev.phi_c[:, j]])
        col = col / np.linalg.norm(col)
        triple.psi_c[:, j] = col[:n]
        triple.phi_c[:, j] = col[n:]
    for j in dead_i:
        col = None
        while replace_dead and pos < order.size and col is None:
            tau = order[pos]
            pos += 1
            if np.any(RX[:, tau]):
                col = RX[:, tau].copy()
        if col is None:
            if prev is None:
                raise NumericalError(f"collapsed codes: innovation atom {j} unused and no fallback")
            col = prev.phi[:, j]
        triple.phi[:, j] = col / np.linalg.norm(col)
    log.debug("dead atoms common=%d innovation=%d", dead_c.size, dead_i.size)


def dictionary_update(data: TrainingSet, codes: CodeMatrices, prev: DictionaryTriple | None = None,
                      replace_dead=True):
    """Closed-form minimum-norm dictionary update for fixed codes.

    ``Psi_c`` solves ``min ||Y - Psi_c Z||_F`` and ``[Phi_c Phi]`` solves
    ``min ||X - [Phi_c Phi] [Z; V]||_F``, both taking the minimum-Frobenius-norm
    solution when the codes are rank deficient. Unused atoms are replaced by
    the worst-represented training residual (or kept from ``prev``) and the
    result is renormalised.

    Returns
    -------
    (DictionaryTriple, CodeMatrices)
        The new dictionaries and the codes rescaled to match them.
    """
    if not np.any(codes.Z) or not np.any(codes.Vbar):
        raise NumericalError("collapsed codes")
    psi_c = min_norm_right_solve(data.Y, codes.Z)
    phi_bar = min_norm_right_solve(data.X, codes.Vbar)
    return finalize_update(data, psi_c, phi_bar, codes.copy(), prev, replace_dead)


def _keep_better(data, triple, new, old, mask):
    """Per column, keep ``old`` when it represents the data strictly better."""
    RYn, RXn = residual(data, triple, new, mask)
    RYo, RXo = residual(data, triple, old, mask)
    en = np.sum(RYn * RYn, axis=0) + np.sum(RXn * RXn, axis=0)
    eo = np.sum(RYo * RYo, axis=0) + np.sum(RXo * RXo, axis=0)
    worse = eo < en
    if not np.any(worse):
        return new
    Z = np.where(worse, old.Z, new.Z)
    V = np.where(worse, old.V, new.V)
    return CodeMatrices(Z, V)


def _removal_costs(A, C, R, mask):
    """Objective increase from dropping each atom (column of ``A``, row of ``C``)."""
    cross = np.sum((A.T @ R) * C, axis=1)
    if mask is None:
        own = np.sum(A * A, axis=0) * np.sum(C * C, axis=1)
    else:
        own = np.sum(C * C * ((A * A).T @ mask), axis=1)
    return 0.5 * own + cross


def _swap_proposal(data, triple, codes, mask):
    RY, RX = residual(data, triple, codes, mask)
    ey = np.sum(RY * RY, axis=0)
    ex = np.sum(RX * RX, axis=0)
    if not np.any(ey) and not np.any(ex):
        return None
    triple = triple.copy()
    codes = codes.copy()
    n = triple.n
    if np.any(ey):
        tau = int(np.argmax(ey + ex))
        top = np.vstack([triple.psi_c, triple.phi_c])
        Rs = np.vstack([RY, RX])
        m2 = None if mask is None else np.vstack([mask, mask])
        j = int(np.argmin(_removal_costs(top, codes.Z, Rs, m2)))
        col = Rs[:, tau] / np.linalg.norm(Rs[:, tau])
        triple.psi_c[:, j] = col[:n]
        triple.phi_c[:, j] = col[n:]
        codes.Z[j] = 0.0
        ex[tau] = 0.0
    if np.any(ex):
        tau = int(np.argmax(ex))
        j = int(np.argmin(_removal_costs(triple.phi, codes.V, RX, mask)))
        triple.phi[:, j] = RX[:, tau] / np.linalg.norm(RX[:, tau])
        codes.V[j] = 0.0
    return triple, codes


def alternate(data, cfg: TrainConfig, code_step, update_step, mask=None, init=None):
    """Generic alternation shared by the plain and the crack-weighted learners."""
    if data.t < cfg.gamma + cfg.d:
        warnings.warn(
            f"only {data.t} training samples for {cfg.gamma + cfg.d} atoms", RuntimeWarning, stacklevel=3
        )

    def step(triple, codes):
        new = code_step(data, triple)
        if cfg.keep_better_codes and codes is not None:
            new = _keep_better(data, triple, new, codes, mask)
        triple, codes = update_step(data, new, triple)
        return triple, codes, objective(data, triple, codes, mask)

    triple = initial_dictionaries(cfg, data) if init is None else normalize_triple(init.copy())
    codes = None
    trace = []
    for k in range(cfg.max_iters):
        triple, codes, obj = step(triple, codes)
        stalled = len(trace) > 0 and trace[-1] - obj < cfg.stall_tol * trace[-1]
        if cfg.swap_stalled_atoms and stalled and obj > 0.0:
            proposal = _swap_proposal(data, triple, codes, mask)
            if proposal is not None:
                t2, c2, o2 = step(*proposal)
                if o2 < obj:
                    triple, codes, obj = t2, c2, o2
                    log.debug("iter=%d swap accepted", k + 1)
        trace.append(obj)
        log.info("iter=%d objective=%.12g", k + 1, obj)
        if obj == 0.0:
            break
        if len(trace) > 1 and trace[-2] - obj < cfg.objective_tol * trace[-2]:
            break
    return TrainResult(triple, codes, trace)


def train_coupled(data: TrainingSet, cfg: TrainConfig, init: DictionaryTriple | None = None) -> TrainResult:
    """Learn a coupled dictionary triple by alternating mOMP coding and
    closed-form dictionary updates.

    Stops after ``cfg.max_iters`` outer iterations or once an iteration lowers
    the objective by less than ``cfg.objective_tol`` relative.
    """
    budget = cfg.budget

    def code(d, triple):
        return sparse_code_step(d, triple, budget)

    def update(d, codes, prev):
        return dictionary_update(d, codes, prev, cfg.dead_atom_replacement)

    return alternate(data, cfg, code, update, init=init)


def with_iters(cfg: TrainConfig, iters: int) -> TrainConfig:
    return replace(cfg, max_iters=iters)
