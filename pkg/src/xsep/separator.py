"""Per-patch X-ray separation with photographs as side information.

Each patch solves the weighted basis pursuit

    minimize    ||z1||_1 + ||z2||_1 + 2 ||v||_1
    subject to  m  = Phi_c z1 + Phi_c z2 + 2 Phi v
                y1 = Psi_c z1
                y2 = Psi_c z2

The weights are folded into the columns of the constraint matrix, which
leaves a plain basis pursuit solved by ADMM: exact projection onto the affine
constraint set (from a thin SVD computed once per dictionary triple),
soft-thresholding, and a scaled dual update.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .coupled_dl import DictionaryTriple
from .errors import ArgumentError, InfeasibleError
from .numerics import thin_svd

log = logging.getLogger(__name__)


@dataclass
class BPConfig:
    rho: float = 1.0
    # primal/dual residual tolerances, relative to ||[m; y1; y2]||
    feas_tol: float = 1e-4
    dual_tol: float = 1e-4
    max_iters: int = 5000
    # relative distance of the right-hand side from range(A) counted as infeasible
    range_tol: float = 1e-8
    # residual balancing of rho; the projection does not depend on rho
    adaptive_rho: bool = True
    # rho is frozen after this many iterations so the usual ADMM convergence applies
    adapt_until: int = 200
    # replace an out-of-range right-hand side by its projection instead of raising
    project_infeasible: bool = False

    def __post_init__(self):
        if min(self.rho, self.feas_tol, self.dual_tol, self.range_tol) <= 0 or self.max_iters < 1:
            raise ArgumentError("BPConfig parameters must be positive")


@dataclass
class SeparationProblem:
    m: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    dictionaries: DictionaryTriple


@dataclass
class SeparationSolution:
    z1c: np.ndarray
    z2c: np.ndarray
    v: np.ndarray
    objective: float
    constraint_residual: float
    iterations: int = 0
    converged: bool = True
    projected: bool = False


class SeparationOperator:
    """Constraint matrix and its factorisation for one dictionary triple.

    Immutable after construction, so one instance can serve every patch of
    an image.
    """

    def __init__(self, triple: DictionaryTriple):
        self.triple = triple
        n, g, d = triple.n, triple.gamma, triple.d
        Zg = np.zeros((n, g))
        Zd = np.zeros((n, d))
        self.A = np.block([
            [triple.phi_c, triple.phi_c, 2.0 * triple.phi],
            [triple.psi_c, Zg, Zd],
            [Zg, triple.psi_c, Zd],
        ])
        self.weights = np.concatenate([np.ones(2 * g), np.full(d, 2.0)])
        self.theta = self.A / self.weights
        self.svd = thin_svd(self.theta)
        self.sizes = (n, g, d)

    @property
    def n_vars(self):
        return self.A.shape[1]

    def rhs(self, m, y1, y2):
        return np.concatenate([m, y1, y2], axis=0)

    def range_residual(self, B):
        """Norm of the part of each column of ``B`` outside ``range(A)``."""
        G = self.svd.G
        R = B - G @ (G.T @ B)
        return np.linalg.norm(R, axis=0)

    def min_norm(self, B):
        s = self.svd
        return s.U @ ((s.G.T @ B) / s.s[:, None])

    def project(self, X, Q):
        """Project the columns of ``X`` onto ``{w : theta w = b}`` given ``Q = theta^+ b``."""
        U = self.svd.U
        return X - U @ (U.T @ X) + Q

    def split(self, W):
        n, g, d = self.sizes
        return W[:g], W[g:2 * g], W[2 * g:]


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def solve_batch(op: SeparationOperator, B, cfg: BPConfig):
    """Weighted basis pursuit for every column of ``B`` (shape ``3n x t``).

    Returns
    -------
    W : (2 gamma + d, t) array
        Unweighted solutions ``[z1c; z2c; v]``.
    info : dict
        Per-column ``iterations``, ``converged``, ``projected``, ``range_residual``.
    """
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != op.A.shape[0]:
        raise ArgumentError(f"right-hand side has {B.shape[0]} rows, expected {op.A.shape[0]}")
    if not np.all(np.isfinite(B)):
        raise ArgumentError("right-hand side contains non-finite entries")
    N = op.n_vars
    t = B.shape[1]
    scale = np.linalg.norm(B, axis=0)
    live = scale > 0
    Bn = np.zeros_like(B)
    Bn[:, live] = B[:, live] / scale[live]
    rres = op.range_residual(Bn)
    projected = rres > cfg.range_tol
    if np.any(projected) and not cfg.project_infeasible:
        raise InfeasibleError("right-hand side is not in the range of the constraint matrix",
                              float(np.max(rres * scale)))

    Wn = np.zeros((N, t))
    iters = np.zeros(t, dtype=np.int64)
    converged = ~live
    idx = np.flatnonzero(live)
    Q = op.min_norm(Bn[:, idx])
    z = Q.copy()
    u = np.zeros_like(z)
    rho = np.full(idx.size, float(cfg.rho))
    for k in range(1, cfg.max_iters + 1):
        x = op.project(z - u, Q)
        z_old = z
        z = _soft(x + u, 1.0 / rho)
        u = u + x - z
        r = np.linalg.norm(x - z, axis=0)
        s = rho * np.linalg.norm(z - z_old, axis=0)
        done = (r <= cfg.feas_tol) & (s <= cfg.dual_tol)
        if k == cfg.max_iters:
            done[:] = True
        if np.any(done):
            cols = idx[done]
            Wn[:, cols] = x[:, done]
            iters[cols] = k
            converged[cols] = (r[done] <= cfg.feas_tol) & (s[done] <= cfg.dual_tol)
            keep = ~done
            idx, Q, z, u, rho, r, s = idx[keep], Q[:, keep], z[:, keep], u[:, keep], rho[keep], r[keep], s[keep]
            if idx.size == 0:
                break
        if cfg.adaptive_rho and k % 10 == 0 and k <= cfg.adapt_until:
            up = r > 10.0 * s
            down = s > 10.0 * r
            rho = np.where(up, rho * 2.0, np.where(down, rho / 2.0, rho))
            u = u * np.where(up, 0.5, np.where(down, 2.0, 1.0))
    W = Wn * scale / op.weights[:, None]
    if not np.all(converged):
        bad = int(np.count_nonzero(~converged))
        warnings.warn(f"basis pursuit did not converge for {bad} column(s) in {cfg.max_iters} iterations",
                      RuntimeWarning, stacklevel=2)
    return W, {"iterations": iters, "converged": converged, "projected": projected,
               "range_residual": rres * scale}


def solve_separation(p: SeparationProblem, cfg: BPConfig | None = None,
                     op: SeparationOperator | None = None) -> SeparationSolution:
    """Solve the side-informed separation problem for one patch.

    Raises
    ------
    InfeasibleError
        If ``[m; y1; y2]`` is outside the range of the constraint matrix and
        ``cfg.project_infeasible`` is off.
    """
    cfg = cfg or BPConfig()
    op = op or SeparationOperator(p.dictionaries)
    n = op.sizes[0]
    for name, a in (("m", p.m), ("y1", p.y1), ("y2", p.y2)):
        if np.shape(a) != (n,):
            raise ArgumentError(f"{name} must have length {n}, got shape {np.shape(a)}")
    b = op.rhs(np.asarray(p.m, float), np.asarray(p.y1, float), np.asarray(p.y2, float))
    W, info = solve_batch(op, b[:, None], cfg)
    w = W[:, 0]
    z1, z2, v = op.split(w)
    obj = float(np.abs(z1).sum() + np.abs(z2).sum() + 2.0 * np.abs(v).sum())
    res = float(np.linalg.norm(op.A @ w - b))
    return SeparationSolution(z1.copy(), z2.copy(), v.copy(), obj, res, int(info["iterations"][0]),
                              bool(info["converged"][0]), bool(info["projected"][0]))


def reconstruct_patches(sol: SeparationSolution, triple: DictionaryTriple, include_v=True):
    """X-ray patches ``x_i = Phi_c z_ic (+ Phi v)``."""
    x1 = triple.phi_c @ sol.z1c
    x2 = triple.phi_c @ sol.z2c
    if include_v:
        pv = triple.phi @ sol.v
        x1 = x1 + pv
        x2 = x2 + pv
    return x1, x2
