"""Single-scale patch pipeline: overlapping patch grids, DC handling,
per-patch separation and overlap-add averaging.

Grid origins are ``(step * u1, step * u2)`` for ``0 <= u1 < H // step`` and
``0 <= u2 < W // step``. Border patches that run past the image read
edge-replicated pixels. Patches are vectorised row-major.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .coupled_dl import DictionaryTriple
from .errors import ArgumentError
from .separator import BPConfig, SeparationOperator, solve_batch
from .storage import as_image

log = logging.getLogger(__name__)

CHUNK = 4096


@dataclass(frozen=True)
class PatchGridSpec:
    patch_side: int
    step: int

    def __post_init__(self):
        if self.patch_side < 1 or not 1 <= self.step <= self.patch_side:
            raise ArgumentError(f"need 1 <= step <= patch side, got step={self.step}, side={self.patch_side}")

    @property
    def n(self) -> int:
        return self.patch_side * self.patch_side

    def grid_shape(self, H, W):
        return H // self.step, W // self.step

    def padded_shape(self, H, W):
        gh, gw = self.grid_shape(H, W)
        return self.step * (gh - 1) + self.patch_side, self.step * (gw - 1) + self.patch_side


@dataclass
class PatchGrid:
    spec: PatchGridSpec
    H: int
    W: int
    dc: np.ndarray  # (gh, gw)
    residuals: np.ndarray  # (n, gh * gw), columns in row-major grid order

    @property
    def shape(self):
        return self.dc.shape

    def origins(self):
        gh, gw = self.shape
        u1, u2 = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
        return np.stack([u1.ravel(), u2.ravel()], axis=1) * self.spec.step


def extract_grid(img, spec: PatchGridSpec) -> PatchGrid:
    """Cut ``img`` into grid patches; return per-patch DC values and DC-free vectors."""
    img = as_image(img)
    H, W = img.shape
    if H < spec.patch_side or W < spec.patch_side:
        raise ArgumentError(f"image {H}x{W} is smaller than one {spec.patch_side}x{spec.patch_side} patch")
    gh, gw = spec.grid_shape(H, W)
    Hp, Wp = spec.padded_shape(H, W)
    padded = np.pad(img, ((0, max(0, Hp - H)), (0, max(0, Wp - W))), mode="edge")
    p, e = spec.patch_side, spec.step
    win = sliding_window_view(padded, (p, p))[::e, ::e][:gh, :gw]
    P = win.reshape(gh * gw, p * p).T.copy()
    dc = P.mean(axis=0)
    return PatchGrid(spec, H, W, dc.reshape(gh, gw), P - dc)


def overlap_add(patches, spec: PatchGridSpec, H, W, uncovered="edge"):
    """Average co-located pixels of grid patches back into an ``H x W`` image.

    Pixels that no patch reaches (possible at the bottom/right border when
    the grid does not tile the image) are filled from the nearest covered
    row/column (``uncovered="edge"``) or set to zero (``"zero"``).
    """
    P = np.asarray(patches, dtype=np.float64)
    gh, gw = spec.grid_shape(H, W)
    p, e = spec.patch_side, spec.step
    if P.shape != (p * p, gh * gw):
        raise ArgumentError(f"expected patches of shape {(p * p, gh * gw)}, got {P.shape}")
    Hp, Wp = spec.padded_shape(H, W)
    acc = np.zeros((Hp, Wp))
    cnt = np.zeros((Hp, Wp))
    blocks = P.reshape(p, p, gh, gw)
    for di in range(p):
        for dj in range(p):
            acc[di:di + e * gh:e, dj:dj + e * gw:e][:gh, :gw] += blocks[di, dj]
            cnt[di:di + e * gh:e, dj:dj + e * gw:e][:gh, :gw] += 1.0
    ch, cw = min(H, Hp), min(W, Wp)
    out = np.zeros((H, W))
    out[:ch, :cw] = acc[:ch, :cw] / cnt[:ch, :cw]
    if uncovered == "edge":
        out[ch:, :cw] = out[ch - 1, :cw]
        out[:, cw:] = out[:, cw - 1:cw]
    elif uncovered != "zero":
        raise ArgumentError(f"unknown uncovered policy {uncovered!r}")
    return out


def dc_split(m_dc, y1_dc, y2_dc):
    """Split mixture DC values in proportion to the (clamped) visual DCs.

    ``d1 = m * y1 / (y1 + y2)`` and ``d2 = m * y2 / (y1 + y2)`` with negative
    visual DCs clamped to zero and an even split when both are ~0. The larger
    share is computed by the ratio and the smaller one as ``m - larger``; that
    subtraction is exact, so ``d1 + d2 == m`` holds bit for bit.
    """
    m = np.asarray(m_dc, dtype=np.float64)
    a = np.maximum(np.asarray(y1_dc, dtype=np.float64), 0.0)
    b = np.maximum(np.asarray(y2_dc, dtype=np.float64), 0.0)
    s = a + b
    tiny = s < 1e-9
    safe = np.where(tiny, 1.0, s)
    f1 = np.where(tiny, 0.5, a / safe)
    f2 = np.where(tiny, 0.5, b / safe)
    first = f1 >= f2
    big = m * np.clip(np.maximum(f1, f2), 0.5, 1.0)
    small = m - big
    d1 = np.where(first, big, small)
    d2 = np.where(first, small, big)
    if d1.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


def separate_grids(gm: PatchGrid, g1: PatchGrid, g2: PatchGrid, triple: DictionaryTriple, cfg: BPConfig,
                   include_v=True, op: SeparationOperator | None = None):
    """Separate every DC-free mixture patch; returns the two texture patch matrices."""
    if triple.n != gm.spec.n:
        raise ArgumentError(f"dictionary patch dimension {triple.n} does not match grid patches {gm.spec.n}")
    op = op or SeparationOperator(triple)
    cfg = replace(cfg, project_infeasible=True)
    B = np.vstack([gm.residuals, g1.residuals, g2.residuals])
    t = B.shape[1]
    X1 = np.empty((triple.n, t))
    X2 = np.empty((triple.n, t))
    origins = gm.origins()
    n_proj = n_fail = 0
    for start in range(0, t, CHUNK):
        sl = slice(start, min(t, start + CHUNK))
        W, info = solve_batch(op, B[:, sl], cfg)
        z1, z2, v = op.split(W)
        X1[:, sl] = triple.phi_c @ z1
        X2[:, sl] = triple.phi_c @ z2
        if include_v:
            pv = triple.phi @ v
            X1[:, sl] += pv
            X2[:, sl] += pv
        for k in np.flatnonzero(info["projected"] | ~info["converged"]):
            r, c = origins[start + k]
            log.debug("patch_row=%d patch_col=%d projected=%s converged=%s range_residual=%.3e",
                      r, c, bool(info["projected"][k]), bool(info["converged"][k]), info["range_residual"][k])
        n_proj += int(np.count_nonzero(info["projected"]))
        n_fail += int(np.count_nonzero(~info["converged"]))
        log.debug("chunk_start=%d patches=%d mean_iters=%.1f", start, W.shape[1], info["iterations"].mean())
    log.info("patches=%d projected=%d unconverged=%d", t, n_proj, n_fail)
    return X1, X2


def separate_single_scale(m, y1, y2, triple: DictionaryTriple, spec: PatchGridSpec, cfg: BPConfig | None = None,
                          include_v=True):
    """Separate a mixture X-ray ``m`` into two images using visuals ``y1``, ``y2``.

    Every grid patch is DC-removed and separated; the mixture DC is split by
    the visual DCs and added back before overlap-add averaging.
    """
    cfg = cfg or BPConfig()
    m, y1, y2 = as_image(m), as_image(y1), as_image(y2)
    if not (m.shape == y1.shape == y2.shape):
        raise ArgumentError(f"image shapes differ: {m.shape}, {y1.shape}, {y2.shape}")
    gm, g1, g2 = (extract_grid(a, spec) for a in (m, y1, y2))
    X1, X2 = separate_grids(gm, g1, g2, triple, cfg, include_v)
    d1, d2 = dc_split(gm.dc.ravel(), g1.dc.ravel(), g2.dc.ravel())
    H, W = m.shape
    return overlap_add(X1 + d1, spec, H, W), overlap_add(X2 + d2, spec, H, W)


def sample_patches(images, patch_side, count, rng):
    """Draw ``count`` co-located patches from a list of same-shape image tuples.

    ``images`` is a sequence of tuples such as ``(visual, xray)`` or
    ``(visual, xray, mask)``. Origins are drawn uniformly without replacement
    over every valid position of every tuple. Returns one ``(n, count)``
    matrix per tuple slot, patches unmodified (DC included).
    """
    images = [tuple(as_image(a) for a in tup) for tup in images]
    if not images:
        raise ArgumentError("no training images")
    slots = len(images[0])
    p = patch_side
    offsets = []
    for k, tup in enumerate(images):
        if len(tup) != slots or any(a.shape != tup[0].shape for a in tup):
            raise ArgumentError(f"image tuple {k} has inconsistent shapes")
        H, W = tup[0].shape
        if H < p or W < p:
            raise ArgumentError(f"image tuple {k} ({H}x{W}) is smaller than one {p}x{p} patch")
        offsets.append((H - p + 1) * (W - p + 1))
    total = int(np.sum(offsets))
    if count > total:
        raise ArgumentError(f"requested {count} patches but only {total} positions exist")
    pick = np.sort(rng.choice(total, size=count, replace=False))
    bounds = np.cumsum([0] + offsets)
    out = [np.empty((p * p, count)) for _ in range(slots)]
    col = 0
    for k, tup in enumerate(images):
        sel = pick[(pick >= bounds[k]) & (pick < bounds[k + 1])] - bounds[k]
        if sel.size == 0:
            continue
        W = tup[0].shape[1]
        r, c = np.divmod(sel, W - p + 1)
        for s, a in enumerate(tup):
            win = sliding_window_view(a, (p, p))
            out[s][:, col:col + sel.size] = win[r, c].reshape(sel.size, p * p).T
        col += sel.size
    return out
