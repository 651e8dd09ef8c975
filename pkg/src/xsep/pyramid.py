"""Multi-scale pyramid of patch DC maps and coarse-to-fine separation.

At scale ``l`` the plane is cut into the patch grid of that scale; the grid
of patch means is the next (coarser) plane. The high band is the plane minus
the coarser plane bilinearly up-sampled back onto it, with each coarse
sample anchored at its patch centre. Reconstruction adds the bands back, so
it inverts the decomposition up to rounding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coupled_dl import DictionaryTriple
from .errors import ArgumentError
from .patchwork import PatchGridSpec, dc_split, extract_grid, overlap_add, separate_grids
from .separator import BPConfig, SeparationOperator
from .storage import as_image, write_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PyramidSpec:
    scales: tuple  # PatchGridSpec per scale, finest first

    def __post_init__(self):
        if len(self.scales) < 1:
            raise ArgumentError("a pyramid needs at least one scale")
        object.__setattr__(self, "scales", tuple(self.scales))

    @classmethod
    def uniform(cls, patch_side, steps):
        return cls(tuple(PatchGridSpec(patch_side, e) for e in steps))

    @property
    def L(self) -> int:
        return len(self.scales)

    def shapes(self, H, W):
        """Plane shapes ``[(H_1, W_1), ..., (H_{L+1}, W_{L+1})]``."""
        out = [(H, W)]
        for l, s in enumerate(self.scales):
            if H < s.patch_side or W < s.patch_side:
                raise ArgumentError(f"scale {l + 1}: plane {H}x{W} smaller than patch {s.patch_side}")
            H, W = s.grid_shape(H, W)
            if H < 1 or W < 1:
                raise ArgumentError(f"scale {l + 1} produces an empty grid")
            out.append((H, W))
        return out


@dataclass
class Pyramid:
    spec: PyramidSpec
    low: list = field(default_factory=list)  # L + 1 planes, low[0] is the input
    high: list = field(default_factory=list)  # L planes


def _interp_matrix(size, samples):
    """Linear interpolation weights from sample positions onto ``0..size-1`` (clamped ends)."""
    x = np.arange(size, dtype=np.float64)
    k = samples.size
    M = np.empty((size, k))
    eye = np.eye(k)
    for j in range(k):
        M[:, j] = np.interp(x, samples, eye[j])
    return M


def upsample(plane, grid: PatchGridSpec, H, W):
    """Bilinear up-sampling of a grid plane onto the ``H x W`` plane it was taken from."""
    plane = np.asarray(plane, dtype=np.float64)
    gh, gw = plane.shape
    if (gh, gw) != grid.grid_shape(H, W):
        raise ArgumentError(f"plane {plane.shape} is not the grid of a {H}x{W} plane")
    centre = (grid.patch_side - 1) / 2.0
    Ry = _interp_matrix(H, grid.step * np.arange(gh) + centre)
    Rx = _interp_matrix(W, grid.step * np.arange(gw) + centre)
    return Ry @ plane @ Rx.T


def decompose(img, spec: PyramidSpec) -> Pyramid:
    img = as_image(img)
    shapes = spec.shapes(*img.shape)
    pyr = Pyramid(spec, [img], [])
    for l, grid in enumerate(spec.scales):
        cur = pyr.low[-1]
        nxt = extract_grid(cur, grid).dc
        pyr.low.append(nxt)
        pyr.high.append(cur - upsample(nxt, grid, *shapes[l]))
    return pyr


def reconstruct(p: Pyramid):
    if len(p.low) != p.spec.L + 1 or len(p.high) != p.spec.L:
        raise ArgumentError("pyramid does not match its spec")
    out = p.low[-1]
    for l in range(p.spec.L - 1, -1, -1):
        H, W = p.high[l].shape
        out = p.high[l] + upsample(out, p.spec.scales[l], H, W)
    return out


def dump_pyramid(p: Pyramid, directory, prefix):
    """Write every band as a CDLM matrix file (debugging aid)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for l, plane in enumerate(p.low):
        write_matrix(plane, directory / f"{prefix}_low{l + 1}.cdlm")
    for l, plane in enumerate(p.high):
        write_matrix(plane, directory / f"{prefix}_high{l + 1}.cdlm")


@dataclass
class MultiscaleSeparation:
    x1: np.ndarray
    x2: np.ndarray
    coarse: tuple  # split coarsest planes (S_1, S_2)
    textures: list  # per scale (T_1, T_2)
    pyramids: tuple  # (mixture, visual 1, visual 2)


def dictionary_for_scale(dicts, l):
    """Scales past the trained range reuse the deepest trained triple."""
    if not dicts:
        raise ArgumentError("no dictionaries given")
    if l >= len(dicts):
        log.warning("scale=%d reusing_dictionary=%d", l + 1, len(dicts))
        return dicts[-1]
    return dicts[l]


def separate_multiscale_detailed(m, y1, y2, spec: PyramidSpec, dicts, cfg: BPConfig | None = None,
                                 include_v=True) -> MultiscaleSeparation:
    cfg = cfg or BPConfig()
    m, y1, y2 = as_image(m), as_image(y1), as_image(y2)
    if not (m.shape == y1.shape == y2.shape):
        raise ArgumentError(f"image shapes differ: {m.shape}, {y1.shape}, {y2.shape}")
    dicts = list(dicts) if isinstance(dicts, (list, tuple)) else [dicts]
    pm, p1, p2 = (decompose(a, spec) for a in (m, y1, y2))
    textures = []
    for l, grid in enumerate(spec.scales):
        triple = dictionary_for_scale(dicts, l)
        H, W = pm.low[l].shape
        gm, g1, g2 = (extract_grid(p.low[l], grid) for p in (pm, p1, p2))
        log.info("scale=%d plane=%dx%d grid=%dx%d", l + 1, H, W, *gm.shape)
        X1, X2 = separate_grids(gm, g1, g2, triple, cfg, include_v, SeparationOperator(triple))
        textures.append((overlap_add(X1, grid, H, W, "zero"), overlap_add(X2, grid, H, W, "zero")))
    S1, S2 = dc_split(pm.low[-1], p1.low[-1], p2.low[-1])
    coarse = (S1, S2)
    for l in range(spec.L - 1, -1, -1):
        H, W = pm.low[l].shape
        grid = spec.scales[l]
        S1 = textures[l][0] + upsample(S1, grid, H, W)
        S2 = textures[l][1] + upsample(S2, grid, H, W)
    return MultiscaleSeparation(S1, S2, coarse, textures, (pm, p1, p2))


def separate_multiscale(m, y1, y2, spec: PyramidSpec, dicts, cfg: BPConfig | None = None, include_v=True):
    """Separate ``m`` scale by scale and fold the results coarse-to-fine.

    ``dicts`` holds one :class:`DictionaryTriple` per scale (finest first);
    scales past the end reuse the last one.
    """
    r = separate_multiscale_detailed(m, y1, y2, spec, dicts, cfg, include_v)
    return r.x1, r.x2


def scale_planes(img, spec: PyramidSpec, level):
    """Low-band plane feeding scale ``level`` (0-based; level 0 is the image)."""
    if not 0 <= level < spec.L:
        raise ArgumentError(f"scale {level + 1} outside 1..{spec.L}")
    img = as_image(img)
    for grid in spec.scales[:level]:
        img = extract_grid(img, grid).dc
    return img
