"""Synthetic experiments: planted coupled dictionaries, SNR noise,
dictionary identifiability and separation error.

Ground truth follows the coupled model ``Y = Psi_c Z`` and
``X = Phi_c Z + Phi V`` with Gaussian dictionaries, uniformly drawn supports
and coefficients uniform on ``[coef_low, coef_high]``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import linear_sum_assignment

from .coupled_dl import CodeMatrices, DictionaryTriple, TrainConfig, TrainingSet, train_coupled
from .errors import ArgumentError
from .metrics import psnr, ssim
from .patchwork import sample_patches, separate_single_scale
from .pyramid import PyramidSpec, decompose, scale_planes, separate_multiscale
from .separator import BPConfig, SeparationOperator, solve_batch

log = logging.getLogger(__name__)

DICT_NAMES = ("psi_c", "phi_c", "phi")


@dataclass(frozen=True)
class SynthSpec:
    n: int = 40
    gamma: int = 60
    d: int = 60
    t: int = 1500
    s_z: int = 2
    s_v: int = 3
    coef_low: float = -1.0
    coef_high: float = 1.0
    snrs: tuple = (math.inf,)
    trials: int = 5
    seed: int = 0
    mixtures: int = 200
    iters: int = 100
    # "separate": each dictionary has unit-norm columns;
    # "stacked": common columns [psi_c; phi_c] are unit-norm jointly
    normalization: str = "separate"

    def __post_init__(self):
        if min(self.n, self.gamma, self.d, self.t) < 1:
            raise ArgumentError("dimensions must be positive")
        if not (0 <= self.s_z <= self.gamma and 0 <= self.s_v <= self.d):
            raise ArgumentError(f"budgets (s_z={self.s_z}, s_v={self.s_v}) exceed dictionary sizes")
        if self.normalization not in ("separate", "stacked"):
            raise ArgumentError(f"unknown normalization {self.normalization!r}")
        if not self.coef_low < self.coef_high:
            raise ArgumentError("coef_low must be below coef_high")


def _unit(M):
    return M / np.linalg.norm(M, axis=0)


def random_triple(spec: SynthSpec, rng) -> DictionaryTriple:
    psi_c = rng.standard_normal((spec.n, spec.gamma))
    phi_c = rng.standard_normal((spec.n, spec.gamma))
    phi = _unit(rng.standard_normal((spec.n, spec.d)))
    if spec.normalization == "stacked":
        s = np.sqrt((psi_c ** 2).sum(axis=0) + (phi_c ** 2).sum(axis=0))
        return DictionaryTriple(psi_c / s, phi_c / s, phi)
    return DictionaryTriple(_unit(psi_c), _unit(phi_c), phi)


def sparse_matrix(rows, cols, s, spec: SynthSpec, rng):
    """``rows x cols`` matrix with exactly ``s`` uniform nonzeros per column."""
    M = np.zeros((rows, cols))
    for j in range(cols):
        idx = rng.choice(rows, size=s, replace=False)
        M[idx, j] = rng.uniform(spec.coef_low, spec.coef_high, size=s)
    return M


def generate(spec: SynthSpec, seed=None):
    """Planted dictionaries, codes and the resulting training pair ``(Y, X)``."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    triple = random_triple(spec, rng)
    Z = sparse_matrix(spec.gamma, spec.t, spec.s_z, spec, rng)
    V = sparse_matrix(spec.d, spec.t, spec.s_v, spec, rng)
    data = TrainingSet(triple.psi_c @ Z, triple.phi_c @ Z + triple.phi @ V)
    return triple, CodeMatrices(Z, V), data


def add_noise_snr(M, snr_db, seed=0):
    """Add white Gaussian noise scaled so that ``10 log10(||M||^2 / ||N||^2) = snr_db``."""
    M = np.asarray(M, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return M.copy()
    if not snr_db > 0:
        raise ArgumentError(f"SNR must be positive or infinite, got {snr_db}")
    power = float(np.sum(M * M))
    if power == 0.0:
        raise ArgumentError("zero-power signal: SNR is undefined")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    N = rng.standard_normal(M.shape)
    N *= math.sqrt(power / (10.0 ** (snr_db / 10.0)) / float(np.sum(N * N)))
    return M + N


def measured_snr(M, noisy):
    N = np.asarray(noisy) - np.asarray(M)
    return 10.0 * math.log10(float(np.sum(np.square(M))) / float(np.sum(N * N)))


def atom_recovery_rate(truth, learned, injective=False, threshold=0.01):
    """Percentage of truth atoms matched by a learned atom at distance ``1 - |<a, b>|`` below ``threshold``.

    Every truth atom takes its nearest learned atom (several may share one)
    unless ``injective`` is set, in which case a one-to-one assignment
    minimising the total distance is used.
    """
    T = np.asarray(truth, dtype=np.float64)
    L = np.asarray(learned, dtype=np.float64)
    if T.shape[0] != L.shape[0]:
        raise ArgumentError(f"atom lengths differ: {T.shape[0]} vs {L.shape[0]}")
    for name, D in (("truth", T), ("learned", L)):
        dev = np.max(np.abs(np.linalg.norm(D, axis=0) - 1.0)) if D.size else 0.0
        if dev > 1e-6:
            raise ArgumentError(f"{name} dictionary columns are not unit norm (deviation {dev:.2e})")
    dist = 1.0 - np.abs(T.T @ L)
    if injective:
        r, c = linear_sum_assignment(dist)
        best = np.ones(T.shape[1])
        best[r] = dist[r, c]
    else:
        best = dist.min(axis=1)
    return 100.0 * float(np.mean(best < threshold))


def nmse(x, x_hat):
    """``||x - x_hat||^2 / ||x||^2``."""
    x = np.asarray(x, dtype=np.float64)
    e = x - np.asarray(x_hat, dtype=np.float64)
    ref = float(np.sum(x * x))
    if ref == 0.0:
        raise ArgumentError("nmse reference signal is zero")
    return float(np.sum(e * e)) / ref


def recovery_rates(truth: DictionaryTriple, learned: DictionaryTriple, injective=False):
    """Recovery percentage for each of psi_c, phi_c, phi (columns renormalised per dictionary)."""
    out = {}
    for name in DICT_NAMES:
        T = getattr(truth, name)
        L = getattr(learned, name)
        norms = np.linalg.norm(L, axis=0)
        T = T / np.linalg.norm(T, axis=0)
        # zero (unused) learned columns can never match; keep them out of the norm check
        live = norms > 0
        out[name] = atom_recovery_rate(T, L[:, live] / norms[live], injective) if live.any() else 0.0
    return out


def train_config(spec: SynthSpec, seed, **overrides) -> TrainConfig:
    cfg = TrainConfig(spec.s_z, spec.s_v, spec.gamma, spec.d, max_iters=spec.iters, init="random", seed=seed)
    return replace(cfg, **overrides) if overrides else cfg


def _trial_seed(spec, snr_index, trial):
    return int(np.random.SeedSequence([spec.seed, snr_index, trial]).generate_state(1)[0])


def train_trial(spec: SynthSpec, snr_db, seed, cfg: TrainConfig | None = None):
    """One identifiability trial: generate, add noise to both modalities, train."""
    truth, _, data = generate(spec, seed)
    rng = np.random.default_rng(seed + 1)
    noisy = TrainingSet(add_noise_snr(data.Y, snr_db, rng), add_noise_snr(data.X, snr_db, rng))
    cfg = replace(cfg, seed=seed) if cfg is not None else train_config(spec, seed)
    return truth, train_coupled(noisy, cfg)


def run_table1(spec: SynthSpec, cfg: TrainConfig | None = None, csv_path=None, injective=False):
    """Mean atom recovery per dictionary and SNR.

    Returns rows ``(snr_db, dict_name, recovery_pct)``; per-trial rates are
    attached to the log at info level.
    """
    rows = []
    for si, snr in enumerate(spec.snrs):
        rates = {k: [] for k in DICT_NAMES}
        for trial in range(spec.trials):
            truth, res = train_trial(spec, snr, _trial_seed(spec, si, trial), cfg)
            r = recovery_rates(truth, res.dictionaries, injective)
            for k in DICT_NAMES:
                rates[k].append(r[k])
            log.info("snr_db=%s trial=%d iters=%d psi_c=%.2f phi_c=%.2f phi=%.2f", snr, trial,
                     len(res.trace), r["psi_c"], r["phi_c"], r["phi"])
        for k in DICT_NAMES:
            rows.append((snr, k, float(np.mean(rates[k]))))
    if csv_path is not None:
        write_csv(csv_path, ("snr_db", "dict", "recovery_pct"), rows)
    return rows


def planted_mixtures(truth: DictionaryTriple, spec: SynthSpec, count, rng):
    """Fresh mixtures: ``x_i = Phi_c z_i + Phi v`` with the innovation shared by both sides."""
    Z1 = sparse_matrix(spec.gamma, count, spec.s_z, spec, rng)
    Z2 = sparse_matrix(spec.gamma, count, spec.s_z, spec, rng)
    V = sparse_matrix(spec.d, count, spec.s_v, spec, rng)
    X1 = truth.phi_c @ Z1 + truth.phi @ V
    X2 = truth.phi_c @ Z2 + truth.phi @ V
    return X1, X2, truth.psi_c @ Z1, truth.psi_c @ Z2


def separate_columns(triple: DictionaryTriple, M, Y1, Y2, bp: BPConfig | None = None, include_v=True):
    """Batch separation of mixture columns; infeasible columns are projected."""
    bp = replace(bp or BPConfig(), project_infeasible=True)
    op = SeparationOperator(triple)
    W, _ = solve_batch(op, np.vstack([M, Y1, Y2]), bp)
    z1, z2, v = op.split(W)
    X1 = triple.phi_c @ z1
    X2 = triple.phi_c @ z2
    if include_v:
        X1 = X1 + triple.phi @ v
        X2 = X2 + triple.phi @ v
    return X1, X2


def run_table2(spec: SynthSpec, cfg: TrainConfig | None = None, bp: BPConfig | None = None, csv_path=None):
    """Mean per-side separation NMSE per SNR.

    For each SNR and trial, dictionaries are learned from noisy training data
    and ``spec.mixtures`` fresh planted pairs are separated from noisy
    observations ``(m, y1, y2)``; NMSE is measured against the clean sides.
    Returns rows ``(snr_db, side, nmse)``.
    """
    rows = []
    for si, snr in enumerate(spec.snrs):
        e1, e2 = [], []
        for trial in range(spec.trials):
            seed = _trial_seed(spec, si, trial)
            truth, res = train_trial(spec, snr, seed, cfg)
            rng = np.random.default_rng(seed + 2)
            X1, X2, Y1, Y2 = planted_mixtures(truth, spec, spec.mixtures, rng)
            M = add_noise_snr(X1 + X2, snr, rng)
            Y1n = add_noise_snr(Y1, snr, rng)
            Y2n = add_noise_snr(Y2, snr, rng)
            H1, H2 = separate_columns(res.dictionaries, M, Y1n, Y2n, bp)
            e1 += [nmse(X1[:, j], H1[:, j]) for j in range(X1.shape[1])]
            e2 += [nmse(X2[:, j], H2[:, j]) for j in range(X2.shape[1])]
            log.info("snr_db=%s trial=%d nmse_x1=%.3e nmse_x2=%.3e", snr, trial,
                     np.mean(e1[-spec.mixtures:]), np.mean(e2[-spec.mixtures:]))
        rows.append((snr, "x1", float(np.mean(e1))))
        rows.append((snr, "x2", float(np.mean(e2))))
    if csv_path is not None:
        write_csv(csv_path, ("snr_db", "side", "nmse"), rows)
    return rows


def format_snr(snr):
    return "inf" if math.isinf(snr) else repr(float(snr))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for snr, name, value in rows:
            w.writerow([format_snr(snr), name, repr(float(value))])


@dataclass(frozen=True)
class PaintingSpec:
    """Parameters of the simulated double-sided panel.

    Each side's paint layer is a smooth large-scale field plus finer
    brush-scale texture. The X-ray of a side is its paint layer plus the
    wood grain shared by both sides; the photograph is a brighter,
    compressed copy of the paint layer plus a little surface detail that
    the X-ray does not see. Because of the bright base level, the ratio of
    the two photographs' local means says little about how the mixture's
    local mean divides between the sides.
    """

    shape: tuple = (256, 256)
    paint_mean: float = 45.0
    low_amp: float = 18.0
    low_sigma: float = 16.0
    strokes: int = 1200
    stroke_amp: float = 25.0
    stroke_width: float = 1.2
    stroke_length: tuple = (6.0, 24.0)
    grain_amp: float = 6.0
    grain_period: float = 7.0
    visual_base: float = 90.0
    visual_gain: float = 0.6
    visual_detail: float = 1.0


def _field(shape, sigma, rng):
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / f.std()


def wood_grain(spec: PaintingSpec, rng):
    H, W = spec.shape
    wobble = 4.0 * _field((H, 1), 12.0, rng) + 2.0 * _field((H, W), 6.0, rng)
    cols = np.arange(W)[None, :] + wobble
    return spec.grain_amp * np.sin(2.0 * np.pi * cols / spec.grain_period + rng.uniform(0, 2 * np.pi))


def brush_strokes(spec: PaintingSpec, rng):
    """Sum of straight strokes with a Gaussian cross-section and random signed amplitude."""
    H, W = spec.shape
    out = np.zeros((H, W))
    w = spec.stroke_width
    for _ in range(spec.strokes):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        ang = rng.uniform(0, np.pi)
        half = 0.5 * rng.uniform(*spec.stroke_length)
        amp = rng.choice((-1.0, 1.0)) * rng.uniform(0.4, 1.0) * spec.stroke_amp
        dy, dx = np.sin(ang), np.cos(ang)
        r = int(np.ceil(half + 3 * w))
        y0, y1 = max(0, int(cy) - r), min(H, int(cy) + r + 1)
        x0, x1 = max(0, int(cx) - r), min(W, int(cx) + r + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        py, px = yy - cy, xx - cx
        along = np.clip(py * dy + px * dx, -half, half)
        dist2 = (py - along * dy) ** 2 + (px - along * dx) ** 2
        out[y0:y1, x0:x1] += amp * np.exp(-dist2 / (2 * w * w))
    return out


def paint_layer(spec: PaintingSpec, rng):
    p = spec.paint_mean + spec.low_amp * _field(spec.shape, spec.low_sigma, rng) + brush_strokes(spec, rng)
    return np.clip(p, spec.grain_amp, None)


def simulated_panel(spec: PaintingSpec | None = None, seed=0):
    """Two-sided panel: returns ``(m, y1, y2, x1, x2)`` with ``m = x1 + x2``."""
    spec = spec or PaintingSpec()
    rng = np.random.default_rng(seed)
    grain = wood_grain(spec, rng)
    sides = []
    for _ in range(2):
        p = paint_layer(spec, rng)
        x = p + grain
        y = spec.visual_base + spec.visual_gain * p + spec.visual_detail * _field(spec.shape, 0.7, rng)
        sides.append((y, x))
    (y1, x1), (y2, x2) = sides
    return x1 + x2, y1, y2, x1, x2


def simulated_training_pairs(spec: PaintingSpec | None = None, count=2, seed=0):
    """Independent single-sided ``(visual, xray)`` pairs from the same generator."""
    out = []
    for k in range(count):
        _, y1, y2, x1, x2 = simulated_panel(spec, seed=int(np.random.SeedSequence([seed, k]).generate_state(1)[0]))
        out += [(y1, x1), (y2, x2)]
    return out


@dataclass
class MixResult:
    """Outcome of :func:`run_mix`: per-method images and scores."""

    truth: tuple
    mixture: np.ndarray
    outputs: dict  # method -> (X1, X2)
    scores: list  # (method, side, psnr, ssim)
    low_band_energy: dict  # method -> energy of the coarsest band of X1 - X2


def low_band_energy(diff, spec):
    """Energy of the coarsest pyramid low band of a difference image."""
    low = decompose(diff, spec).low[-1]
    return float(np.sum(low * low))


def train_scale_dictionaries(pairs, spec, trained_scales, samples, cfg: TrainConfig, seed):
    """One coupled triple per scale from ``(visual, xray)`` training pairs.

    Patches are sampled from the scale's low-band planes; scales past
    ``trained_scales`` are left to reuse the deepest trained triple.
    """
    rng = np.random.default_rng(seed)
    dicts = []
    for level in range(min(trained_scales, spec.L)):
        planes = [(scale_planes(y, spec, level), scale_planes(x, spec, level)) for y, x in pairs]
        side = spec.scales[level].patch_side
        avail = sum((a.shape[0] - side + 1) * (a.shape[1] - side + 1) for a, _ in planes)
        Y, X = sample_patches(planes, side, min(samples, avail), rng)
        res = train_coupled(TrainingSet.from_patches(Y, X), replace(cfg, seed=seed + level))
        log.info("scale=%d samples=%d iters=%d objective=%.6g", level + 1, Y.shape[1], len(res.trace),
                 res.trace[-1])
        dicts.append(res.dictionaries)
    return dicts


def run_mix(layers=None, size=256, steps=(4, 4, 4), patch_side=8, iters=20, max_iters=100, seed=0,
            csv_path=None, painting: PaintingSpec | None = None, samples=4000, trained_scales=2,
            atoms=(100, 64), budgets=(6, 4)):
    """Simulated two-sided panel: multiscale, single-scale and ``m / 2`` baseline.

    Without ``layers`` a panel is generated by :func:`simulated_panel` and the
    dictionaries are trained on independent panels from the same generator.
    With ``layers = (a, b)`` the two images are taken as the per-side X-rays,
    the photographs are the affine visual copies used by the generator, and
    training uses the two sides themselves.
    """
    painting = painting or PaintingSpec(shape=(size, size))
    if layers is None:
        m, y1, y2, x1, x2 = simulated_panel(painting, seed)
        pairs = simulated_training_pairs(painting, count=2, seed=seed + 100)
    else:
        x1, x2 = (np.asarray(a, dtype=np.float64) for a in layers)
        if x1.shape != x2.shape:
            raise ArgumentError(f"layer shapes differ: {x1.shape} vs {x2.shape}")
        y1, y2 = (painting.visual_base + painting.visual_gain * x for x in (x1, x2))
        m = x1 + x2
        pairs = [(y1, x1), (y2, x2)]
    spec = PyramidSpec.uniform(patch_side, steps)
    cfg = TrainConfig(budgets[0], budgets[1], atoms[0], atoms[1], max_iters=iters, init="dct")
    dicts = train_scale_dictionaries(pairs, spec, trained_scales, samples, cfg, seed)
    bp = BPConfig(max_iters=max_iters)
    outputs = {
        "multiscale": separate_multiscale(m, y1, y2, spec, dicts, bp),
        "single_scale": separate_single_scale(m, y1, y2, dicts[0], spec.scales[0], bp),
        "baseline": (m / 2.0, m / 2.0),
    }
    scores = []
    energy = {"truth": low_band_energy(x1 - x2, spec)}
    for method, (h1, h2) in outputs.items():
        for side, ref, est in (("x1", x1, h1), ("x2", x2, h2)):
            scores.append((method, side, psnr(ref, est), ssim(ref, est)))
        energy[method] = low_band_energy(h1 - h2, spec)
        log.info("method=%s psnr=%.3f/%.3f ssim=%.4f/%.4f low_band_energy=%.6g", method,
                 scores[-2][2], scores[-1][2], scores[-2][3], scores[-1][3], energy[method])
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("method", "side", "psnr_db", "ssim", "low_band_energy"))
            for method, side, p, s in scores:
                w.writerow([method, side, repr(float(p)), repr(float(s)), repr(energy[method])])
    return MixResult((x1, x2), m, outputs, scores, energy)
