"""Image quality metrics: PSNR and Gaussian-window SSIM."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError

WINDOW = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DYNAMIC_RANGE = 255.0


def _pair(ref, test):
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ArgumentError(f"expected 2-D images, got {a.ndim}-D")
    return a, b


def psnr(ref, test, peak=255.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _pair(ref, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def gaussian_window(size=WINDOW, sigma=SIGMA):
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter(img, g):
    # separable 'valid' filtering
    k = g.size
    rows = sliding_window_view(img, k, axis=1) @ g
    return sliding_window_view(rows, k, axis=0) @ g


def ssim_map(ref, test, data_range=DYNAMIC_RANGE):
    """Local SSIM over every fully contained 11x11 Gaussian window."""
    a, b = _pair(ref, test)
    if min(a.shape) < WINDOW:
        raise ArgumentError(f"images must be at least {WINDOW}x{WINDOW}, got {a.shape}")
    g = gaussian_window()
    C1 = (K1 * data_range) ** 2
    C2 = (K2 * data_range) ** 2
    mu1 = _filter(a, g)
    mu2 = _filter(b, g)
    s11 = _filter(a * a, g) - mu1 * mu1
    s22 = _filter(b * b, g) - mu2 * mu2
    s12 = _filter(a * b, g) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + C1) * (2.0 * s12 + C2)
    den = (mu1 * mu1 + mu2 * mu2 + C1) * (s11 + s22 + C2)
    return num / den


def ssim(ref, test, data_range=DYNAMIC_RANGE):
    """Mean structural similarity (Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03)."""
    return float(np.mean(ssim_map(ref, test, data_range)))
