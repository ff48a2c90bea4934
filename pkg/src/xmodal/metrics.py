"""Frame-fidelity and diversity metrics: PSNR, SSIM, pairwise RMS diversity.

Pure functions over numpy arrays; everything is computed in float64 and is
safe to call concurrently.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve1d

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(x: np.ndarray, y: np.ndarray, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at PSNR_CAP_DB.

    Streams (T, H, W, C) are scored as the mean of per-frame PSNR values.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if max_value <= 0:
        raise ValueError("max_value must be > 0")
    if x.ndim == 4:
        return float(np.mean([psnr(xi, yi, max_value) for xi, yi in zip(x, y)]))
    mse = float(np.mean(np.square(x - y)))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(max_value**2 / mse), PSNR_CAP_DB))


def _gaussian_kernel(win: int, sigma: float) -> np.ndarray:
    r = win // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _window_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = len(kernel) // 2
    out = convolve1d(img, kernel, axis=0, mode="constant")
    out = convolve1d(out, kernel, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _ssim_single(x: np.ndarray, y: np.ndarray, max_value: float) -> float:
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    ux = _window_filter(x, kernel)
    uy = _window_filter(y, kernel)
    uxx = _window_filter(x * x, kernel)
    uyy = _window_filter(y * y, kernel)
    uxy = _window_filter(x * y, kernel)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    cov = uxy - ux * uy
    c1 = (SSIM_K1 * max_value) ** 2
    c2 = (SSIM_K2 * max_value) ** 2
    num = (2 * ux * uy + c1) * (2 * cov + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def ssim(x: np.ndarray, y: np.ndarray, max_value: float = 1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Multi-channel images are scored per channel and averaged. Raises if the
    image is smaller than the window.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 3:
        return float(
            np.mean([_ssim_single(x[..., c], y[..., c], max_value) for c in range(x.shape[-1])])
        )
    if x.ndim != 2:
        raise ValueError("ssim expects (H, W) or (H, W, C) images")
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise ValueError(
            f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    return _ssim_single(x, y, max_value)


def diversity_score(samples) -> float:
    """Mean over unordered sample pairs of per-frame RMS pixel difference.

    samples: (K, T, H, W, C) array or a list of K equally-shaped streams.
    Zero exactly when all samples coincide; invariant to reordering.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 5:
        raise ValueError("samples must be (K, T, H, W, C)")
    k = samples.shape[0]
    if k < 2:
        raise ValueError("diversity needs at least two samples")
    scores = []
    for i in range(k):
        for j in range(i + 1, k):
            per_t = np.sqrt(np.mean(np.square(samples[i] - samples[j]), axis=(1, 2, 3)))
            scores.append(per_t.mean())
    return float(np.mean(scores))
