"""Reconstruction quality metrics on ``H x W x N`` cubes."""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"shapes differ: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[:, :, None], gt[:, :, None]
    if pred.ndim != 3:
        raise DimensionError(f"expected H x W x N cubes, got {pred.shape}")
    return pred, gt


def psnr_per_channel(pred, gt, peak: float = 1.0) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    mse = ((pred - gt) ** 2).mean(axis=(0, 1))
    with np.errstate(divide="ignore"):
        return np.where(mse > 0, 10.0 * np.log10(peak**2 / np.where(mse > 0, mse, 1.0)), np.inf)


def psnr(pred, gt, peak: float = 1.0) -> float:
    """Mean over channels of ``10 log10(peak^2 / MSE)``; ``inf`` when any channel is exact."""
    return float(np.mean(psnr_per_channel(pred, gt, peak)))


def _gaussian_taps(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    return g / g.sum()


def _valid_blur(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    k = len(taps)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ taps


def ssim_per_channel(pred, gt, data_range: float = 1.0, win: int = 11, sigma: float = 1.5,
                     k1: float = 0.01, k2: float = 0.03) -> np.ndarray:
    """Gaussian-window SSIM per channel, averaged over fully covered window positions."""
    pred, gt = _pair(pred, gt)
    if min(pred.shape[:2]) < win:
        raise DimensionError(f"SSIM needs spatial extents >= {win}, got {pred.shape[:2]}")
    taps = _gaussian_taps(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    out = np.empty(pred.shape[2])
    for ch in range(pred.shape[2]):
        x, y = pred[:, :, ch], gt[:, :, ch]
        mx, my = _valid_blur(x, taps), _valid_blur(y, taps)
        sxx = _valid_blur(x * x, taps) - mx * mx
        syy = _valid_blur(y * y, taps) - my * my
        sxy = _valid_blur(x * y, taps) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        out[ch] = float(np.mean(num / den))
    return out


def ssim(pred, gt, data_range: float = 1.0) -> float:
    return float(np.mean(ssim_per_channel(pred, gt, data_range)))


def spectral_correlation(a, b) -> float:
    """Pearson correlation between two spectral curves."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError("curves differ in length")
    a, b = a - a.mean(), b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return 1.0 if np.allclose(a, b) else 0.0
    return float((a * b).sum() / denom)
