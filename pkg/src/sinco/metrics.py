"""Evaluation metrics: PSNR, SSIM (11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03, dynamic range 1.0) and hard Dice at threshold 0.5."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError
from .imageio import ImagePlane, MaskPlane

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pixels(x) -> np.ndarray:
    if isinstance(x, ImagePlane):
        return x.pixels
    if isinstance(x, MaskPlane):
        return x.values
    return np.asarray(x)


def psnr(x, y, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), +inf when the images are identical."""
    a, b = _pixels(x).astype(np.float64), _pixels(y).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ContractError(f"psnr: peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(n: int, sigma: float) -> np.ndarray:
    offsets = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation, valid mode
    t = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(t, len(g), axis=1) @ g


def ssim(x, y) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows; symmetric."""
    a, b = _pixels(x).astype(np.float64), _pixels(y).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def dice_score(shat, s, threshold: float = 0.5) -> float:
    """Hard Dice of shat binarized at threshold vs a binary mask s.

    Both masks empty counts as perfect agreement (1.0).
    """
    a, b = _pixels(shat), _pixels(s)
    if a.shape != b.shape:
        raise ShapeError(f"dice_score: shape mismatch {a.shape} vs {b.shape}")
    pred = a >= threshold
    ref = b >= 0.5
    inter = int(np.sum(pred & ref))
    total = int(pred.sum()) + int(ref.sum())
    if total == 0:
        return 1.0
    return 2.0 * inter / total


@dataclass
class EvalReport:
    """One row of quantitative results, serializable as a JSON line."""

    psnr_db: float
    ssim: float
    dice: float | None = None
    bpp: float | None = None

    def to_json(self) -> str:
        def enc(v):
            if v is None:
                return None
            if math.isinf(v):
                return "inf"
            return v

        return json.dumps(
            {"psnr_db": enc(self.psnr_db), "ssim": enc(self.ssim), "dice": enc(self.dice), "bpp": enc(self.bpp)}
        )
