"""PSNR / SSIM with the usual super-resolution benchmark protocol.

By default images are compared on the BT.601 luma channel with ``scale``
pixels shaved from every border, on [0, 1] planes with peak 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .data import ImagePlane
from .tensor import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass
class EvalProtocol:
    channel: str = "y"  # "y" or "rgb"
    shave: int = 4

    def __post_init__(self):
        if self.channel not in ("y", "rgb"):
            raise ValueError(f"channel must be 'y' or 'rgb', got {self.channel!r}")
        if self.shave < 0:
            raise ValueError(f"shave must be >= 0, got {self.shave}")


def rgb_to_y(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (H, W, 3) array in [0, 1]; result in [16/255, 235/255]."""
    rgb = rgb.astype(np.float64)
    return (16.0 + rgb @ np.array([65.481, 128.553, 24.966])) / 255.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(x, g, axis=0), g, axis=1)
    return out[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim_map(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a 2-D plane, got {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    g = gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    mu_ab = mu_a * mu_b
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_ab
    # written so that swapping a and b is bit-identical
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, valid region only)."""
    return float(np.mean(ssim_map(a, b, peak)))


def _planes(img, protocol: EvalProtocol):
    arr = img.samples.astype(np.float64) / 255.0 if isinstance(img, ImagePlane) else np.asarray(img, np.float64)
    s = protocol.shave
    if s:
        if 2 * s >= min(arr.shape[:2]):
            raise ShapeError(f"shave {s} too large for image {arr.shape[:2]}")
        arr = arr[s:-s, s:-s]
    if protocol.channel == "y":
        return [rgb_to_y(arr)]
    return [arr[..., c] for c in range(3)]


def evaluate_pair(output, truth, protocol: EvalProtocol = None) -> tuple:
    """(psnr_db, ssim) of ``output`` against ``truth`` under ``protocol``.

    Both arguments are ImagePlanes or (H, W, 3) float arrays in [0, 1].
    """
    protocol = protocol or EvalProtocol()
    pa, pb = _planes(output, protocol), _planes(truth, protocol)
    p = psnr(np.stack(pa), np.stack(pb))
    s = float(np.mean([ssim(x, y) for x, y in zip(pa, pb)]))
    return p, s
