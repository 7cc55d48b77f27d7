"""Image I/O, bicubic resampling, training pairs, patch sampling, augmentation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
from PIL import Image

from .tensor import RngStream

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")
CUBIC_A = -0.5


class DataError(Exception):
    """Unreadable, missing or unusable image data."""


@dataclass
class ImagePlane:
    """8-bit RGB image, row-major ``(height, width, 3)`` samples."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 3 or s.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) samples, got {s.shape}")
        self.samples = np.ascontiguousarray(s, dtype=np.uint8)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def crop(self, top: int, left: int, height: int, width: int) -> "ImagePlane":
        return ImagePlane(self.samples[top:top + height, left:left + width])


def load_image(path) -> ImagePlane:
    """Decode any Pillow-readable file to RGB; alpha is dropped."""
    try:
        with Image.open(path) as im:
            return ImagePlane(np.asarray(im.convert("RGB")))
    except (OSError, ValueError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from e


def save_image(img: ImagePlane, path) -> None:
    Image.fromarray(img.samples, mode="RGB").save(path, format="PNG")


def to_tensor(img: ImagePlane) -> np.ndarray:
    """1 x 3 x H x W float32 in [0, 1]."""
    return (img.samples.astype(np.float32) / 255.0).transpose(2, 0, 1)[None].copy()


def quantize(values: np.ndarray) -> np.ndarray:
    """Round to the nearest 8-bit level (halves away from zero), clamped to [0, 255]."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def from_tensor(t: np.ndarray) -> ImagePlane:
    """Inverse of ``to_tensor`` for one image (N must be 1 or absent)."""
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError(f"from_tensor takes a single image, got batch {t.shape}")
        t = t[0]
    return ImagePlane(quantize(t.transpose(1, 2, 0).astype(np.float64) * 255.0))


def cubic_kernel(x, a: float = CUBIC_A):
    """Keys cubic convolution kernel; vectorized over ``x``."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    out = np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))
    return out if out.ndim else float(out)


def resample_weights(in_len: int, out_len: int, antialias: bool = True, a: float = CUBIC_A) -> np.ndarray:
    """Dense ``(out_len, in_len)`` interpolation matrix with rows summing to one.

    Output sample i is centred at input coordinate (i + 0.5) / scale - 0.5.
    Downscaling with ``antialias`` stretches the kernel by 1 / scale.
    Taps that fall outside the input are clamped onto the border sample.
    """
    if in_len < 1 or out_len < 1:
        raise ValueError(f"resample extents must be >= 1, got {in_len} -> {out_len}")
    scale = out_len / in_len
    stretch = scale if (antialias and scale < 1) else 1.0
    width = 4.0 / stretch
    centre = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(centre - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = stretch * cubic_kernel(stretch * (centre[:, None] - idx), a)
    wts /= wts.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1).astype(np.int64)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, idx.ravel()), wts.ravel())
    return mat


def resample_array(arr: np.ndarray, out_w: int, out_h: int, antialias: bool = True) -> np.ndarray:
    """Separable bicubic resampling of an (H, W, C) float array; no rounding."""
    h, w = arr.shape[:2]
    wy = resample_weights(h, out_h, antialias)
    wx = resample_weights(w, out_w, antialias)
    x = arr.astype(np.float64)
    return np.einsum("ij,jkc->ikc", wy, np.einsum("kl,jlc->jkc", wx, x))


def resample_bicubic(img: ImagePlane, out_w: int, out_h: int, antialias: bool = True) -> ImagePlane:
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be >= 1, got {out_w}x{out_h}")
    return ImagePlane(quantize(resample_array(img.samples, out_w, out_h, antialias)))


def crop_to_multiple(img: ImagePlane, s: int) -> ImagePlane:
    h, w = img.height - img.height % s, img.width - img.width % s
    if h == 0 or w == 0:
        raise DataError(f"image {img.width}x{img.height} smaller than scale {s}")
    return img.crop(0, 0, h, w) if (h, w) != (img.height, img.width) else img


def bicubic_degrade(hr: ImagePlane, s: int) -> ImagePlane:
    """Down by ``s`` then back up with bicubic, quantizing to 8 bits after each pass.

    ``hr`` is cropped to the largest region divisible by ``s`` first.
    """
    hr = crop_to_multiple(hr, s)
    if s == 1:
        return hr
    lr = resample_bicubic(hr, hr.width // s, hr.height // s, antialias=True)
    return resample_bicubic(lr, hr.width, hr.height)


def make_pair(hr: ImagePlane, s: int):
    """Returns ``(z, y)``: bicubic-degraded input and ground truth, 1 x 3 x H x W."""
    hr = crop_to_multiple(hr, s)
    return to_tensor(bicubic_degrade(hr, s)), to_tensor(hr)


def make_batch(patches: Sequence[ImagePlane], s: int):
    pairs = [make_pair(p, s) for p in patches]
    z = np.concatenate([p[0] for p in pairs])
    y = np.concatenate([p[1] for p in pairs])
    return z, y


@dataclass
class DatasetManifest:
    paths: List[Path]
    scale: int = 4
    patch_size: int = 128
    patches_per_epoch: int = 64

    def __post_init__(self):
        if self.scale not in (1, 2, 4, 8):
            raise ValueError(f"scale must be 2, 4 or 8, got {self.scale}")
        if self.patch_size % self.scale:
            raise ValueError(f"patch size {self.patch_size} not divisible by scale {self.scale}")


def list_images(directory) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_manifest(path) -> List[Path]:
    """Image paths from a manifest file (one per line, ``#`` comments) or a directory.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if path.is_dir():
        paths = list_images(path)
    else:
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        paths = []
        for line in path.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                p = Path(line)
                paths.append(p if p.is_absolute() else path.parent / p)
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DataError(f"manifest lists missing files: {', '.join(missing)}")
    if not paths:
        raise DataError(f"no images in {path}")
    return paths


def sample_patches(images: Sequence[ImagePlane], stream: RngStream, count: int, size: int) -> List[ImagePlane]:
    """``count`` random ``size`` x ``size`` crops; images smaller than ``size`` are skipped."""
    eligible = [im for im in images if im.height >= size and im.width >= size]
    if len(eligible) < len(images):
        log.warning("skipping %d image(s) smaller than %dx%d", len(images) - len(eligible), size, size)
    if not eligible:
        raise DataError(f"no image is at least {size}x{size}")
    out = []
    for _ in range(count):
        im = eligible[int(stream.integers(0, len(eligible)))]
        top = int(stream.integers(0, im.height - size + 1))
        left = int(stream.integers(0, im.width - size + 1))
        out.append(im.crop(top, left, size, size))
    return out


@dataclass
class AugmentConfig:
    p_rotate: float = 0.5
    p_brightness: float = 0.5
    p_saturation: float = 0.5
    brightness_range: tuple = (0.8, 1.2)
    saturation_range: tuple = (0.7, 1.3)


def rotate(img: ImagePlane, degrees: int) -> ImagePlane:
    if degrees % 90:
        raise ValueError(f"rotation must be a multiple of 90, got {degrees}")
    return ImagePlane(np.rot90(img.samples, k=degrees // 90))


def adjust_brightness(img: ImagePlane, factor: float) -> ImagePlane:
    return ImagePlane(quantize(img.samples.astype(np.float64) * factor))


def adjust_saturation(img: ImagePlane, factor: float) -> ImagePlane:
    rgb = img.samples.astype(np.float64)
    gray = (rgb @ np.array([0.299, 0.587, 0.114]))[..., None]
    return ImagePlane(quantize(gray + factor * (rgb - gray)))


def augment(patch: ImagePlane, stream: RngStream, cfg: AugmentConfig = None) -> ImagePlane:
    """Random rotation (90 or 180 degrees), brightness and saturation jitter.

    Six draws are consumed on every call, whichever augmentations fire, so the
    stream stays aligned across runs.
    """
    cfg = cfg or AugmentConfig()
    u_rot, u_angle, u_b, u_s = (stream.random() for _ in range(4))
    b = cfg.brightness_range[0] + (cfg.brightness_range[1] - cfg.brightness_range[0]) * stream.random()
    s = cfg.saturation_range[0] + (cfg.saturation_range[1] - cfg.saturation_range[0]) * stream.random()
    out = patch
    if u_rot < cfg.p_rotate:
        out = rotate(out, 90 if u_angle < 0.5 else 180)
    if u_b < cfg.p_brightness:
        out = adjust_brightness(out, b)
    if u_s < cfg.p_saturation:
        out = adjust_saturation(out, s)
    return out
