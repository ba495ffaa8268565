"""Small raster helpers shared across featurization, hashing and augmentation.

Images are float64 arrays in [0,1], shaped (H, W) or (H, W, 3).
"""

from __future__ import annotations

import numpy as np
from PIL import Image

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return img @ GRAY_WEIGHTS


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resampling; channels resampled jointly."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)
    fx = np.clip(xs - x0, 0.0, 1.0)

    rows0 = img[y0]
    rows1 = img[y1]
    if img.ndim == 3:
        fy_ = fy[:, None, None]
        fx_ = fx[None, :, None]
    else:
        fy_ = fy[:, None]
        fx_ = fx[None, :]
    top = rows0[:, x0] * (1 - fx_) + rows0[:, x1] * fx_
    bot = rows1[:, x0] * (1 - fx_) + rows1[:, x1] * fx_
    return top * (1 - fy_) + bot * fy_


def resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resampling that keeps masks binary."""
    h, w = mask.shape
    if (h, w) == (out_h, out_w):
        return mask.copy()
    ys = np.clip(((np.arange(out_h) + 0.5) * (h / out_h) - 0.5).round().astype(int), 0, h - 1)
    xs = np.clip(((np.arange(out_w) + 0.5) * (w / out_w) - 0.5).round().astype(int), 0, w - 1)
    return mask[ys][:, xs]


def save_png(img: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))
