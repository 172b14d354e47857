"""Small raster helpers shared by the renderer and the augmentation pipeline."""
import colorsys

import numpy as np


def hsv(h, s, v):
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float64)


def bilinear_weights(shape, xs, ys, wrap_x=False):
    """Flat source indices (4, ...) and weights (4, ...) for bilinear sampling.

    Pixel (r, c) sits at integer coordinate (y=r, x=c). Out-of-range rows are
    clamped to the edge; columns either wrap (panoramas) or clamp.
    """
    h, w = shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1)
    xs = np.mod(xs, w) if wrap_x else np.clip(xs, 0.0, w - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx, fy = xs - x0, ys - y0
    x0 = np.mod(x0, w) if wrap_x else x0
    x1 = np.mod(x0 + 1, w) if wrap_x else np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    idx = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1])
    wts = np.stack([(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy])
    return idx, wts


def apply_bilinear(img, idx, wts):
    flat = img.reshape(-1, img.shape[-1]).astype(np.float64, copy=False)
    out = flat[idx[0]] * wts[0][..., None]
    for k in range(1, 4):
        out += flat[idx[k]] * wts[k][..., None]
    return out


def bilinear_sample(img, xs, ys, wrap_x=False):
    """Sample ``img`` (H, W, C) at continuous pixel coordinates."""
    idx, wts = bilinear_weights(img.shape, xs, ys, wrap_x)
    return apply_bilinear(img, idx, wts)


def save_png(path, pixels):
    from PIL import Image

    arr = np.clip(np.round(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
