"""Weak-crop augmentation for the instance-classification views.

Scene views hold several objects, so the crop keeps at least 80% of the
area and an affine jitter stands in for aggressive resized crops. Horizontal
flips are never applied: they would invert the left/right structure the
jigsaw heading labels depend on.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .imaging import bilinear_sample
from .world import ViewImage

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale_min: float = 0.8
    crop_scale_max: float = 1.0
    aspect_jitter: float = 0.1
    rotation_deg: float = 10.0
    shear_deg: float = 10.0
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)
    hflip: bool = False

    def __post_init__(self):
        if not 0.8 <= self.crop_scale_min <= self.crop_scale_max <= 1.0:
            raise ValueError("crop scale range must lie within [0.8, 1.0]")
        if not (0 <= self.rotation_deg <= 10 and 0 <= self.shear_deg <= 10):
            raise ValueError("rotation and shear ranges must lie within +-10 degrees")
        if self.hflip:
            raise ValueError("horizontal flip is not supported (it breaks jigsaw heading labels)")

    def to_dict(self):
        d = asdict(self)
        d["blur_sigma"] = list(self.blur_sigma)
        return d


@dataclass(frozen=True)
class AugmentParams:
    crop: tuple  # x0, y0, w, h in source pixels
    angle_deg: float
    shear_deg: float
    brightness: float
    contrast: float
    saturation: float
    grayscale: bool
    blur_sigma: float | None

    def crop_area_fraction(self, size):
        return self.crop[2] * self.crop[3] / float(size * size)

    @classmethod
    def identity(cls, size):
        return cls((0.0, 0.0, float(size), float(size)), 0.0, 0.0, 1.0, 1.0, 1.0, False, None)


def draw_params(rng: np.random.Generator, size: int, cfg: AugmentConfig = AugmentConfig()) -> AugmentParams:
    area = float(size * size)
    scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max)
    ratio = math.exp(rng.uniform(math.log(1 - cfg.aspect_jitter), math.log(1 + cfg.aspect_jitter)))
    w = min(float(size), math.sqrt(scale * area * ratio))
    h = min(float(size), math.sqrt(scale * area / ratio))
    x0 = rng.uniform(0.0, size - w)
    y0 = rng.uniform(0.0, size - h)
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    shear = rng.uniform(-cfg.shear_deg, cfg.shear_deg)
    b = rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)
    c = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)
    s = rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)
    gray = bool(rng.random() < cfg.grayscale_prob)
    blur = float(rng.uniform(*cfg.blur_sigma)) if rng.random() < cfg.blur_prob else None
    return AugmentParams((x0, y0, w, h), angle, shear, b, c, s, gray, blur)


def _grayscale(img):
    return img @ _LUMA


def _blur3(img, sigma):
    k = np.exp(-np.array([1.0, 0.0, 1.0]) / (2.0 * sigma * sigma))
    k = k / k.sum()
    pad = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    rows = k[0] * pad[:-2] + k[1] * pad[1:-1] + k[2] * pad[2:]
    return k[0] * rows[:, :-2] + k[1] * rows[:, 1:-1] + k[2] * rows[:, 2:]


def apply_params(pixels, params: AugmentParams) -> np.ndarray:
    img = np.asarray(pixels, dtype=np.float64)
    size_y, size_x = img.shape[:2]
    grid = np.arange(size_x, dtype=np.float64)

    # 1. crop + resize back to the original raster
    x0, y0, w, h = params.crop
    xs = x0 + (grid + 0.5) * (w / size_x) - 0.5
    ys = y0 + (np.arange(size_y) + 0.5) * (h / size_y) - 0.5
    img = bilinear_sample(img, xs[None, :].repeat(size_y, 0), ys[:, None].repeat(size_x, 1))

    # 2. rotation + shear about the centre, edges replicated
    if params.angle_deg != 0.0 or params.shear_deg != 0.0:
        a, sh = math.radians(params.angle_deg), math.radians(params.shear_deg)
        fwd = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]) @ np.array(
            [[1.0, math.tan(sh)], [0.0, 1.0]]
        )
        inv = np.linalg.inv(fwd)
        cx, cy = (size_x - 1) / 2.0, (size_y - 1) / 2.0
        yy, xx = np.meshgrid(np.arange(size_y) - cy, grid - cx, indexing="ij")
        src_x = inv[0, 0] * xx + inv[0, 1] * yy + cx
        src_y = inv[1, 0] * xx + inv[1, 1] * yy + cy
        img = bilinear_sample(img, src_x, src_y)

    # 3. colour jitter (factor 1 leaves pixels untouched)
    img = np.clip(img * params.brightness, 0.0, 1.0)
    mean = float(np.mean(_grayscale(img)))
    img = np.clip(img * params.contrast + mean * (1.0 - params.contrast), 0.0, 1.0)
    gray = _grayscale(img)[..., None]
    img = np.clip(img * params.saturation + gray * (1.0 - params.saturation), 0.0, 1.0)

    # 4. optional grayscale, 5. optional blur
    if params.grayscale:
        img = np.repeat(_grayscale(img)[..., None], 3, axis=2)
    if params.blur_sigma is not None:
        img = _blur3(img, params.blur_sigma)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def augment(view, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()):
    """Augment a ViewImage (or a raw (H, W, 3) array) with parameters drawn from ``rng``."""
    pixels = view.pixels if isinstance(view, ViewImage) else view
    params = draw_params(rng, pixels.shape[1], cfg)
    out = apply_params(pixels, params)
    return ViewImage(out, view.pose) if isinstance(view, ViewImage) else out
