"""Stochastic two-view augmentation pipeline.

Each stage maps a CHW float image in [0, 1] to another one, drawing from a
caller-supplied numpy Generator; the whole pipeline is a pure function of
(image, config, seed, stream). Stage order: crop -> jitter -> grayscale ->
[blur] -> flip. Blur is only enabled for the low-complexity grayscale-origin
datasets; CIFAR-10-like configs leave it off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic, platform-independent generator for (seed, stream)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class AugmentationConfig:
    crop_scale_range: tuple = (0.2, 1.0)
    crop_aspect_range: tuple = (3.0 / 4.0, 4.0 / 3.0)
    jitter_brightness: float = 0.4
    jitter_contrast: float = 0.4
    jitter_saturation: float = 0.4
    jitter_hue: float = 0.1
    jitter_probability: float = 0.8
    grayscale_probability: float = 0.2
    hflip_probability: float = 0.5
    blur_sigma_range: tuple = (0.1, 2.0)
    blur_probability: float = 0.5
    blur_enabled: bool = False
    output_size: tuple = (32, 32)

    def __post_init__(self):
        for name in ("jitter_probability", "grayscale_probability", "hflip_probability", "blur_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale_range must lie within (0, 1], got {self.crop_scale_range}")
        slo, shi = self.blur_sigma_range
        if not (0.0 < slo <= shi):
            raise ValueError(f"blur_sigma_range must be positive, got {self.blur_sigma_range}")


def config_for_dataset(name: str) -> AugmentationConfig:
    """Blur is part of the pipeline only for MNIST-family datasets."""
    return AugmentationConfig(blur_enabled=name in ("mnist", "fashion_mnist"))


@dataclass
class ViewPair:
    """Two augmented views of one image plus the original."""

    x: np.ndarray
    x1: np.ndarray
    x2: np.ndarray


# ---------------------------------------------------------------------------
# primitives


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a CHW image (half-pixel centers, clamp-to-edge)."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = (ys - y0).astype(img.dtype)
    wx = (xs - x0).astype(img.dtype)
    y0c = np.clip(y0, 0, h - 1).astype(np.intp)
    y1c = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    x0c = np.clip(x0, 0, w - 1).astype(np.intp)
    x1c = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    top = img[:, y0c, :]
    bot = img[:, y1c, :]
    row0 = top[:, :, x0c] * (1 - wx) + top[:, :, x1c] * wx
    row1 = bot[:, :, x0c] * (1 - wx) + bot[:, :, x1c] * wx
    return row0 * (1 - wy[:, None]) + row1 * wy[:, None]


def luma(img: np.ndarray) -> np.ndarray:
    """BT.601 grayscale of a 3-channel image, shape (h, w)."""
    return np.tensordot(LUMA_WEIGHTS.astype(img.dtype), img, axes=([0], [0]))


def _require_rgb(img: np.ndarray, stage: str):
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"{stage} expects a 3-channel CHW image, got shape {img.shape}")


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(img * img.dtype.type(factor), 0.0, 1.0)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    m = img.dtype.type(luma(img).mean())
    return np.clip(m + img.dtype.type(factor) * (img - m), 0.0, 1.0)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    g = luma(img)[None, :, :]
    return np.clip(g + img.dtype.type(factor) * (img - g), 0.0, 1.0)


def _rgb_to_hsv(img: np.ndarray):
    r, g, b = img[0], img[1], img[2]
    maxc = img.max(axis=0)
    minc = img.min(axis=0)
    v = maxc
    delta = maxc - minc
    safe_max = np.where(maxc > 0, maxc, 1)
    s = np.where(maxc > 0, delta / safe_max, 0)
    safe_delta = np.where(delta > 0, delta, 1)
    rc = (maxc - r) / safe_delta
    gc = (maxc - g) / safe_delta
    bc = (maxc - b) / safe_delta
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return h, s, v


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.astype(np.intp) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices_r = np.stack([v, q, p, p, t, v])
    choices_g = np.stack([t, v, v, q, p, p])
    choices_b = np.stack([p, p, t, v, v, q])
    idx = i[None, :, :]
    r = np.take_along_axis(choices_r, idx, axis=0)[0]
    g = np.take_along_axis(choices_g, idx, axis=0)[0]
    b = np.take_along_axis(choices_b, idx, axis=0)[0]
    return np.stack([r, g, b])


def adjust_hue(img: np.ndarray, shift: float) -> np.ndarray:
    """Rotate hue by ``shift`` (fraction of the hue circle, in [-0.5, 0.5])."""
    if shift == 0.0:
        return img
    h, s, v = _rgb_to_hsv(img.astype(np.float64, copy=False))
    h = (h + shift) % 1.0
    return np.clip(_hsv_to_rgb(h, s, v), 0.0, 1.0).astype(img.dtype)


# ---------------------------------------------------------------------------
# pipeline stages


def random_resized_crop(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    c, h, w = img.shape
    if h < 1 or w < 1:
        raise ValueError(f"random_resized_crop: empty image with shape {img.shape}")
    out_h, out_w = cfg.output_size
    area = h * w
    log_lo, log_hi = math.log(cfg.crop_aspect_range[0]), math.log(cfg.crop_aspect_range[1])
    for _ in range(10):
        target_area = rng.uniform(cfg.crop_scale_range[0], cfg.crop_scale_range[1]) * area
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        cw = int(round(math.sqrt(target_area * aspect)))
        ch = int(round(math.sqrt(target_area / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = img[:, top : top + ch, left : left + cw]
            return resize_bilinear(crop, out_h, out_w)
    # center fallback: clamp aspect to range, take the largest fitting box
    in_ratio = w / h
    if in_ratio < cfg.crop_aspect_range[0]:
        cw = w
        ch = int(round(cw / cfg.crop_aspect_range[0]))
    elif in_ratio > cfg.crop_aspect_range[1]:
        ch = h
        cw = int(round(ch * cfg.crop_aspect_range[1]))
    else:
        cw, ch = w, h
    top = (h - ch) // 2
    left = (w - cw) // 2
    crop = img[:, top : top + ch, left : left + cw]
    return resize_bilinear(crop, out_h, out_w)


def color_jitter(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    _require_rgb(img, "color_jitter")
    if rng.random() >= cfg.jitter_probability:
        return img
    order = rng.permutation(4)
    for op in order:
        if op == 0:
            img = adjust_brightness(img, rng.uniform(1.0 - cfg.jitter_brightness, 1.0 + cfg.jitter_brightness))
        elif op == 1:
            img = adjust_contrast(img, rng.uniform(1.0 - cfg.jitter_contrast, 1.0 + cfg.jitter_contrast))
        elif op == 2:
            img = adjust_saturation(img, rng.uniform(1.0 - cfg.jitter_saturation, 1.0 + cfg.jitter_saturation))
        else:
            img = adjust_hue(img, rng.uniform(-cfg.jitter_hue, cfg.jitter_hue))
    return img


def random_grayscale(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    _require_rgb(img, "random_grayscale")
    if rng.random() >= cfg.grayscale_probability:
        return img
    g = luma(img)
    return np.stack([g, g, g])


def random_horizontal_flip(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    if rng.random() >= cfg.hflip_probability:
        return img
    return img[:, :, ::-1].copy()


def gaussian_kernel_1d(sigma: float, radius: int = 1) -> np.ndarray:
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    if rng.random() >= cfg.blur_probability:
        return img
    sigma = rng.uniform(cfg.blur_sigma_range[0], cfg.blur_sigma_range[1])
    k = gaussian_kernel_1d(sigma).astype(img.dtype)
    pad = np.pad(img, ((0, 0), (1, 1), (0, 0)), mode="reflect")
    img = k[0] * pad[:, :-2, :] + k[1] * pad[:, 1:-1, :] + k[2] * pad[:, 2:, :]
    pad = np.pad(img, ((0, 0), (0, 0), (1, 1)), mode="reflect")
    return k[0] * pad[:, :, :-2] + k[1] * pad[:, :, 1:-1] + k[2] * pad[:, :, 2:]


def augment_once(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    out = random_resized_crop(img, cfg, rng)
    out = color_jitter(out, cfg, rng)
    out = random_grayscale(out, cfg, rng)
    if cfg.blur_enabled:
        out = gaussian_blur(out, cfg, rng)
    out = random_horizontal_flip(out, cfg, rng)
    return out


def make_views(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> ViewPair:
    """Draw two independent augmentations of ``x``; the original is retained."""
    x1 = augment_once(x, cfg, rng)
    x2 = augment_once(x, cfg, rng)
    return ViewPair(x=x, x1=x1, x2=x2)


def identity_config() -> AugmentationConfig:
    """Config under which every stage is the identity map (for tests)."""
    return AugmentationConfig(
        crop_scale_range=(1.0, 1.0),
        crop_aspect_range=(1.0, 1.0),
        jitter_probability=0.0,
        grayscale_probability=0.0,
        hflip_probability=0.0,
        blur_probability=0.0,
        blur_enabled=False,
    )
