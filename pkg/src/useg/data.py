"""Dataset plumbing: PNG I/O, preprocessing, augmentation and a deterministic
synthetic scene generator for class-imbalanced inspection imagery.

Images are (H, W, 3) float64 arrays in [0, 255]; label masks are (H, W)
integer class indices with a parallel boolean validity mask (False =
occluded / unlabeled, excluded from loss and metrics).  Mask PNG files store
one byte per pixel: the class index, with 255 meaning invalid.

The scene generator paints class blobs onto a textured background under a
per-class pixel budget, so realized class fractions track the requested ones.
Two deliberate nuisance factors make the rare corroded class genuinely hard:

* a share of corroded blobs is rendered "faint" — blended most of the way
  toward the background coating color (missable positives);
* bright rust-tinted dust streaks are drawn over the image without any label
  change (false-positive bait).

All randomness flows from explicit seeds; nothing touches global RNG state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image

DEFAULT_CLASS_NAMES = ("coating", "wet_coating", "corroded", "rivet", "water",
                       "others")

INVALID_MASK_VALUE = 255

# mean RGB per class; chosen to overlap where the real materials do
DEFAULT_CLASS_COLORS = (
    (105.0, 95.0, 90.0),   # coating: gray-brown
    (72.0, 78.0, 96.0),    # wet coating: darker, bluish sheen
    (152.0, 88.0, 52.0),   # corroded: rust orange
    (170.0, 170.0, 178.0),  # rivet: bright metal
    (58.0, 88.0, 112.0),   # water: blue-green
    (125.0, 118.0, 98.0),  # others: olive debris
)

DEFAULT_BLOB_RADII = ((0.0, 0.0), (2.0, 7.0), (1.0, 4.0), (2.0, 5.0),
                      (2.0, 8.0), (1.0, 5.0))

DUST_TINT = (90.0, 55.0, 30.0)  # bright, rust-leaning: looks like corrosion


class InfeasibleFractionsError(ValueError):
    pass


@dataclass(frozen=True)
class ClassTaxonomy:
    names: Tuple[str, ...] = DEFAULT_CLASS_NAMES
    noisy_corroded_policy: str = "merge"  # or "invalid"

    def validate(self):
        if not 2 <= len(self.names) <= 255:
            raise ValueError(f"need 2..255 classes, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        if self.noisy_corroded_policy not in ("merge", "invalid"):
            raise ValueError(f"unknown noisy_corroded_policy "
                             f"{self.noisy_corroded_policy!r}")
        return self

    @property
    def num_classes(self):
        return len(self.names)

    def index_of(self, name):
        return self.names.index(name)


@dataclass
class LabeledSample:
    image: np.ndarray   # (H, W, 3) float64 in [0, 255]
    labels: np.ndarray  # (H, W) int
    valid: np.ndarray   # (H, W) bool

    def copy(self):
        return LabeledSample(self.image.copy(), self.labels.copy(),
                             self.valid.copy())

    def class_fractions(self, num_classes):
        """Fraction of *all* pixels that are valid members of each class."""
        total = self.labels.size
        return np.array([((self.labels == c) & self.valid).sum() / total
                         for c in range(num_classes)])


def image_to_input(image):
    """(H, W, 3) image in [0, 255] -> (3, H, W) network input in [0, 1]."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    return np.ascontiguousarray(image.transpose(2, 0, 1)) / 255.0


def class_histogram(samples, num_classes):
    """Valid-pixel counts per class, pooled over samples."""
    hist = np.zeros(num_classes, dtype=np.int64)
    for s in samples:
        v = s.valid.astype(bool)
        hist += np.bincount(s.labels[v].ravel(), minlength=num_classes)[:num_classes]
    return hist


# -- contrast-limited adaptive histogram equalization -------------------------


def _clahe_tile_lut(tile_vals, clip_limit):
    hist = np.bincount(tile_vals.ravel(), minlength=256).astype(np.float64)
    n = tile_vals.size
    cap = clip_limit * n / 256.0
    excess = np.maximum(hist - cap, 0.0).sum()
    hist = np.minimum(hist, cap) + excess / 256.0
    cdf = np.cumsum(hist)  # inclusive
    return np.floor(255.0 * cdf / n)


def _clahe_gray(channel, clip_limit, tiles):
    ty, tx = tiles
    h, w = channel.shape
    th = (h + ty - 1) // ty
    tw = (w + tx - 1) // tx
    padded = np.pad(channel, ((0, ty * th - h), (0, tx * tw - w)), mode="edge")
    vals = np.clip(np.rint(padded), 0, 255).astype(np.intp)

    luts = np.empty((ty, tx, 256))
    for i in range(ty):
        for j in range(tx):
            luts[i, j] = _clahe_tile_lut(
                vals[i * th:(i + 1) * th, j * tw:(j + 1) * tw], clip_limit)

    # bilinear blend between the four surrounding tile mappings
    fy = (np.arange(ty * th) + 0.5) / th - 0.5
    fx = (np.arange(tx * tw) + 0.5) / tw - 0.5
    i0 = np.clip(np.floor(fy).astype(np.intp), 0, ty - 1)
    j0 = np.clip(np.floor(fx).astype(np.intp), 0, tx - 1)
    i1 = np.minimum(i0 + 1, ty - 1)
    j1 = np.minimum(j0 + 1, tx - 1)
    wy = np.clip(fy - np.floor(fy), 0.0, 1.0)[:, None]
    wx = np.clip(fx - np.floor(fx), 0.0, 1.0)[None, :]

    out = ((1 - wy) * (1 - wx) * luts[i0[:, None], j0[None, :], vals]
           + (1 - wy) * wx * luts[i0[:, None], j1[None, :], vals]
           + wy * (1 - wx) * luts[i1[:, None], j0[None, :], vals]
           + wy * wx * luts[i1[:, None], j1[None, :], vals])
    return out[:h, :w]


def clahe(image, clip_limit=2.0, tiles=(8, 8)):
    """Histogram equalization per tile with a clipped histogram; mappings are
    interpolated bilinearly between tile centers.  Three-channel input is
    equalized on its luminance with the chroma offsets preserved."""
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty image")
    if clip_limit <= 0:
        raise ValueError(f"clip_limit must be positive, got {clip_limit}")
    if len(tiles) != 2 or tiles[0] < 1 or tiles[1] < 1:
        raise ValueError(f"tiles must be two positive counts, got {tiles}")
    if img.ndim == 2:
        return _clahe_gray(img, clip_limit, tiles)
    if img.ndim == 3 and img.shape[2] == 3:
        lum = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
        eq = _clahe_gray(lum, clip_limit, tiles)
        return np.clip(img + (eq - lum)[..., None], 0.0, 255.0)
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


# -- occlusion ----------------------------------------------------------------


def apply_occlusion_mask(sample, mask_image):
    """Marks pixels invalid wherever mask_image is zero (zero = occluded)."""
    mask = np.asarray(mask_image)
    if mask.shape != sample.labels.shape:
        raise ValueError(f"mask dims {mask.shape} do not match sample "
                         f"{sample.labels.shape}")
    out = sample.copy()
    out.valid &= mask != 0
    return out


# -- augmentation -------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 15.0
    crop_pad: int = 6
    gamma_range: Tuple[float, float] = (0.7, 1.4)
    brightness: float = 25.0
    color_shift: float = 10.0
    p_rotate: float = 0.5
    p_crop: float = 0.5
    p_gamma: float = 0.5
    p_brightness: float = 0.5
    p_color: float = 0.5
    seed: int = 0

    def validate(self):
        if self.rotation_deg < 0 or self.crop_pad < 0:
            raise ValueError("rotation_deg and crop_pad must be >= 0")
        lo, hi = self.gamma_range
        if not 0 < lo <= hi:
            raise ValueError(f"gamma_range must be 0 < lo <= hi, got {self.gamma_range}")
        if self.brightness < 0 or self.color_shift < 0:
            raise ValueError("brightness and color_shift must be >= 0")
        for p in (self.p_rotate, self.p_crop, self.p_gamma, self.p_brightness,
                  self.p_color):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probabilities must be in [0, 1], got {p}")
        return self


def affine_resample(sample, angle_deg=0.0, dy=0.0, dx=0.0):
    """Rotates about the image center, then translates by (dy, dx).

    The image is sampled bilinearly, labels and validity nearest-neighbor;
    pixels pulled from outside the source frame become invalid (image 0).
    """
    h, w = sample.labels.shape
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    if angle_deg % 90.0 == 0.0:
        c, s = round(c), round(s)  # keep lattice rotations exact
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    py = yy - cy - dy
    px = xx - cx - dx
    ys = c * py + s * px + cy  # inverse rotation
    xs = -s * py + c * px + cx

    inside = (ys >= 0) & (ys <= h - 1) & (xs >= 0) & (xs <= w - 1)
    ysc = np.clip(ys, 0, h - 1)
    xsc = np.clip(xs, 0, w - 1)

    y0 = np.floor(ysc).astype(np.intp)
    x0 = np.floor(xsc).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ysc - y0)[..., None]
    fx = (xsc - x0)[..., None]
    img = sample.image
    out_img = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
               + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    out_img[~inside] = 0.0

    yn = np.clip(np.rint(ysc), 0, h - 1).astype(np.intp)
    xn = np.clip(np.rint(xsc), 0, w - 1).astype(np.intp)
    out_labels = sample.labels[yn, xn]
    out_valid = sample.valid[yn, xn] & inside
    out_labels = np.where(out_valid, out_labels, 0)
    return LabeledSample(out_img, out_labels, out_valid)


def augment(sample, config, draw):
    """Applies the configured random transforms; deterministic in
    (config.seed, draw).  Geometric ops move image, labels and validity
    congruently; photometric ops touch the image only."""
    config.validate()
    h, w = sample.labels.shape
    if config.crop_pad >= min(h, w):
        raise ValueError(f"crop_pad {config.crop_pad} does not fit a "
                         f"{h}x{w} image")
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, draw)))

    angle = 0.0
    dy = dx = 0
    if rng.random() < config.p_rotate:
        angle = rng.uniform(-config.rotation_deg, config.rotation_deg)
    if rng.random() < config.p_crop:
        dy = int(rng.integers(-config.crop_pad, config.crop_pad + 1))
        dx = int(rng.integers(-config.crop_pad, config.crop_pad + 1))
    if angle != 0.0 or dy or dx:
        out = affine_resample(sample, angle, dy, dx)
    else:
        out = sample.copy()

    photometric = False
    if rng.random() < config.p_gamma:
        g = rng.uniform(*config.gamma_range)
        out.image = 255.0 * np.power(np.clip(out.image, 0.0, 255.0) / 255.0, g)
        photometric = True
    if rng.random() < config.p_brightness:
        out.image = out.image + rng.uniform(-config.brightness, config.brightness)
        photometric = True
    if rng.random() < config.p_color:
        out.image = out.image + rng.uniform(-config.color_shift,
                                            config.color_shift, size=3)
        photometric = True
    if photometric:
        out.image = np.clip(out.image, 0.0, 255.0)
    return out


# -- synthetic scenes ----------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    image_size: Tuple[int, int] = (64, 64)
    target_fractions: Tuple[float, ...] = (0.50, 0.12, 0.07, 0.03, 0.06, 0.05)
    blob_radii: Tuple[Tuple[float, float], ...] = DEFAULT_BLOB_RADII
    class_colors: Tuple[Tuple[float, float, float], ...] = DEFAULT_CLASS_COLORS
    color_jitter: float = 8.0
    noise_sigma: float = 6.0
    dust_streak_rate: float = 3.0
    faint_corroded_fraction: float = 0.35
    seed: int = 0

    def validate(self, num_classes):
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ValueError(f"image_size must be at least 8x8, got {h}x{w}")
        f = np.asarray(self.target_fractions, dtype=np.float64)
        if f.shape != (num_classes,):
            raise InfeasibleFractionsError(
                f"need {num_classes} target fractions, got {f.shape}")
        if np.any(f < 0):
            raise InfeasibleFractionsError("target fractions must be nonnegative")
        if f.sum() > 1.0 + 1e-9:
            raise InfeasibleFractionsError(
                f"target fractions sum to {f.sum():.4f} > 1")
        if len(self.blob_radii) != num_classes or \
                len(self.class_colors) != num_classes:
            raise ValueError("blob_radii and class_colors must have one entry "
                             "per class")
        if self.noise_sigma < 0 or self.color_jitter < 0 or \
                self.dust_streak_rate < 0:
            raise ValueError("noise/jitter/dust rates must be >= 0")
        if not 0.0 <= self.faint_corroded_fraction <= 1.0:
            raise ValueError("faint_corroded_fraction must be in [0, 1]")
        return self


def _ellipse_mask(shape, cy, cx, ry, rx, tilt, wobble=0.0, phase=0.0):
    h, w = shape
    y0 = max(int(cy - max(ry, rx)) - 2, 0)
    y1 = min(int(cy + max(ry, rx)) + 3, h)
    x0 = max(int(cx - max(ry, rx)) - 2, 0)
    x1 = min(int(cx + max(ry, rx)) + 3, w)
    if y0 >= y1 or x0 >= x1:
        return None, None
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    py, px = yy - cy, xx - cx
    ct, st = math.cos(tilt), math.sin(tilt)
    u = (ct * py + st * px) / max(ry, 1e-6)
    v = (-st * py + ct * px) / max(rx, 1e-6)
    r2 = u * u + v * v
    if wobble:
        ang = np.arctan2(v, u)
        r2 = r2 * (1.0 + wobble * np.sin(5.0 * ang + phase))
    return (slice(y0, y1), slice(x0, x1)), r2 <= 1.0


def _paint_class_blobs(rng, img, labels, valid, cls, budget, radii, color,
                       jitter, faint_fraction, coating_color):
    """Paints elliptical blobs of class cls over background pixels until the
    painted count reaches ~budget.  Returns pixels painted."""
    rmin, rmax = radii
    h, w = labels.shape
    painted = 0
    attempts = 0
    while painted < 0.97 * budget and attempts < 600:
        attempts += 1
        remaining = budget - painted
        cap = math.sqrt(max(remaining, 1.0) / math.pi) * 1.3
        r_hi = max(min(rmax, cap), rmin if rmin > 0 else 1.0)
        ry = rng.uniform(max(rmin, 1.0), max(r_hi, max(rmin, 1.0) + 1e-6))
        rx = ry * rng.uniform(0.6, 1.6)
        cy = rng.uniform(0, h - 1)
        cx = rng.uniform(0, w - 1)
        window, blob = _ellipse_mask((h, w), cy, cx, ry, rx,
                                     rng.uniform(0, math.pi),
                                     wobble=rng.uniform(0.0, 0.3),
                                     phase=rng.uniform(0, 2 * math.pi))
        if window is None:
            continue
        target = blob & (labels[window] == 0) & valid[window]
        count = int(target.sum())
        if count == 0 or count > remaining * 1.3 + 4:
            continue
        faint = rng.random() < faint_fraction
        base = np.asarray(color, dtype=np.float64)
        if faint:
            t = rng.uniform(0.45, 0.8)
            base = base + (np.asarray(coating_color) - base) * t
        base = base + rng.normal(0.0, jitter, size=3)
        img[window][target] = base
        labels[window][target] = cls
        painted += count
    return painted


def _paint_lens_covers(rng, img, valid, budget):
    """Dark invalid ellipses anchored in two opposite corners."""
    h, w = valid.shape
    if budget <= 0:
        return
    area_each = budget / 2.0
    r = math.sqrt(area_each / math.pi) * 2.0  # quarter-ellipse in a corner
    for corner in ((0.0, 0.0), (h - 1.0, w - 1.0)):
        ry = r * rng.uniform(0.75, 1.2)
        rx = r * rng.uniform(0.75, 1.2)
        window, blob = _ellipse_mask((h, w), corner[0], corner[1], ry, rx,
                                     rng.uniform(0, math.pi))
        if window is None:
            continue
        img[window][blob] = np.array([9.0, 9.0, 12.0]) + rng.normal(0, 2, size=3)
        valid[window][blob] = False


def _paint_dust_streaks(rng, img, rate):
    """Bright rust-tinted streaks; photometric only, labels untouched."""
    h, w = img.shape[:2]
    n = int(rng.poisson(rate))
    if n == 0:
        return
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(n):
        y0 = rng.uniform(0, h - 1)
        x0 = rng.uniform(0, w - 1)
        ang = rng.uniform(0, math.pi)
        length = rng.uniform(0.25, 0.7) * min(h, w)
        width = rng.uniform(0.7, 1.6)
        ey, ex = y0 + length * math.sin(ang), x0 + length * math.cos(ang)
        # distance from each pixel to the segment (y0,x0)-(ey,ex)
        vy, vx = ey - y0, ex - x0
        tt = np.clip(((yy - y0) * vy + (xx - x0) * vx) / (vy * vy + vx * vx),
                     0.0, 1.0)
        d2 = (yy - (y0 + tt * vy)) ** 2 + (xx - (x0 + tt * vx)) ** 2
        fall = np.exp(-d2 / (2.0 * width * width))
        k = rng.uniform(0.6, 1.2)
        img += fall[..., None] * (k * np.asarray(DUST_TINT))


def generate_scene(config, taxonomy=ClassTaxonomy()):
    """Renders one labeled scene, fully determined by config.seed.

    Background coating, per-class elliptical blobs under pixel budgets,
    corner lens-cover occlusions (invalid), faint corroded blobs per the
    taxonomy's noisy policy, and label-free dust streaks.  The image is
    quantized to whole levels so PNG round trips are exact.
    """
    taxonomy.validate()
    nc = taxonomy.num_classes
    config.validate(nc)
    h, w = config.image_size
    total = h * w
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))

    coating_color = np.asarray(config.class_colors[0], dtype=np.float64)
    img = np.empty((h, w, 3))
    img[:] = coating_color + rng.normal(0.0, config.color_jitter, size=3)
    # low-frequency mottling so the background is not flat
    gy = rng.normal(0.0, 1.0, size=(h // 8 + 2, w // 8 + 2, 3))
    mottle = np.kron(gy, np.ones((8, 8, 1)))[:h, :w]
    img += 4.0 * mottle

    labels = np.zeros((h, w), dtype=np.int64)
    valid = np.ones((h, w), dtype=bool)

    invalid_budget = (1.0 - float(np.sum(config.target_fractions))) * total
    _paint_lens_covers(rng, img, valid, invalid_budget)

    corroded_idx = (taxonomy.names.index("corroded")
                    if "corroded" in taxonomy.names else -1)
    faint_painted = np.zeros((h, w), dtype=bool)
    for cls in range(1, nc):
        budget = config.target_fractions[cls] * total
        if budget <= 0:
            continue
        faint_frac = (config.faint_corroded_fraction
                      if cls == corroded_idx else 0.0)
        before = labels.copy()
        _paint_class_blobs(rng, img, labels, valid, cls, budget,
                           config.blob_radii[cls], config.class_colors[cls],
                           config.color_jitter, faint_frac, coating_color)
        if cls == corroded_idx and faint_frac > 0.0:
            # blobs whose color landed near coating are the "noisy" ones;
            # approximate: re-detect as painted pixels closer to coating
            newly = (labels == cls) & (before != cls)
            dist_corr = np.linalg.norm(
                img - np.asarray(config.class_colors[cls]), axis=-1)
            dist_coat = np.linalg.norm(img - coating_color, axis=-1)
            faint_painted = newly & (dist_coat < dist_corr)

    if corroded_idx >= 0 and taxonomy.noisy_corroded_policy == "invalid":
        valid &= ~faint_painted
        labels = np.where(faint_painted, 0, labels)

    _paint_dust_streaks(rng, img, config.dust_streak_rate)
    img += rng.normal(0.0, config.noise_sigma, size=img.shape)
    img = np.rint(np.clip(img, 0.0, 255.0))
    labels = np.where(valid, labels, 0)
    return LabeledSample(img, labels, valid)


def build_dataset(config, n_train=38, n_test=32, taxonomy=ClassTaxonomy()):
    """Generates disjoint train/test splits; sample i of split s is seeded by
    (config.seed, s, i), so splits never share a scene."""
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    splits = []
    for split_id, n in ((0, n_train), (1, n_test)):
        samples = []
        for i in range(n):
            child = np.random.SeedSequence((config.seed, split_id, i))
            cfg = replace(config, seed=int(child.generate_state(1)[0]))
            samples.append(generate_scene(cfg, taxonomy))
        splits.append(samples)
    return splits[0], splits[1]


# -- PNG I/O -------------------------------------------------------------------


def save_png(path, image):
    """Writes an (H, W, 3) image in [0, 255]; values are rounded to bytes."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    Image.fromarray(np.rint(np.clip(arr, 0, 255)).astype(np.uint8),
                    mode="RGB").save(path, format="PNG")


def load_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def save_mask_png(path, labels, valid):
    """One byte per pixel: class index, 255 where invalid."""
    if labels.shape != valid.shape:
        raise ValueError("labels and valid dims differ")
    if labels.min() < 0 or labels.max() >= INVALID_MASK_VALUE:
        raise ValueError(f"labels must be in 0..{INVALID_MASK_VALUE - 1}")
    arr = np.where(valid, labels, INVALID_MASK_VALUE).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask_png(path):
    """Returns (labels, valid).  Only 8-bit single-channel masks are valid."""
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"mask {path} must be 8-bit single-channel, "
                             f"got mode {im.mode!r}")
        arr = np.asarray(im, dtype=np.int64)
    valid = arr != INVALID_MASK_VALUE
    return np.where(valid, arr, 0), valid


def load_sample(image_path, mask_path):
    image = load_png(image_path)
    labels, valid = load_mask_png(mask_path)
    if labels.shape != image.shape[:2]:
        raise ValueError(f"mask dims {labels.shape} do not match image "
                         f"{image.shape[:2]}")
    return LabeledSample(image, labels, valid)


def write_dataset(root, train, test):
    """Lays out images/, masks/ and a manifest.json with split membership."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    manifest = {"train": [], "test": []}
    for split, samples in (("train", train), ("test", test)):
        for i, s in enumerate(samples):
            stem = f"{split}_{i:04d}"
            entry = {"image": f"images/{stem}.png", "mask": f"masks/{stem}.png"}
            save_png(root / entry["image"], s.image)
            save_mask_png(root / entry["mask"], s.labels, s.valid)
            manifest[split].append(entry)
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    return root / "manifest.json"


def read_dataset(root):
    root = Path(root)
    with open(root / "manifest.json") as f:
        manifest = json.load(f)
    out = []
    for split in ("train", "test"):
        out.append([load_sample(root / e["image"], root / e["mask"])
                    for e in manifest[split]])
    return out[0], out[1]
