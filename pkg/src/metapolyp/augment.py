"""Sample-level augmentation: geometric transforms, CutOut and CutMix.

Every transform applies the identical geometric change to image and mask;
masks always resample nearest-neighbor so they stay strictly binary. All
randomness comes from the caller-supplied Rng, so a fixed seed reproduces
the augmented stream bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Sample, resize_bilinear, resize_nearest
from .errors import ConfigError, DimensionError
from .rng import Rng


@dataclass(frozen=True)
class AugmentConfig:
    """Per-transform probabilities and geometric parameters.

    ``cutout_fill`` is the image value written into holes: 0.0 blanks in
    normalized space (mid-gray), -1.0 corresponds to pre-normalization black.
    """

    p_flip_h: float = 0.5
    p_flip_v: float = 0.5
    p_rotate: float = 0.5
    p_center_crop: float = 0.5
    p_grid: float = 0.5
    p_cutout: float = 0.5
    p_cutmix: float = 0.5
    rotate_deg: float = 35.0
    crop_fraction: tuple = (0.7, 1.0)
    grid_cells: int = 5
    grid_magnitude: float = 0.3
    cutout_holes: tuple = (1, 2)
    cutout_frac: tuple = (0.05, 0.15)
    cutout_fill: float = 0.0
    cutmix_frac: tuple = (0.1, 0.4)

    def validate(self) -> None:
        probs = (self.p_flip_h, self.p_flip_v, self.p_rotate, self.p_center_crop,
                 self.p_grid, self.p_cutout, self.p_cutmix)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError(f"augment probabilities must lie in [0, 1], got {probs}")
        if self.rotate_deg < 0 or self.grid_cells < 2 or self.grid_magnitude < 0:
            raise ConfigError("geometric augment parameters must be positive")
        for lo, hi in (self.crop_fraction, self.cutout_frac, self.cutmix_frac):
            if not 0.0 <= lo <= hi:
                raise ConfigError(f"invalid range ({lo}, {hi})")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(p_flip_h=0, p_flip_v=0, p_rotate=0, p_center_crop=0,
                   p_grid=0, p_cutout=0, p_cutmix=0)


def flip_h(sample: Sample) -> Sample:
    return replace(sample,
                   image=np.ascontiguousarray(sample.image[:, ::-1]),
                   mask=np.ascontiguousarray(sample.mask[:, ::-1]))


def flip_v(sample: Sample) -> Sample:
    return replace(sample,
                   image=np.ascontiguousarray(sample.image[::-1]),
                   mask=np.ascontiguousarray(sample.mask[::-1]))


def _remap(img: np.ndarray, src_rows: np.ndarray, src_cols: np.ndarray,
           nearest: bool, fill: float) -> np.ndarray:
    """Sample img at fractional (src_rows, src_cols); out-of-bounds -> fill."""
    h, w = img.shape[:2]
    if nearest:
        r = np.round(src_rows).astype(int)
        c = np.round(src_cols).astype(int)
        inside = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        out = np.full(img.shape, np.float32(fill), dtype=np.float32)
        out[inside] = img[r[inside], c[inside]]
        return out
    r0 = np.floor(src_rows).astype(int)
    c0 = np.floor(src_cols).astype(int)
    fr = (src_rows - r0).astype(np.float32)[..., None]
    fc = (src_cols - c0).astype(np.float32)[..., None]
    acc = np.zeros(img.shape, dtype=np.float32)
    wsum = np.zeros(img.shape[:2] + (1,), dtype=np.float32)
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            rr, cc = r0 + dr, c0 + dc
            inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            wgt = wr * wc
            wgt = np.where(inside[..., None], wgt, 0.0)
            rr2 = np.clip(rr, 0, h - 1)
            cc2 = np.clip(cc, 0, w - 1)
            acc += wgt * img[rr2, cc2]
            wsum += wgt
    return acc + (1.0 - wsum) * np.float32(fill)


def rotate(sample: Sample, angle_deg: float, image_fill: float = -1.0) -> Sample:
    """Rotate image and mask about the center; extents unchanged."""
    h, w = sample.image.shape[:2]
    theta = np.deg2rad(angle_deg)
    ct, st = np.cos(theta), np.sin(theta)
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dy, dx = rows - cy, cols - cx
    src_rows = cy + ct * dy - st * dx
    src_cols = cx + st * dy + ct * dx
    img = _remap(sample.image, src_rows, src_cols, nearest=False, fill=image_fill)
    msk = _remap(sample.mask, src_rows, src_cols, nearest=True, fill=0.0)
    return replace(sample, image=img, mask=msk)


def random_rotate(sample: Sample, rng: Rng, cfg: AugmentConfig) -> Sample:
    angle = float(rng.uniform((), -cfg.rotate_deg, cfg.rotate_deg))
    return rotate(sample, angle)


def center_crop(sample: Sample, rng: Rng, cfg: AugmentConfig) -> Sample:
    """Crop a centered window, then resize back to the original extents."""
    h, w = sample.image.shape[:2]
    frac = float(rng.uniform((), cfg.crop_fraction[0], cfg.crop_fraction[1]))
    ch, cw = int(round(frac * h)), int(round(frac * w))
    if frac <= 0 or ch < 1 or cw < 1 or ch > h or cw > w:
        raise ConfigError(f"degenerate crop window {ch}x{cw} from fraction {frac}")
    top, left = (h - ch) // 2, (w - cw) // 2
    img = sample.image[top:top + ch, left:left + cw]
    msk = sample.mask[top:top + ch, left:left + cw]
    return replace(sample,
                   image=resize_bilinear(img, (h, w)),
                   mask=resize_nearest(msk, (h, w)))


def _distorted_axis(rng: Rng, extent: int, cells: int, magnitude: float) -> np.ndarray:
    """Per-pixel source coordinates for one axis of a grid distortion."""
    steps = 1.0 + rng.uniform((cells,), -magnitude, magnitude).astype(np.float64)
    bounds_src = np.concatenate([[0.0], np.cumsum(steps)])
    bounds_src *= extent / bounds_src[-1]
    bounds_out = np.linspace(0.0, extent, cells + 1)
    centers = np.arange(extent, dtype=np.float64) + 0.5
    return np.interp(centers, bounds_out, bounds_src) - 0.5


def grid_distortion(sample: Sample, rng: Rng, cfg: AugmentConfig) -> Sample:
    """Piecewise-linear warp of the coordinate grid, separable per axis."""
    h, w = sample.image.shape[:2]
    src_r = _distorted_axis(rng, h, cfg.grid_cells, cfg.grid_magnitude)
    src_c = _distorted_axis(rng, w, cfg.grid_cells, cfg.grid_magnitude)
    rows = np.repeat(src_r[:, None], w, axis=1)
    cols = np.repeat(src_c[None, :], h, axis=0)
    img = _remap(sample.image, rows, cols, nearest=False, fill=-1.0)
    msk = _remap(sample.mask, rows, cols, nearest=True, fill=0.0)
    return replace(sample, image=img, mask=msk)


def cutout(sample: Sample, rng: Rng, cfg: AugmentConfig) -> Sample:
    """Blank random rectangles in the image and zero the mask there too."""
    h, w = sample.image.shape[:2]
    img = sample.image.copy()
    msk = sample.mask.copy()
    side = min(h, w)
    holes = rng.randint(cfg.cutout_holes[0], cfg.cutout_holes[1] + 1)
    for _ in range(holes):
        hh = int(round(float(rng.uniform((), cfg.cutout_frac[0], cfg.cutout_frac[1])) * side))
        hw_ = int(round(float(rng.uniform((), cfg.cutout_frac[0], cfg.cutout_frac[1])) * side))
        if hh < 1 or hw_ < 1:
            continue
        top = rng.randint(0, h - hh + 1)
        left = rng.randint(0, w - hw_ + 1)
        img[top:top + hh, left:left + hw_, :] = np.float32(cfg.cutout_fill)
        msk[top:top + hh, left:left + hw_, :] = 0.0
    return replace(sample, image=img, mask=msk)


def cutout_at(sample: Sample, top: int, left: int, height: int, width: int,
              fill: float = 0.0) -> Sample:
    """CutOut with an explicit hole, clamped to the sample bounds."""
    h, w = sample.image.shape[:2]
    img = sample.image.copy()
    msk = sample.mask.copy()
    t, l = max(top, 0), max(left, 0)
    b, r = min(top + height, h), min(left + width, w)
    if b > t and r > l:
        img[t:b, l:r, :] = np.float32(fill)
        msk[t:b, l:r, :] = 0.0
    return replace(sample, image=img, mask=msk)


def cutmix(a: Sample, b: Sample, rng: Rng, cfg: AugmentConfig) -> Sample:
    """Paste a random rectangle of b (image and mask) into a."""
    if a.image.shape != b.image.shape or a.mask.shape != b.mask.shape:
        raise DimensionError(f"cutmix: sample extents differ: "
                             f"{a.image.shape} vs {b.image.shape}")
    h, w = a.image.shape[:2]
    frac = float(rng.uniform((), cfg.cutmix_frac[0], cfg.cutmix_frac[1]))
    aspect = float(rng.uniform((), 0.5, 2.0))
    area = frac * h * w
    img = a.image.copy()
    msk = a.mask.copy()
    if area >= 0.5:
        # size from area and aspect, then re-derive each side from the area
        # after clamping so a fraction of 1.0 always covers the full frame
        ph = min(max(int(round(np.sqrt(area / aspect))), 1), h)
        pw_ = min(max(int(round(area / ph)), 1), w)
        ph = min(max(int(round(area / pw_)), 1), h)
        top = rng.randint(0, h - ph + 1)
        left = rng.randint(0, w - pw_ + 1)
        img[top:top + ph, left:left + pw_, :] = b.image[top:top + ph, left:left + pw_, :]
        msk[top:top + ph, left:left + pw_, :] = b.mask[top:top + ph, left:left + pw_, :]
    return replace(a, image=img, mask=msk)


class AugmentPipeline:
    """Applies the configured transforms, each gated by its probability.

    The gate draw is consumed for every transform whether or not it fires,
    so the stream position depends only on (rng, donor availability).
    With all probabilities zero the pipeline is the identity.
    """

    def __init__(self, cfg: AugmentConfig):
        cfg.validate()
        self.cfg = cfg

    def apply(self, sample: Sample, rng: Rng,
              donor: Optional[Sample] = None) -> Sample:
        cfg = self.cfg
        out = sample
        if float(rng.uniform(())) < cfg.p_center_crop:
            out = center_crop(out, rng, cfg)
        if float(rng.uniform(())) < cfg.p_rotate:
            out = random_rotate(out, rng, cfg)
        if float(rng.uniform(())) < cfg.p_grid:
            out = grid_distortion(out, rng, cfg)
        if float(rng.uniform(())) < cfg.p_flip_h:
            out = flip_h(out)
        if float(rng.uniform(())) < cfg.p_flip_v:
            out = flip_v(out)
        if float(rng.uniform(())) < cfg.p_cutout:
            out = cutout(out, rng, cfg)
        if donor is not None and float(rng.uniform(())) < cfg.p_cutmix:
            out = cutmix(out, donor, rng, cfg)
        return out
