"""Dataset ingestion, splitting, resizing and the synthetic generator.

Directory layout: ``images/*.ppm`` paired with ``masks/*.pgm`` by file stem.
Images normalize to [-1, 1] via v/127.5 - 1; mask bytes >= 128 count as
foreground. Samples carry plain float32 arrays; they are wrapped in
tensors only at the training/inference boundary.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, PairingError, UsageError
from .netpbm import read_netpbm, write_pgm, write_ppm
from .rng import Rng
from .tensor import bilinear_matrix


@dataclass
class Sample:
    """One image/mask pair: image (H, W, 3) in [-1, 1], mask (H, W, 1) in {0, 1}."""

    id: str
    image: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test ratios (floor allocation, remainder to train) plus seed."""

    ratios: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def validate(self) -> None:
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ConfigError(f"ratios must be 3 non-negative numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"ratios {self.ratios} must sum to 1")


def resize_bilinear(img: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Half-pixel bilinear resize of an (H, W, C) or (H, W) float array."""
    oh, ow = out_hw
    squeeze = img.ndim == 2
    a = img[:, :, None] if squeeze else img
    if a.shape[:2] == (oh, ow):
        out = a.astype(np.float32)
    else:
        mh = bilinear_matrix(a.shape[0], oh)
        mw = bilinear_matrix(a.shape[1], ow)
        out = np.einsum("oh,hwc,pw->opc", mh, a.astype(np.float32), mw)
    return out[:, :, 0] if squeeze else out


def resize_nearest(img: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Nearest-neighbor resize; keeps binary masks binary."""
    oh, ow = out_hw
    h, w = img.shape[:2]
    rows = np.minimum((np.floor((np.arange(oh) + 0.5) * h / oh)).astype(int), h - 1)
    cols = np.minimum((np.floor((np.arange(ow) + 0.5) * w / ow)).astype(int), w - 1)
    return img[rows][:, cols].copy()


def _decode_image(arr: np.ndarray, target_hw: Optional[tuple]) -> np.ndarray:
    img = arr.astype(np.float32) / 127.5 - 1.0
    if target_hw is not None:
        img = resize_bilinear(img, target_hw)
    return np.ascontiguousarray(img, dtype=np.float32)


def _decode_mask(arr: np.ndarray, target_hw: Optional[tuple]) -> np.ndarray:
    mask = (arr >= 128).astype(np.float32)
    if target_hw is not None:
        mask = resize_nearest(mask, target_hw)
    return np.ascontiguousarray(mask[:, :, None], dtype=np.float32)


def load_dataset(images_dir: str, masks_dir: str,
                 target_hw: Optional[tuple] = None) -> list[Sample]:
    """Load paired .ppm images and .pgm masks, matched by file stem."""
    images = {os.path.splitext(f)[0]: os.path.join(images_dir, f)
              for f in sorted(os.listdir(images_dir)) if f.endswith(".ppm")}
    masks = {os.path.splitext(f)[0]: os.path.join(masks_dir, f)
             for f in sorted(os.listdir(masks_dir)) if f.endswith(".pgm")}
    for stem in images:
        if stem not in masks:
            raise PairingError(f"image {images[stem]!r} has no mask file")
    for stem in masks:
        if stem not in images:
            raise PairingError(f"mask {masks[stem]!r} has no image file")
    samples = []
    for stem in sorted(images):
        img = _decode_image(read_netpbm(images[stem]), target_hw)
        mask = _decode_mask(read_netpbm(masks[stem]), target_hw)
        if img.shape[:2] != mask.shape[:2]:
            raise PairingError(f"image/mask extents differ for {stem!r}: "
                               f"{img.shape[:2]} vs {mask.shape[:2]}")
        samples.append(Sample(stem, img, mask))
    return samples


def save_dataset(samples: Sequence[Sample], out_dir: str) -> None:
    """Write samples in the loader's directory layout."""
    images_dir = os.path.join(out_dir, "images")
    masks_dir = os.path.join(out_dir, "masks")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(masks_dir, exist_ok=True)
    for s in samples:
        img = np.clip((s.image + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
        write_ppm(os.path.join(images_dir, f"{s.id}.ppm"), img)
        write_pgm(os.path.join(masks_dir, f"{s.id}.pgm"),
                  (s.mask[:, :, 0] * 255).astype(np.uint8))


def split(samples: Sequence[Sample], spec: SplitSpec):
    """Deterministic shuffled partition into (train, val, test)."""
    spec.validate()
    n = len(samples)
    if n < 5:
        raise UsageError(f"split needs at least 5 samples, got {n}")
    n_val = int(spec.ratios[1] * n)
    n_test = int(spec.ratios[2] * n)
    n_train = n - n_val - n_test
    perm = Rng(spec.seed).permutation(n)
    ordered = [samples[i] for i in perm]
    return (ordered[:n_train],
            ordered[n_train:n_train + n_val],
            ordered[n_train + n_val:])


def _texture(rng: Rng, hw: tuple, waves: int, freq_scale: float) -> np.ndarray:
    """Smooth pseudo-texture: a sum of random 2-D sinusoids, roughly in [-1, 1]."""
    h, w = hw
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float32),
                         np.arange(w, dtype=np.float32), indexing="ij")
    out = np.zeros((h, w), dtype=np.float32)
    for _ in range(waves):
        fy = rng.uniform((), -freq_scale, freq_scale)
        fx = rng.uniform((), -freq_scale, freq_scale)
        phase = rng.uniform((), 0.0, 2.0 * np.pi)
        out += np.sin(yy * fy + xx * fx + phase) / waves
    return out


def synth_polyp(rng: Rng, hw: tuple, n: int) -> list[Sample]:
    """Generate n samples: 1-3 textured elliptical blobs on a textured field.

    The mask is the exact blob support. Everything derives from per-sample
    child streams of ``rng``, so sample i is independent of n.
    """
    h, w = hw
    if h % 32 or w % 32:
        raise ConfigError(f"synthetic extents {hw} must be multiples of 32")
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float32) + 0.5,
                         np.arange(w, dtype=np.float32) + 0.5, indexing="ij")
    samples = []
    for i in range(n):
        r = rng.child(i)
        mask = np.zeros((h, w), dtype=bool)
        for _ in range(r.randint(1, 4)):
            cy = r.uniform((), 0.3, 0.7) * h
            cx = r.uniform((), 0.3, 0.7) * w
            ry = r.uniform((), 0.09, 0.2) * min(h, w)
            rx = r.uniform((), 0.09, 0.2) * min(h, w)
            theta = r.uniform((), 0.0, np.pi)
            ct, st = np.cos(theta), np.sin(theta)
            u = (xx - cx) * ct + (yy - cy) * st
            v = -(xx - cx) * st + (yy - cy) * ct
            mask |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        base = _texture(r, hw, 3, 0.15)
        detail = _texture(r, hw, 2, 0.9)
        image = np.empty((h, w, 3), dtype=np.float32)
        tones = (-0.25, -0.15, -0.35)       # dull background per channel
        lifts = (0.75, 0.45, 0.35)          # reddish lift inside the blob
        for c in range(3):
            chan = tones[c] + 0.3 * base + 0.1 * detail
            chan = np.where(mask, chan + lifts[c], chan)
            image[:, :, c] = chan
        np.clip(image, -1.0, 1.0, out=image)
        samples.append(Sample(f"synth-{i:05d}", image,
                              mask.astype(np.float32)[:, :, None]))
    return samples
