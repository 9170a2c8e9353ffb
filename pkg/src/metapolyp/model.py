"""Assembly of the full segmentation network.

Encoder: stem, then four stages (convolutional token mixers in the first
two, self-attention in the last two), halving the extents between stages.
Decoder: six nodes D0..D5. Each step doubles the extents with a transposed
convolution; skip features from the three encoder stages fuse in at
matching resolution (the two earliest through a fusion attention block,
the deepest through a pointwise projection inside the fuse); and every
decoder node additionally sends a 4x-upsampled copy two steps ahead, merged
by gelu(target + decoded). A pointwise sigmoid head maps the final
full-resolution feature to a probability map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from .blocks import (
    ConvFormerEncoderBlock,
    ConvformerBlock,
    Downsample,
    LevelFuse,
    Module,
    MultiscaleUpsampleBlock,
    SigmoidHead,
    Stem,
    TransformerEncoderBlock,
    TransposedConv2d,
    levelup_merge,
    mlp_hidden_width,
)
from .errors import CheckpointError, ConfigError, DimensionError
from .rng import Rng
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters.

    ``heads`` must divide every stage channel count: the last two encoder
    stages and the skip fusion blocks on the first two stages all attend.
    """

    input_hw: tuple = (256, 256)
    stage_channels: tuple = (64, 128, 320, 512)
    blocks_per_stage: tuple = (2, 2, 2, 2)
    mlp_ratio: float = 4.0
    heads: int = 8
    decoder_channels: int = 64
    transpose_kernel: int = 2
    seed: int = 0

    def validate(self) -> None:
        h, w = self.input_hw
        if h <= 0 or w <= 0 or h % 32 or w % 32:
            raise ConfigError(f"input extents {self.input_hw} must be positive "
                              f"multiples of 32")
        if len(self.stage_channels) != 4 or any(c <= 0 for c in self.stage_channels):
            raise ConfigError(f"stage_channels must be 4 positive ints, "
                              f"got {self.stage_channels}")
        if len(self.blocks_per_stage) != 4 or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError(f"blocks_per_stage must be 4 ints >= 1, "
                              f"got {self.blocks_per_stage}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        for c in self.stage_channels:
            if c % self.heads:
                raise ConfigError(f"stage channels {self.stage_channels} must all be "
                                  f"divisible by heads={self.heads}")
            mlp_hidden_width(c, self.mlp_ratio)
        if self.decoder_channels <= 0:
            raise ConfigError(f"decoder_channels must be positive, "
                              f"got {self.decoder_channels}")
        if self.transpose_kernel not in (2, 4):
            raise ConfigError(f"transpose_kernel must be 2 or 4, "
                              f"got {self.transpose_kernel}")

    @classmethod
    def tiny(cls, input_hw=(32, 32), seed: int = 0) -> "ModelConfig":
        """Desk-scale configuration used by tests and the gradient suite."""
        return cls(input_hw=input_hw, stage_channels=(8, 16, 32, 64),
                   blocks_per_stage=(1, 1, 1, 1), mlp_ratio=2.0, heads=2,
                   decoder_channels=8, seed=seed)


@dataclass
class ModelOutput:
    """Probability map plus every intermediate feature, for inspection."""

    prob: Tensor                      # H x W x 1, values in (0, 1)
    encoder_features: tuple           # E1..E4
    decoder_features: tuple           # D0..D5


class MetaPolyp(Module):
    """The full encoder-decoder, owning the parameter registry."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = Rng(config.seed)
        c1, c2, c3, c4 = config.stage_channels
        b1, b2, b3, b4 = config.blocks_per_stage
        r, heads, tk = config.mlp_ratio, config.heads, config.transpose_kernel
        dc = config.decoder_channels

        self.stem = Stem(3, c1, rng)
        self.stage1 = [ConvFormerEncoderBlock(c1, r, rng) for _ in range(b1)]
        self.down12 = Downsample(c1, c2, rng)
        self.stage2 = [ConvFormerEncoderBlock(c2, r, rng) for _ in range(b2)]
        self.down23 = Downsample(c2, c3, rng)
        self.stage3 = [TransformerEncoderBlock(c3, heads, r, rng) for _ in range(b3)]
        self.down34 = Downsample(c3, c4, rng)
        self.stage4 = [TransformerEncoderBlock(c4, heads, r, rng) for _ in range(b4)]

        self.up01 = TransposedConv2d(c4, c3, tk, rng)
        self.fuse1 = LevelFuse(c3, c3, rng)
        self.up12 = TransposedConv2d(c3, c2, tk, rng)
        self.skip2 = ConvformerBlock(c2, heads, r, rng)
        self.fuse2 = LevelFuse(c2, c2, rng)
        self.ms02 = MultiscaleUpsampleBlock(c4, c2, rng)
        self.up23 = TransposedConv2d(c2, c1, tk, rng)
        self.skip1 = ConvformerBlock(c1, heads, r, rng)
        self.fuse3 = LevelFuse(c1, c1, rng)
        self.ms13 = MultiscaleUpsampleBlock(c3, c1, rng)
        self.up34 = TransposedConv2d(c1, dc, tk, rng)
        self.ms24 = MultiscaleUpsampleBlock(c2, dc, rng)
        self.up45 = TransposedConv2d(dc, dc, tk, rng)
        self.ms35 = MultiscaleUpsampleBlock(c1, dc, rng)
        self.head = SigmoidHead(dc, rng)

        self._finalize_names()

    def _finalize_names(self) -> None:
        seen = set()
        for path, p in self.named_parameters():
            if path in seen:
                raise ConfigError(f"duplicate parameter path {path}")
            seen.add(path)
            p.name = path

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x: Tensor) -> ModelOutput:
        h, w = self.config.input_hw
        if x.shape != (h, w, 3):
            raise DimensionError(f"forward: input shape {x.shape} does not match "
                                 f"configured {(h, w, 3)}")
        e = self.stem(x)
        for blk in self.stage1:
            e = blk(e)
        e1 = e
        e = self.down12(e1)
        for blk in self.stage2:
            e = blk(e)
        e2 = e
        e = self.down23(e2)
        for blk in self.stage3:
            e = blk(e)
        e3 = e
        e = self.down34(e3)
        for blk in self.stage4:
            e = blk(e)
        e4 = e

        d0 = e4
        d1 = self.fuse1(self.up01(d0), e3)
        d2 = levelup_merge(self.fuse2(self.up12(d1), self.skip2(e2)), self.ms02(d0))
        d3 = levelup_merge(self.fuse3(self.up23(d2), self.skip1(e1)), self.ms13(d1))
        d4 = levelup_merge(self.up34(d3), self.ms24(d2))
        d5 = levelup_merge(self.up45(d4), self.ms35(d3))
        prob = self.head(d5)
        return ModelOutput(prob, (e1, e2, e3, e4), (d0, d1, d2, d3, d4, d5))


def build(config: ModelConfig) -> MetaPolyp:
    """Build a model with deterministic initialization from config.seed."""
    return MetaPolyp(config)


_CONFIG_INT_FIELDS = ("heads", "decoder_channels", "transpose_kernel")


def config_to_arrays(config: ModelConfig) -> dict:
    arrays = {
        "config/input_hw": np.array(config.input_hw, dtype=np.float32),
        "config/stage_channels": np.array(config.stage_channels, dtype=np.float32),
        "config/blocks_per_stage": np.array(config.blocks_per_stage, dtype=np.float32),
        "config/mlp_ratio": np.array([config.mlp_ratio], dtype=np.float32),
        "config/seed": ckpt.u64_to_f32pair(config.seed),
    }
    for f in _CONFIG_INT_FIELDS:
        arrays[f"config/{f}"] = np.array([getattr(config, f)], dtype=np.float32)
    return arrays


def config_from_arrays(arrays: dict) -> ModelConfig:
    try:
        kwargs = {
            "input_hw": tuple(int(v) for v in arrays["config/input_hw"]),
            "stage_channels": tuple(int(v) for v in arrays["config/stage_channels"]),
            "blocks_per_stage": tuple(int(v) for v in arrays["config/blocks_per_stage"]),
            "mlp_ratio": float(arrays["config/mlp_ratio"][0]),
            "seed": ckpt.f32pair_to_u64(arrays["config/seed"]),
        }
        for f in _CONFIG_INT_FIELDS:
            kwargs[f] = int(arrays[f"config/{f}"][0])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing config entry {exc}") from None
    return ModelConfig(**kwargs)


def save_model(model: MetaPolyp, path: str) -> None:
    """Write config plus all parameters; round trips are bit-exact."""
    arrays = config_to_arrays(model.config)
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.data
    ckpt.save_arrays(path, arrays)


def load_params(model: MetaPolyp, arrays: dict) -> None:
    for name, p in model.named_parameters():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        stored = arrays[key]
        if stored.shape != p.data.shape:
            raise CheckpointError(f"parameter {name!r} has shape {stored.shape} "
                                  f"in checkpoint, expected {p.data.shape}")
        p.data = np.ascontiguousarray(stored.astype(np.float32))


def load_model(path: str) -> MetaPolyp:
    """Rebuild the model stored at ``path`` (train-state files also work)."""
    arrays = ckpt.load_arrays(path)
    model = MetaPolyp(config_from_arrays(arrays))
    load_params(model, arrays)
    return model
