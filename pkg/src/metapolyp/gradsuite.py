"""Finite-difference suite over every block type and the full model.

Each check wraps the block input as a parameter so gradients w.r.t. both
inputs and weights are verified. Block outputs are reduced through a fixed
random weighting so no gradient component hides in a symmetric sum; the
full model is checked through the training loss itself on sampled
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import (
    ConvFormerEncoderBlock,
    ConvformerBlock,
    Downsample,
    MultiscaleUpsampleBlock,
    Stem,
    TransformerEncoderBlock,
    levelup_merge,
)
from .gradcheck import grad_check
from .metrics import jaccard_loss
from .model import MetaPolyp, ModelConfig
from .rng import Rng
from .tensor import Parameter, Tensor, mul, tensor_sum


@dataclass
class SuiteEntry:
    name: str
    rel_err: float
    offending: list  # parameter names at or above tolerance

    @property
    def passed(self) -> bool:
        return not self.offending


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return tensor_sum(mul(out, Tensor(weights)))


def _entry(name, report, tol) -> SuiteEntry:
    offending = [e.name for e in report.entries if e.rel_err >= tol]
    return SuiteEntry(name, report.max_rel_err, offending)


def _check_block(block, x_data: np.ndarray, rng: Rng, tol: float, name: str) -> SuiteEntry:
    xp = Parameter("input", x_data)
    first = block(xp)
    weights = rng.normal(first.shape)

    def f():
        return _weighted_sum(block(xp), weights)

    return _entry(name, grad_check(f, [xp] + block.parameters(), tol=tol), tol)


def run_block_suite(tol: float = 1e-2, seed: int = 1) -> list[SuiteEntry]:
    """Gradient-check every block type plus the loss and the full model."""
    rng = Rng(seed)
    entries = []

    block = ConvFormerEncoderBlock(4, 2.0, rng.child(1))
    entries.append(_check_block(block, rng.normal((6, 6, 4)), rng, tol,
                                "convformer_encoder_block"))

    block = TransformerEncoderBlock(4, 2, 2.0, rng.child(2))
    entries.append(_check_block(block, rng.normal((3, 3, 4)), rng, tol,
                                "transformer_encoder_block"))

    block = ConvformerBlock(4, 2, 2.0, rng.child(3))
    entries.append(_check_block(block, rng.normal((3, 3, 4)), rng, tol,
                                "convformer_block"))

    block = MultiscaleUpsampleBlock(3, 2, rng.child(4))
    entries.append(_check_block(block, rng.normal((3, 3, 3)), rng, tol,
                                "multiscale_upsample_block"))

    block = Stem(3, 4, rng.child(5))
    entries.append(_check_block(block, rng.normal((8, 8, 3)), rng, tol, "stem"))

    block = Downsample(4, 6, rng.child(6))
    entries.append(_check_block(block, rng.normal((6, 6, 4)), rng, tol, "downsample"))

    a = Parameter("target", rng.normal((4, 4, 3)))
    b = Parameter("decoded", rng.normal((4, 4, 3)))
    weights = rng.normal((4, 4, 3))
    report = grad_check(lambda: _weighted_sum(levelup_merge(a, b), weights),
                        [a, b], tol=tol)
    entries.append(_entry("levelup_merge", report, tol))

    pred = Parameter("pred", rng.uniform((5, 5, 1), 0.2, 0.8))
    truth = (rng.uniform((5, 5, 1)) > 0.5).astype(np.float32)
    report = grad_check(lambda: jaccard_loss(pred, truth), [pred], tol=tol)
    entries.append(_entry("jaccard_loss", report, tol))

    model = MetaPolyp(ModelConfig.tiny((32, 32), seed=seed))
    image = Parameter("image", rng.uniform((32, 32, 3), -0.9, 0.9))
    mask = (rng.uniform((32, 32, 1)) > 0.5).astype(np.float32)

    def full():
        return jaccard_loss(model.forward(image).prob, mask)

    report = grad_check(full, [image] + model.parameters(), tol=tol,
                        aligned=True, seed=seed)
    entries.append(_entry("full_model", report, tol))
    return entries
