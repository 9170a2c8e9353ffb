"""Building blocks of the segmentation network.

Four block types make up the model: the convolutional encoder block
(depthwise/pointwise token mixer), the attention encoder block, the
attention+pointwise fusion block used on decoder skips, and the multi-scale
upsampling block. All follow the same residual skeleton
``x' = x + Mixer(Norm(x));  x'' = x' + MLP(Norm(x'))`` and preserve spatial
extents unless their contract says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import Rng
from .tensor import (
    Parameter,
    Tensor,
    add,
    clip,
    conv2d,
    depthwise_conv2d,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax,
    transpose,
    transposed_conv2d,
    upsample,
)


def he_uniform(rng: Rng, shape: tuple, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(shape, -limit, limit)


def glorot_uniform(rng: Rng, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit)


class Module:
    """Base class collecting Parameters by dotted attribute path."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args):
        return self.forward(*args)


class Linear(Module):
    """Per-position linear map over the trailing channel axis.

    Glorot-uniform init: variance stays flat through the square pointwise
    maps the blocks are built from.
    """

    def __init__(self, cin: int, cout: int, rng: Rng, bias: bool = True):
        self.weight = Parameter("weight", glorot_uniform(rng, (cin, cout), cin, cout))
        if bias:
            self.bias = Parameter("bias", np.zeros(cout, dtype=np.float32))
        else:
            self.bias = None
        self.cin, self.cout = cin, cout

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        if x.shape[-1] != self.cin:
            raise DimensionError(f"linear: input {x.shape} does not match weight "
                                 f"{self.weight.shape}")
        flat = reshape(x, (int(np.prod(lead)) if lead else 1, self.cin))
        out = matmul(flat, self.weight)
        if self.bias is not None:
            out = add(out, self.bias)
        return reshape(out, (*lead, self.cout))


class LayerNorm(Module):
    """Channel-wise normalization per spatial position, eps 1e-6."""

    def __init__(self, channels: int):
        self.gamma = Parameter("gamma", np.ones(channels, dtype=np.float32))
        self.beta = Parameter("beta", np.zeros(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps=1e-6)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: Rng,
                 stride: int = 1, padding: str = "same"):
        self.kernel = Parameter(
            "kernel", he_uniform(rng, (kernel, kernel, cin, cout), kernel * kernel * cin))
        self.bias = Parameter("bias", np.zeros(cout, dtype=np.float32))
        self.stride, self.padding = stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return add(conv2d(x, self.kernel, self.stride, self.padding), self.bias)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, kernel: int, rng: Rng):
        self.kernel = Parameter(
            "kernel", he_uniform(rng, (kernel, kernel, channels), kernel * kernel))
        self.bias = Parameter("bias", np.zeros(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return add(depthwise_conv2d(x, self.kernel), self.bias)


class TransposedConv2d(Module):
    """Stride-2 transposed convolution: exact spatial doubling."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: Rng):
        self.kernel = Parameter(
            "kernel", he_uniform(rng, (kernel, kernel, cout, cin), kernel * kernel * cin))
        self.bias = Parameter("bias", np.zeros(cout, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return add(transposed_conv2d(x, self.kernel, stride=2), self.bias)


def mlp_hidden_width(channels: int, ratio: float) -> int:
    hidden = channels * ratio
    if abs(hidden - round(hidden)) > 1e-9 or round(hidden) < 1:
        raise ConfigError(f"mlp ratio {ratio} times {channels} channels "
                          f"is not a positive integer")
    return int(round(hidden))


class ChannelMLP(Module):
    """Two pointwise linear maps with GELU between (C -> rC -> C)."""

    def __init__(self, channels: int, ratio: float, rng: Rng):
        hidden = mlp_hidden_width(channels, ratio)
        self.expand = Linear(channels, hidden, rng)
        self.project = Linear(hidden, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.project(gelu(self.expand(x)))


@dataclass
class AttentionWeights:
    """Row-stochastic attention mask per head, retained for inspection."""

    mask: np.ndarray  # (heads, tokens, tokens)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over a flat token sequence."""

    def __init__(self, channels: int, heads: int, rng: Rng):
        if channels % heads != 0:
            raise ConfigError(f"channels {channels} not divisible by heads {heads}")
        # q/k/v carry no bias: a key bias cancels inside the row softmax
        self.q = Linear(channels, channels, rng, bias=False)
        self.k = Linear(channels, channels, rng, bias=False)
        self.v = Linear(channels, channels, rng, bias=False)
        self.out = Linear(channels, channels, rng)
        self.heads = heads
        self.head_dim = channels // heads
        self.last_attention: Optional[AttentionWeights] = None

    def _split(self, t: Tensor, n: int) -> Tensor:
        return transpose(reshape(t, (n, self.heads, self.head_dim)), (1, 0, 2))

    def forward(self, tokens: Tensor) -> Tensor:
        n, c = tokens.shape
        q = self._split(self.q(tokens), n)
        k = self._split(self.k(tokens), n)
        v = self._split(self.v(tokens), n)
        scale = 1.0 / math.sqrt(self.head_dim)
        scores = mul(matmul(q, transpose(k, (0, 2, 1))), scale)
        attn = softmax(scores, axis=-1)
        self.last_attention = AttentionWeights(attn.data.copy())
        ctx = matmul(attn, v)
        merged = reshape(transpose(ctx, (1, 0, 2)), (n, c))
        return self.out(merged)


class ConvFormerEncoderBlock(Module):
    """Residual block whose token mixer is a depthwise separable convolution.

    Mixer: pw2(dw(gelu(pw1(norm(x))))), then the channel-MLP residual.
    """

    def __init__(self, channels: int, mlp_ratio: float, rng: Rng, dw_kernel: int = 7):
        self.norm1 = LayerNorm(channels)
        self.pw1 = Linear(channels, channels, rng)
        self.dw = DepthwiseConv2d(channels, dw_kernel, rng)
        self.pw2 = Linear(channels, channels, rng)
        self.norm2 = LayerNorm(channels)
        self.mlp = ChannelMLP(channels, mlp_ratio, rng)
        self.channels = channels

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.channels:
            raise DimensionError(f"block expects {self.channels} channels, got {x.shape}")
        mixed = self.pw2(self.dw(gelu(self.pw1(self.norm1(x)))))
        x1 = add(x, mixed)
        return add(x1, self.mlp(self.norm2(x1)))


class TransformerEncoderBlock(Module):
    """Residual block whose token mixer is multi-head self-attention."""

    def __init__(self, channels: int, heads: int, mlp_ratio: float, rng: Rng):
        self.norm1 = LayerNorm(channels)
        self.attn = MultiHeadSelfAttention(channels, heads, rng)
        self.norm2 = LayerNorm(channels)
        self.mlp = ChannelMLP(channels, mlp_ratio, rng)
        self.channels = channels

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.channels:
            raise DimensionError(f"block expects {self.channels} channels, got {x.shape}")
        h, w, c = x.shape
        tokens = reshape(self.norm1(x), (h * w, c))
        mixed = reshape(self.attn(tokens), (h, w, c))
        x1 = add(x, mixed)
        return add(x1, self.mlp(self.norm2(x1)))


class ConvformerBlock(Module):
    """Fusion block: pointwise local path plus a self-attention path.

    The two paths are summed and a channel-MLP residual follows. The
    attention mask from the last call stays inspectable on ``attention_weights``.
    """

    def __init__(self, channels: int, heads: int, mlp_ratio: float, rng: Rng):
        self.pw = Linear(channels, channels, rng)
        self.attn = MultiHeadSelfAttention(channels, heads, rng)
        self.norm = LayerNorm(channels)
        self.mlp = ChannelMLP(channels, mlp_ratio, rng)
        self.channels = channels

    @property
    def attention_weights(self) -> Optional[AttentionWeights]:
        return self.attn.last_attention

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.channels:
            raise DimensionError(f"block expects {self.channels} channels, got {x.shape}")
        h, w, c = x.shape
        local = self.pw(x)
        attended = reshape(self.attn(reshape(x, (h * w, c))), (h, w, c))
        fused = add(local, attended)
        return add(fused, self.mlp(self.norm(fused)))


class MultiscaleUpsampleBlock(Module):
    """Quadruple the spatial extents, then a 3x3 convolution to Cout."""

    def __init__(self, cin: int, cout: int, rng: Rng):
        self.conv = Conv2d(cin, cout, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(upsample(x, 4))


def levelup_merge(target: Tensor, decoded: Tensor) -> Tensor:
    """Merge a decoder feature with a 4x-decoded one: gelu(target + decoded)."""
    if target.shape != decoded.shape:
        raise DimensionError(f"levelup_merge: shapes {target.shape} and "
                             f"{decoded.shape} differ")
    return gelu(add(target, decoded))


class Stem(Module):
    """7x7 stride-4 convolution plus norm: H x W x 3 -> H/4 x W/4 x C."""

    def __init__(self, cin: int, cout: int, rng: Rng):
        self.conv = Conv2d(cin, cout, 7, rng, stride=4)
        self.norm = LayerNorm(cout)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[0] % 4 or x.shape[1] % 4:
            raise ConfigError(f"stem input extents {x.shape[:2]} not divisible by 4")
        return self.norm(self.conv(x))


class Downsample(Module):
    """3x3 stride-2 convolution plus norm: exact spatial halving."""

    def __init__(self, cin: int, cout: int, rng: Rng):
        self.conv = Conv2d(cin, cout, 3, rng, stride=2)
        self.norm = LayerNorm(cout)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[0] % 2 or x.shape[1] % 2:
            raise ConfigError(f"downsample input extents {x.shape[:2]} not divisible by 2")
        return self.norm(self.conv(x))


class LevelFuse(Module):
    """Skip fusion: gelu(u + project(s)) with a pointwise projection of s."""

    def __init__(self, u_channels: int, s_channels: int, rng: Rng):
        self.project = Linear(s_channels, u_channels, rng)

    def forward(self, u: Tensor, s: Tensor) -> Tensor:
        if u.shape[:2] != s.shape[:2]:
            raise DimensionError(f"fuse: spatial extents {u.shape} and {s.shape} differ")
        return gelu(add(u, self.project(s)))


class SigmoidHead(Module):
    """Pointwise projection to one channel followed by sigmoid.

    Logits clamp to +/-15 so the float32 sigmoid stays strictly inside
    (0, 1); the true sigmoid gradient beyond that range is below 1e-6
    anyway.
    """

    LOGIT_LIMIT = 15.0

    def __init__(self, cin: int, rng: Rng):
        self.proj = Linear(cin, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return sigmoid(clip(self.proj(x), -self.LOGIT_LIMIT, self.LOGIT_LIMIT))
