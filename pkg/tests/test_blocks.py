"""Block contracts: shape preservation, zero-branch identities, row-stochastic
attention masks, and gradient checks on tiny shapes."""

import numpy as np
import pytest

from metapolyp.blocks import (
    ConvFormerEncoderBlock,
    ConvformerBlock,
    Downsample,
    LevelFuse,
    MultiHeadSelfAttention,
    MultiscaleUpsampleBlock,
    SigmoidHead,
    Stem,
    TransformerEncoderBlock,
    levelup_merge,
)
from metapolyp.errors import ConfigError, DimensionError
from metapolyp.gradcheck import grad_check
from metapolyp.rng import Rng
from metapolyp.tensor import Parameter, Tensor, gelu, mul, tensor_sum

BLOCK_TOL = 1e-2


def zero_params(module, names=None):
    for path, p in module.named_parameters():
        if names is None or any(n in path for n in names):
            p.data = np.zeros_like(p.data)


def block_gradcheck(block, x_data, seed=0):
    rng = Rng(seed)
    xp = Parameter("input", x_data)
    weights = rng.normal(block(xp).shape)
    report = grad_check(lambda: tensor_sum(mul(block(xp), Tensor(weights))),
                        [xp] + block.parameters(), tol=BLOCK_TOL)
    assert report.passed, report.format()


class TestConvFormerEncoderBlock:
    def test_zeroed_branches_give_identity(self):
        block = ConvFormerEncoderBlock(4, 2.0, Rng(0))
        zero_params(block, ["pw1", "pw2", "dw", "mlp"])
        x = Rng(1).normal((5, 5, 4))
        out = block(Tensor(x))
        assert np.allclose(out.data, x, atol=1e-6)

    @pytest.mark.parametrize("hw", [(3, 3), (5, 7), (8, 4)])
    def test_shape_preserved(self, hw):
        block = ConvFormerEncoderBlock(6, 2.0, Rng(2))
        x = Tensor(Rng(3).normal((*hw, 6)))
        assert block(x).shape == (*hw, 6)

    def test_zero_mixer_leaves_mlp_residual_only(self):
        block = ConvFormerEncoderBlock(4, 2.0, Rng(0))
        zero_params(block, ["pw1", "pw2", "dw"])
        x = Rng(1).normal((4, 4, 4))
        from metapolyp.tensor import add
        xt = Tensor(x)
        ref = add(xt, block.mlp(block.norm2(xt)))
        assert np.allclose(block(Tensor(x)).data, ref.data, atol=1e-6)

    def test_zero_mlp_leaves_mixer_residual_only(self):
        block = ConvFormerEncoderBlock(4, 2.0, Rng(0))
        zero_params(block, ["mlp"])
        x = Rng(1).normal((4, 4, 4))
        from metapolyp.tensor import add, gelu
        xt = Tensor(x)
        mixed = block.pw2(block.dw(gelu(block.pw1(block.norm1(xt)))))
        ref = add(xt, mixed)
        assert np.allclose(block(Tensor(x)).data, ref.data, atol=1e-6)

    def test_channel_mismatch(self):
        block = ConvFormerEncoderBlock(4, 2.0, Rng(4))
        with pytest.raises(DimensionError):
            block(Tensor(np.zeros((4, 4, 5))))

    def test_gradient(self):
        block = ConvFormerEncoderBlock(4, 2.0, Rng(5))
        block_gradcheck(block, Rng(6).normal((6, 6, 4)))


class TestTransformerEncoderBlock:
    def test_single_position_attention_mask_is_one(self):
        block = TransformerEncoderBlock(4, 2, 2.0, Rng(7))
        block(Tensor(Rng(8).normal((1, 1, 4))))
        mask = block.attn.last_attention.mask
        assert mask.shape == (2, 1, 1)
        assert np.allclose(mask, 1.0)

    def test_zero_value_and_projection_leaves_mlp_residual(self):
        block = TransformerEncoderBlock(4, 2, 2.0, Rng(9))
        zero_params(block, ["attn.v", "attn.out"])
        x = Rng(10).normal((3, 3, 4))
        out = block(Tensor(x))
        # attention contributes nothing: out = x + mlp(norm2(x))
        ref_block = TransformerEncoderBlock(4, 2, 2.0, Rng(9))
        from metapolyp.tensor import add
        xt = Tensor(x)
        ref = add(xt, ref_block.mlp(ref_block.norm2(xt)))
        assert np.allclose(out.data, ref.data, atol=1e-6)

    def test_attention_rows_sum_to_one(self):
        block = TransformerEncoderBlock(8, 4, 2.0, Rng(11))
        block(Tensor(Rng(12).normal((4, 4, 8))))
        mask = block.attn.last_attention.mask
        assert mask.shape == (4, 16, 16)
        assert np.all(mask >= 0)
        assert np.allclose(mask.sum(axis=-1), 1.0, atol=1e-6)

    def test_heads_must_divide_channels(self):
        with pytest.raises(ConfigError):
            TransformerEncoderBlock(6, 4, 2.0, Rng(13))

    def test_gradient(self):
        block = TransformerEncoderBlock(4, 2, 2.0, Rng(14))
        block_gradcheck(block, Rng(15).normal((3, 3, 4)))


class TestConvformerBlock:
    def test_zero_attention_and_identity_pointwise(self):
        block = ConvformerBlock(4, 2, 2.0, Rng(16))
        zero_params(block, ["attn.v", "attn.out"])
        block.pw.weight.data = np.eye(4, dtype=np.float32)
        block.pw.bias.data = np.zeros(4, dtype=np.float32)
        x = Rng(17).normal((3, 3, 4))
        out = block(Tensor(x))
        from metapolyp.tensor import add
        xt = Tensor(x)
        ref = add(xt, block.mlp(block.norm(xt)))
        assert np.allclose(out.data, ref.data, atol=1e-6)

    def test_retained_mask_is_row_stochastic(self):
        block = ConvformerBlock(6, 3, 2.0, Rng(18))
        block(Tensor(Rng(19).normal((4, 3, 6))))
        mask = block.attention_weights.mask
        assert mask.shape == (3, 12, 12)
        assert np.allclose(mask.sum(axis=-1), 1.0, atol=1e-6)

    def test_shape_preserved(self):
        block = ConvformerBlock(4, 2, 2.0, Rng(20))
        assert block(Tensor(Rng(21).normal((5, 6, 4)))).shape == (5, 6, 4)

    def test_gradient(self):
        block = ConvformerBlock(4, 2, 2.0, Rng(22))
        block_gradcheck(block, Rng(23).normal((3, 3, 4)))


class TestMultiscaleUpsampleBlock:
    def test_constant_input_constant_output_with_identity_conv(self):
        block = MultiscaleUpsampleBlock(2, 2, Rng(24))
        # make the 3x3 conv an exact channel identity
        k = np.zeros((3, 3, 2, 2), np.float32)
        k[1, 1] = np.eye(2)
        block.conv.kernel.data = k
        block.conv.bias.data = np.zeros(2, np.float32)
        x = Tensor(np.full((3, 3, 2), 0.75, np.float32))
        out = block(x)
        assert out.shape == (12, 12, 2)
        # interior is exactly constant; borders see zero padding of the conv
        assert np.allclose(out.data[1:-1, 1:-1], 0.75, atol=1e-6)

    @pytest.mark.parametrize("hw", [(2, 3), (4, 4)])
    def test_output_is_4x(self, hw):
        block = MultiscaleUpsampleBlock(3, 5, Rng(25))
        out = block(Tensor(Rng(26).normal((*hw, 3))))
        assert out.shape == (hw[0] * 4, hw[1] * 4, 5)

    def test_gradient(self):
        block = MultiscaleUpsampleBlock(3, 2, Rng(27))
        block_gradcheck(block, Rng(28).normal((3, 3, 3)))


class TestLevelupMerge:
    def test_zero_decoded_is_gelu_of_target(self):
        x = Rng(29).normal((4, 4, 3))
        out = levelup_merge(Tensor(x), Tensor(np.zeros_like(x)))
        assert np.allclose(out.data, gelu(Tensor(x)).data, atol=1e-7)

    def test_symmetry(self):
        a, b = Rng(30).normal((4, 4, 2)), Rng(31).normal((4, 4, 2))
        out1 = levelup_merge(Tensor(a), Tensor(b))
        out2 = levelup_merge(Tensor(b), Tensor(a))
        assert np.array_equal(out1.data, out2.data)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            levelup_merge(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((2, 2, 2))))

    def test_gradient(self):
        a = Parameter("target", Rng(32).normal((4, 4, 3)))
        b = Parameter("decoded", Rng(33).normal((4, 4, 3)))
        w = Tensor(Rng(34).normal((4, 4, 3)))
        report = grad_check(lambda: tensor_sum(mul(levelup_merge(a, b), w)),
                            [a, b], tol=1e-3)
        assert report.passed, report.format()


class TestStemAndDownsample:
    def test_stem_quarters_extents(self):
        stem = Stem(3, 8, Rng(35))
        out = stem(Tensor(Rng(36).normal((256, 256, 3)) * 0.5))
        assert out.shape == (64, 64, 8)

    def test_downsample_halves_extents(self):
        down = Downsample(8, 16, Rng(37))
        out = down(Tensor(Rng(38).normal((64, 64, 8))))
        assert out.shape == (32, 32, 16)

    def test_indivisible_extents_rejected(self):
        with pytest.raises(ConfigError):
            Stem(3, 4, Rng(39))(Tensor(np.zeros((10, 10, 3))))
        with pytest.raises(ConfigError):
            Downsample(4, 8, Rng(40))(Tensor(np.zeros((5, 6, 4))))

    def test_gradients(self):
        stem = Stem(3, 4, Rng(41))
        block_gradcheck(stem, Rng(42).normal((8, 8, 3)))
        down = Downsample(4, 6, Rng(43))
        block_gradcheck(down, Rng(44).normal((6, 6, 4)))


class TestAttentionModule:
    def test_single_token_output_is_projected_value(self):
        attn = MultiHeadSelfAttention(4, 2, Rng(45))
        x = Rng(46).normal((1, 4))
        out = attn(Tensor(x))
        # with one token the attention mask is [1.0]: out = Wo(Wv x) + bo
        v = x @ attn.v.weight.data
        ref = v @ attn.out.weight.data + attn.out.bias.data
        assert np.allclose(out.data, ref, atol=1e-5)

    def test_qkv_have_no_bias(self):
        attn = MultiHeadSelfAttention(4, 2, Rng(47))
        names = [n for n, _ in attn.named_parameters()]
        assert "q.weight" in names and "q.bias" not in names
        assert "out.bias" in names


class TestFuseAndHead:
    def test_fuse_projects_then_merges(self):
        fuse = LevelFuse(4, 2, Rng(48))
        u = Rng(49).normal((3, 3, 4))
        s = Rng(50).normal((3, 3, 2))
        out = fuse(Tensor(u), Tensor(s))
        proj = s.reshape(-1, 2) @ fuse.project.weight.data + fuse.project.bias.data
        ref = gelu(Tensor(u + proj.reshape(3, 3, 4))).data
        assert np.allclose(out.data, ref, atol=1e-6)

    def test_head_probabilities_strictly_inside_unit_interval(self):
        head = SigmoidHead(4, Rng(51))
        x = Tensor(Rng(52).normal((8, 8, 4)) * 100.0)  # force extreme logits
        out = head(x)
        assert out.data.min() > 0.0
        assert out.data.max() < 1.0
