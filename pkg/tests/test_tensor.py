"""Tensor engine: forward semantics against hand/reference oracles, and
analytic gradients against central finite differences."""

import numpy as np
import pytest

from metapolyp.errors import ConfigError, DimensionError, NumericalError, UsageError
from metapolyp.gradcheck import grad_check
from metapolyp.rng import Rng
from metapolyp.tensor import (
    Parameter,
    Tape,
    Tensor,
    add,
    backward,
    clip,
    conv2d,
    depthwise_conv2d,
    div,
    gelu,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    tensor_mean,
    tensor_sum,
    transpose,
    transposed_conv2d,
    upsample,
)

GRAD_TOL = 1e-3


def ref_correlate(x, k, stride, padding):
    """Independent nested-loop strided cross-correlation in float64.

    Accepts any kernel extents; 'same' pads with zeros so the output
    spatial extent is ceil(extent / stride).
    """
    x = x.astype(np.float64)
    k = k.astype(np.float64)
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    if padding == "same":
        oh, ow = -(-h // stride), -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
        pt, pl = ph // 2, pw // 2
    else:
        oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
        pt = pl = 0
    out = np.zeros((oh, ow, cout))
    for r in range(oh):
        for c in range(ow):
            for i in range(kh):
                for j in range(kw):
                    y, z = r * stride + i - pt, c * stride + j - pl
                    if 0 <= y < h and 0 <= z < w:
                        out[r, c] += x[y, z] @ k[i, j]
    return out


def check_grads(f, params, tol=GRAD_TOL):
    report = grad_check(f, params, tol=tol)
    assert report.passed, report.format()


class TestMatmul:
    def test_identity(self):
        b = np.arange(9, dtype=np.float32).reshape(3, 3)
        out = matmul(Tensor(np.eye(3)), Tensor(b))
        assert np.array_equal(out.data, b)

    def test_hand_case(self):
        out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
        assert out.data.tolist() == [[3.0], [7.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient(self):
        rng = Rng(1)
        a = Parameter("a", rng.normal((4, 3)))
        b = Parameter("b", rng.normal((3, 5)))
        check_grads(lambda: tensor_sum(matmul(a, b)), [a, b])

    def test_batched_gradient(self):
        rng = Rng(2)
        a = Parameter("a", rng.normal((2, 3, 4)))
        b = Parameter("b", rng.normal((2, 4, 3)))
        w = Tensor(rng.normal((2, 3, 3)))
        check_grads(lambda: tensor_sum(mul(matmul(a, b), w)), [a, b])


class TestConv2d:
    def test_pointwise_channel_identity(self):
        rng = Rng(3)
        x = rng.normal((4, 5, 3))
        k = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
        out = conv2d(Tensor(x), Tensor(k))
        assert np.allclose(out.data, x, atol=1e-6)

    def test_all_ones_3x3(self):
        x = Tensor(np.ones((3, 3, 1), np.float32))
        k = Tensor(np.ones((3, 3, 1, 1), np.float32))
        out = conv2d(x, k).data[:, :, 0]
        assert out[1, 1] == 9.0
        assert all(out[r, c] == 4.0 for r, c in ((0, 0), (0, 2), (2, 0), (2, 2)))
        assert all(out[r, c] == 6.0 for r, c in ((0, 1), (1, 0), (1, 2), (2, 1)))

    @pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (1, "valid")])
    def test_matches_reference(self, stride, padding):
        rng = Rng(4)
        x = rng.normal((6, 5, 2))
        k = rng.normal((3, 3, 2, 4))
        out = conv2d(Tensor(x), Tensor(k), stride, padding)
        ref = ref_correlate(x, k, stride, padding)
        assert out.data.shape == ref.shape
        assert np.allclose(out.data, ref, rtol=1e-5, atol=1e-5)

    def test_same_output_extent_is_ceil(self):
        x = Tensor(Rng(5).normal((5, 7, 1)))
        k = Tensor(Rng(6).normal((3, 3, 1, 2)))
        assert conv2d(x, k, stride=2).shape == (3, 4, 2)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            conv2d(Tensor(np.zeros((4, 4, 1))), Tensor(np.zeros((2, 2, 1, 1))))

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradient(self, stride):
        rng = Rng(7)
        x = Parameter("x", rng.normal((5, 5, 2)))
        k = Parameter("k", rng.normal((3, 3, 2, 3)))
        w = Tensor(rng.normal(conv2d(x, k, stride).shape))
        check_grads(lambda: tensor_sum(mul(conv2d(x, k, stride), w)), [x, k])


class TestDepthwiseConv2d:
    def test_delta_kernel_identity(self):
        rng = Rng(8)
        x = rng.normal((5, 4, 3))
        k = np.zeros((3, 3, 3), np.float32)
        k[1, 1, :] = 1.0
        out = depthwise_conv2d(Tensor(x), Tensor(k))
        assert np.allclose(out.data, x, atol=1e-6)

    def test_per_channel_independence(self):
        x = np.ones((4, 4, 2), np.float32)
        k = np.zeros((1, 1, 2), np.float32)
        k[0, 0] = (2.0, 5.0)
        out = depthwise_conv2d(Tensor(x), Tensor(k))
        assert np.allclose(out.data[:, :, 0], 2.0)
        assert np.allclose(out.data[:, :, 1], 5.0)

    def test_matches_per_channel_reference(self):
        rng = Rng(9)
        x = rng.normal((5, 5, 3))
        k = rng.normal((3, 3, 3))
        out = depthwise_conv2d(Tensor(x), Tensor(k))
        for c in range(3):
            ref = ref_correlate(x[:, :, c:c + 1], k[:, :, c].reshape(3, 3, 1, 1),
                                1, "same")
            assert np.allclose(out.data[:, :, c], ref[:, :, 0], rtol=1e-5, atol=1e-5)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            depthwise_conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3))))

    def test_gradient(self):
        rng = Rng(10)
        x = Parameter("x", rng.normal((5, 5, 2)))
        k = Parameter("k", rng.normal((3, 3, 2)))
        w = Tensor(rng.normal((5, 5, 2)))
        check_grads(lambda: tensor_sum(mul(depthwise_conv2d(x, k), w)), [x, k])


class TestTransposedConv2d:
    def test_ones_kernel_spreads_value(self):
        x = Tensor(np.full((1, 1, 1), 3.0, np.float32))
        k = Tensor(np.ones((2, 2, 1, 1), np.float32))
        out = transposed_conv2d(x, k)
        assert out.shape == (2, 2, 1)
        assert np.all(out.data == 3.0)

    @pytest.mark.parametrize("ksize", [2, 4])
    def test_doubles_extents(self, ksize):
        rng = Rng(11)
        x = Tensor(rng.normal((3, 5, 2)))
        k = Tensor(rng.normal((ksize, ksize, 4, 2)))
        assert transposed_conv2d(x, k).shape == (6, 10, 4)

    @pytest.mark.parametrize("ksize", [2, 4])
    def test_adjoint_identity(self, ksize):
        # <conv_s2(z, k), x> == <z, tconv(x, k)> with the same kernel array
        rng = Rng(12)
        x = rng.normal((3, 4, 2))        # conv output side
        z = rng.normal((6, 8, 5))        # conv input side
        k = rng.normal((ksize, ksize, 5, 2))
        lhs = float(np.sum(ref_correlate(z, k, 2, "same") * x.astype(np.float64)))
        tx = transposed_conv2d(Tensor(x), Tensor(k)).data
        rhs = float(np.sum(z.astype(np.float64) * tx))
        assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) < 1e-5

    def test_kernel_size_contract(self):
        with pytest.raises(ConfigError):
            transposed_conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((3, 3, 1, 1))))
        with pytest.raises(ConfigError):
            transposed_conv2d(Tensor(np.zeros((2, 2, 1))),
                              Tensor(np.zeros((2, 2, 1, 1))), stride=3)

    def test_gradient(self):
        rng = Rng(13)
        x = Parameter("x", rng.normal((3, 3, 2)))
        k = Parameter("k", rng.normal((2, 2, 3, 2)))
        w = Tensor(rng.normal((6, 6, 3)))
        check_grads(lambda: tensor_sum(mul(transposed_conv2d(x, k), w)), [x, k])


class TestUpsample:
    def test_constant_stays_constant(self):
        x = Tensor(np.full((3, 2, 2), 1.5, np.float32))
        for factor in (2, 4):
            out = upsample(x, factor)
            assert out.shape == (3 * factor, 2 * factor, 2)
            assert np.allclose(out.data, 1.5, atol=1e-6)

    def test_half_pixel_hand_values(self):
        x = Tensor(np.array([[0.0, 1.0]], np.float32)[:, :, None])
        out = upsample(x, 2)
        assert np.allclose(out.data[0, :, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-6)

    def test_factor_validation(self):
        with pytest.raises(ConfigError):
            upsample(Tensor(np.zeros((2, 2, 1))), 3)

    def test_gradient(self):
        rng = Rng(14)
        x = Parameter("x", rng.normal((3, 4, 2)))
        w = Tensor(rng.normal((6, 8, 2)))
        check_grads(lambda: tensor_sum(mul(upsample(x, 2), w)), [x])


class TestLayerNorm:
    def test_constant_channels_give_zero(self):
        x = Tensor(np.full((2, 2, 4), 7.0, np.float32))
        gamma = Tensor(np.ones(4, np.float32))
        beta = Tensor(np.zeros(4, np.float32))
        out = layer_norm(x, gamma, beta)
        assert np.allclose(out.data, 0.0, atol=1e-3)

    def test_two_channel_hand_case(self):
        x = Tensor(np.array([[[1.0, 3.0]]], np.float32))
        out = layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)))
        assert np.allclose(out.data[0, 0], [-1.0, 1.0], atol=1e-4)

    def test_gamma_shape_mismatch(self):
        with pytest.raises(DimensionError):
            layer_norm(Tensor(np.zeros((2, 2, 3))), Tensor(np.ones(4)),
                       Tensor(np.zeros(4)))

    def test_gradient(self):
        rng = Rng(15)
        x = Parameter("x", rng.normal((3, 3, 4)))
        gamma = Parameter("g", 1.0 + 0.1 * rng.normal((4,)))
        beta = Parameter("b", 0.1 * rng.normal((4,)))
        w = Tensor(rng.normal((3, 3, 4)))
        check_grads(lambda: tensor_sum(mul(layer_norm(x, gamma, beta), w)),
                    [x, gamma, beta])


class TestActivations:
    def test_softmax_single_element(self):
        out = softmax(Tensor(np.array([3.7], np.float32)), axis=0)
        assert out.data.tolist() == [1.0]

    def test_softmax_symmetry(self):
        out = softmax(Tensor(np.array([0.0, 0.0], np.float32)), axis=0)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_softmax_rows_stochastic(self):
        rng = Rng(16)
        x = Tensor(rng.normal((5, 7)) * 3)
        out = softmax(x, axis=-1).data
        assert np.all(out >= 0)
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    def test_softmax_large_values_stable(self):
        out = softmax(Tensor(np.array([1000.0, 1000.0], np.float32)), axis=0)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(np.zeros(1))).data[0] == 0.5

    def test_sigmoid_extreme_negative_is_nonnegative_and_finite(self):
        out = sigmoid(Tensor(np.array([-100.0, 100.0], np.float32)))
        assert np.isfinite(out.data).all()
        assert out.data[0] >= 0.0 and out.data[1] <= 1.0

    def test_gelu_reference_value(self):
        # tanh approximation evaluated in float64 independently
        x = 1.0
        ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
        assert abs(float(gelu(Tensor([x])).data[0]) - ref) < 1e-6

    @pytest.mark.parametrize("op", [gelu, sigmoid, lambda t: softmax(t, axis=-1)])
    def test_smooth_activation_gradients(self, op):
        rng = Rng(17)
        x = Parameter("x", rng.normal((4, 5)))
        w = Tensor(rng.normal((4, 5)))
        check_grads(lambda: tensor_sum(mul(op(x), w)), [x])

    def test_relu_gradient_away_from_kink(self):
        rng = Rng(18)
        base = rng.normal((4, 4))
        base = np.where(np.abs(base) < 0.05, 0.5, base)  # keep clear of the kink
        x = Parameter("x", base)
        w = Tensor(rng.normal((4, 4)))
        check_grads(lambda: tensor_sum(mul(relu(x), w)), [x])

    def test_clip_gradient_masks_outside(self):
        x = Parameter("x", np.array([-2.0, 0.3, 2.0], np.float32))
        with Tape():
            loss = tensor_sum(clip(x, -1.0, 1.0))
        backward(loss)
        assert x.grad.tolist() == [0.0, 1.0, 0.0]


class TestElementwiseAndReductions:
    def test_add_broadcast_bias(self):
        x = Tensor(np.zeros((2, 2, 3), np.float32))
        b = Tensor(np.array([1.0, 2.0, 3.0], np.float32))
        out = add(x, b)
        assert np.allclose(out.data[1, 1], [1, 2, 3])

    def test_add_shape_error(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_mean_and_sum_axis(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert tensor_sum(x).item() == 15.0
        assert tensor_mean(x).item() == 2.5
        assert tensor_sum(x, axis=0).data.tolist() == [3.0, 5.0, 7.0]

    def test_arith_gradients(self):
        rng = Rng(19)
        a = Parameter("a", rng.normal((2, 2)))
        b = Parameter("b", rng.uniform((2, 2), 1.0, 3.0))
        check_grads(lambda: tensor_sum(div(a, b)), [a, b])
        check_grads(lambda: tensor_sum(mul(a, b)), [a, b])
        check_grads(lambda: tensor_sum(sub(mul(a, 2.0), b)), [a, b])
        check_grads(lambda: tensor_sum(add(a, b)), [a, b])

    def test_reshape_transpose_gradients(self):
        rng = Rng(20)
        x = Parameter("x", rng.normal((2, 3, 4)))
        w = Tensor(rng.normal((4, 6)))

        def f():
            return tensor_sum(mul(reshape(transpose(x, (2, 0, 1)), (4, 6)), w))

        check_grads(f, [x])


class TestTapeAndBackward:
    def test_linear_loss_grad_ones(self):
        p = Parameter("p", np.array([1.0, 5.0, -2.0], np.float32))
        with Tape():
            loss = tensor_sum(p)
        backward(loss)
        assert p.grad.tolist() == [1.0, 1.0, 1.0]

    def test_quadratic_loss_grad(self):
        p = Parameter("p", np.array([1.0, 2.0], np.float32))
        with Tape():
            loss = tensor_sum(mul(p, p))
        backward(loss)
        assert p.grad.tolist() == [2.0, 4.0]

    def test_backward_non_scalar_rejected(self):
        p = Parameter("p", np.ones(3, np.float32))
        with Tape():
            out = mul(p, 2.0)
        with pytest.raises(UsageError):
            backward(out)

    def test_backward_without_tape_rejected(self):
        p = Parameter("p", np.ones(3, np.float32))
        loss = tensor_sum(p)  # no tape active: not recorded
        with pytest.raises(UsageError):
            backward(loss)

    def test_grad_accumulates_across_backwards(self):
        p = Parameter("p", np.array([2.0], np.float32))
        for _ in range(2):
            with Tape():
                loss = tensor_sum(mul(p, p))
            backward(loss)
        assert p.grad.tolist() == [8.0]

    def test_no_recording_without_tape(self):
        p = Parameter("p", np.ones(3, np.float32))
        out = mul(p, 2.0)
        assert out.tape is None and out.requires_grad is False

    def test_reused_tensor_accumulates_through_fanout(self):
        p = Parameter("p", np.array([3.0], np.float32))
        with Tape():
            y = mul(p, 2.0)
            loss = tensor_sum(add(mul(y, y), y))   # 4p^2 + 2p
        backward(loss)
        assert p.grad.tolist() == [8.0 * 3.0 + 2.0]


class TestNumericalSafety:
    @pytest.mark.filterwarnings("ignore:overflow")
    def test_overflow_detected(self):
        big = Tensor(np.full(4, 1e30, np.float32))
        with pytest.raises(NumericalError):
            mul(big, big)

    @pytest.mark.filterwarnings("ignore:divide")
    def test_division_blowup_detected(self):
        with pytest.raises(NumericalError):
            div(Tensor(np.ones(2)), Tensor(np.zeros(2)))

    def test_ops_bit_deterministic(self):
        rng = Rng(21)
        x = rng.normal((6, 6, 3))
        k = rng.normal((3, 3, 3, 4))
        a = conv2d(Tensor(x), Tensor(k)).data
        b = conv2d(Tensor(x.copy()), Tensor(k.copy())).data
        assert np.array_equal(a, b)


class TestRng:
    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(123).normal((10,)), Rng(123).normal((10,)))
        assert np.array_equal(Rng(123).uniform((10,)), Rng(123).uniform((10,)))

    def test_counter_continuation(self):
        r = Rng(9)
        first = np.concatenate([r.uniform((2,)), r.uniform((2,))])
        assert np.array_equal(first, Rng(9).uniform((4,)))

    def test_children_are_independent_streams(self):
        r = Rng(9)
        a, b = r.child(1).uniform((8,)), r.child(2).uniform((8,))
        assert not np.array_equal(a, b)
        assert np.array_equal(a, Rng(9).child(1).uniform((8,)))

    def test_uniform_bounds(self):
        u = Rng(5).uniform((1000,), -2.0, 3.0)
        assert u.min() >= -2.0 and u.max() < 3.0

    def test_normal_moments(self):
        z = Rng(6).normal((20000,))
        assert abs(float(z.mean())) < 0.03
        assert abs(float(z.std()) - 1.0) < 0.03

    def test_permutation_is_permutation(self):
        perm = Rng(7).permutation(100)
        assert sorted(perm.tolist()) == list(range(100))
