import math

import numpy as np
import pytest

from l0asso import tensor as T
from l0asso.errors import ConfigError, DimensionError, InputError, UsageError
from l0asso.gradcheck import finite_difference_check, numerical_gradient


def t(x):
    return T.Tensor(np.asarray(x, dtype=np.float64))


class TestAffine:
    def test_identity_weight(self):
        out = T.affine(t([[1, 2]]), t([[1, 0], [0, 1]]), t([0, 0]))
        np.testing.assert_array_equal(out.data, [[1, 2]])

    def test_hand_evaluation(self):
        out = T.affine(t([[1, 1]]), t([[2, 3]]), t([1]))
        np.testing.assert_array_equal(out.data, [[6]])

    def test_zero_input_passes_bias(self):
        w = np.random.default_rng(0).normal(size=(1, 2))
        out = T.affine(t([[0, 0]]), t(w), t([5]))
        np.testing.assert_array_equal(out.data, [[5]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.affine(t([[1, 2, 3]]), t([[1, 0], [0, 1]]), t([0, 0]))
        with pytest.raises(DimensionError):
            T.affine(t([[1, 2]]), t([[1, 0], [0, 1]]), t([0, 0, 0]))


class TestConv2d:
    def test_sum_of_ones(self):
        out = T.conv2d(t(np.ones((1, 1, 3, 3))), t(np.ones((1, 1, 3, 3))), t([0.0]), 1)
        np.testing.assert_array_equal(out.data, [[[[9]]]])

    def test_delta_kernel_crops_centre(self):
        x = np.random.default_rng(1).normal(size=(2, 1, 6, 7))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1
        out = T.conv2d(t(x), t(k), t([0.0]))
        np.testing.assert_array_equal(out.data, x[:, :, 1:-1, 1:-1])

    def test_zero_kernel_gives_bias(self):
        x = np.random.default_rng(2).normal(size=(2, 3, 5, 5))
        out = T.conv2d(t(x), t(np.zeros((4, 3, 2, 2))), t([1.5, -2, 0, 3]))
        assert out.shape == (2, 4, 4, 4)
        np.testing.assert_array_equal(out.data[:, 1], -2)
        np.testing.assert_array_equal(out.data[:, 3], 3)

    def test_matches_direct_loop(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.normal(size=(2, 3, 7, 7)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        out = T.conv2d(t(x), t(w), t(b), stride=2).data
        ref = np.zeros((2, 4, 3, 3))
        for n in range(2):
            for f in range(4):
                for i in range(3):
                    for j in range(3):
                        ref[n, f, i, j] = np.sum(x[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[f]) + b[f]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_non_integral_extent(self):
        with pytest.raises(ConfigError):
            T.conv2d(t(np.ones((1, 1, 6, 6))), t(np.ones((1, 1, 3, 3))), stride=2)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.conv2d(t(np.ones((1, 2, 5, 5))), t(np.ones((1, 1, 3, 3))))


class TestPointwiseAndLoss:
    def test_relu(self):
        np.testing.assert_array_equal(T.relu(t([-1.0, 2.0])).data, [0, 2])

    def test_maxpool(self):
        out = T.maxpool2d(t([[[[1, 2], [3, 4]]]]), 2)
        np.testing.assert_array_equal(out.data, [[[[4]]]])

    def test_maxpool_requires_divisible_extent(self):
        with pytest.raises(ConfigError):
            T.maxpool2d(t(np.ones((1, 1, 3, 4))), 2)

    @pytest.mark.parametrize("label", [0, 1])
    def test_xent_uniform_logits(self, label):
        loss = T.softmax_cross_entropy(t([[0.0, 0.0]]), np.array([label]))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-15)
        assert loss.item() == pytest.approx(0.693147, abs=1e-6)

    def test_xent_label_out_of_range(self):
        with pytest.raises(InputError):
            T.softmax_cross_entropy(t([[0.0, 0.0]]), np.array([2]))
        with pytest.raises(InputError):
            T.softmax_cross_entropy(t([[0.0, 0.0]]), np.array([-1]))

    def test_xent_is_stable_for_large_logits(self):
        loss = T.softmax_cross_entropy(t([[1000.0, 0.0]]), np.array([1]))
        assert loss.item() == pytest.approx(1000.0)


class TestBackward:
    def test_xent_gradient_is_softmax_minus_onehot(self):
        logits = T.Tensor(np.zeros((1, 2)), requires_grad=True)
        with T.Tape() as tape:
            loss = T.softmax_cross_entropy(logits, np.array([0]))
        (g,) = tape.gradient(loss, [logits])
        np.testing.assert_allclose(g, [[-0.5, 0.5]], atol=1e-15)

    def test_gradient_of_constant_is_zero(self):
        w = T.Tensor(np.ones(3), requires_grad=True)
        c = T.Tensor(np.array(2.0))
        with T.Tape() as tape:
            out = T.mul(c, 3.0)
        (g,) = tape.gradient(out, [w])
        np.testing.assert_array_equal(g, 0)

    def test_unrecorded_target_is_usage_error(self):
        w = T.Tensor(np.ones(2), requires_grad=True)
        loss = T.total(T.square(w))  # computed outside any tape
        tape = T.Tape()
        with pytest.raises(UsageError):
            tape.gradient(loss, [w])

    def test_non_scalar_root_is_usage_error(self):
        w = T.Tensor(np.ones(2), requires_grad=True)
        with T.Tape() as tape:
            y = T.square(w)
        with pytest.raises(UsageError):
            tape.gradient(y, [w])

    def test_shared_input_accumulates(self):
        w = T.Tensor(np.array([3.0]), requires_grad=True)
        with T.Tape() as tape:
            y = T.total(T.mul(w, w) + w)
        (g,) = tape.gradient(y, [w])
        np.testing.assert_allclose(g, [7.0])

    def test_linearity(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 3))
        w0, b0 = rng.normal(size=(2, 3)), rng.normal(size=2)
        labels = np.array([0, 1, 1, 0])

        def f(w, b):
            return T.softmax_cross_entropy(T.affine(T.Tensor(x), w, b), labels)

        def g(w, b):
            return T.total(T.square(w)) + T.total(b)

        a, c = 0.7, -2.3
        _, gf = T.value_and_grad(f, [w0, b0])
        _, gg = T.value_and_grad(g, [w0, b0])
        _, gh = T.value_and_grad(lambda w, b: a * f(w, b) + c * g(w, b), [w0, b0])
        for h, p, q in zip(gh, gf, gg):
            np.testing.assert_allclose(h, a * p + c * q, rtol=0, atol=1e-10)

    def test_determinism(self):
        rng = np.random.default_rng(6)
        x, w = rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(3, 2, 3, 3))

        def f(w):
            return T.total(T.maxpool2d(T.relu(T.conv2d(T.Tensor(x), w)), 2))

        v1, g1 = T.value_and_grad(f, [w])
        v2, g2 = T.value_and_grad(f, [w])
        assert v1 == v2
        assert g1[0].tobytes() == g2[0].tobytes()


class TestFiniteDifference:
    def test_quadratic(self):
        (num,) = numerical_gradient(lambda w: T.total(T.square(w)), [np.array([3.0])])
        assert abs(num[0] - 6.0) < 1e-8
        err = finite_difference_check(lambda w: T.total(T.square(w)), [np.array([3.0])])
        assert err < 1e-8

    def test_linear_is_exact(self):
        c = np.array([1.5, -2.0, 0.25])
        err = finite_difference_check(lambda w: T.total(T.mul(w, T.Tensor(c))), [np.array([0.5, 1.0, -1.0])])
        assert err < 1e-10

    def test_step_must_be_positive(self):
        with pytest.raises(ConfigError):
            finite_difference_check(lambda w: T.total(w), [np.ones(1)], step=0)

    @pytest.mark.parametrize("seed", range(3))
    def test_each_op(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 3, size=2)
        x = rng.normal(size=(2, 2, 6, 6))
        target = rng.normal(size=(2, 3))
        cases = {
            "affine": (lambda xx, w, b: T.softmax_cross_entropy(T.affine(xx, w, b), labels),
                       [rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)]),
            "conv": (lambda xx, w, b: T.total(T.square(T.conv2d(xx, w, b))),
                     [x, rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]),
            "conv-stride": (lambda xx, w: T.total(T.square(T.conv2d(xx, w, stride=3))),
                            [rng.normal(size=(1, 2, 7, 7)), rng.normal(size=(2, 2, 4, 4))]),
            "relu": (lambda xx: T.total(T.square(T.relu(xx))), [rng.normal(size=(3, 4))]),
            "maxpool": (lambda xx: T.total(T.square(T.maxpool2d(xx, 2))), [x]),
            "mse": (lambda p: T.squared_error(p, target), [rng.normal(size=(2, 3))]),
            "reshape-mean": (lambda xx: T.mean(T.square(T.flatten(xx))), [x]),
        }
        for name, (f, params) in cases.items():
            assert finite_difference_check(f, params, 1e-5) <= 1e-4, name
