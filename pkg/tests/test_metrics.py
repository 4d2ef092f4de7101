import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from l0asso.data import Dataset
from l0asso.errors import ConfigError
from l0asso.metrics import (
    dead_groups,
    error_rate,
    neuron_sparsity,
    prune_neurons,
    prune_weights,
    sparsity_report,
    weight_sparsity,
)
from l0asso.model import LayerParams, NetworkParams, build_lenet5_caffe, build_mlp, extract_groups


def linear(w, bias=None, grouping="output"):
    w = np.asarray(w, dtype=np.float64)
    return NetworkParams([LayerParams("affine", w, bias, 0, relu=False)], "linear", grouping)


EXAMPLE = [[0.0, 2e-6, 0.5, -1.0]]


class TestWeights:
    def test_prune_example(self):
        out = prune_weights(linear(EXAMPLE), 1e-5)
        np.testing.assert_array_equal(out.weights[0], [[0, 0, 0.5, -1]])

    def test_prune_does_not_mutate(self):
        net = linear(EXAMPLE)
        prune_weights(net, 1e-5)
        assert net.weights[0][0, 1] == 2e-6

    def test_tau_zero_is_identity(self):
        net = build_mlp([5, 4, 3], seed=0)
        for a, b in zip(prune_weights(net, 0.0).arrays(), net.arrays()):
            assert a.tobytes() == b.tobytes()

    def test_sparsity_example(self):
        assert weight_sparsity(linear(EXAMPLE), 1e-5) == 50.0

    def test_all_zero(self):
        net = build_mlp([5, 4, 3], seed=0)
        net.set_arrays([np.zeros_like(a) for a in net.arrays()])
        assert weight_sparsity(net) == 100.0

    def test_tau_zero_counts_exact_zeros_only(self):
        assert weight_sparsity(linear([[0.0, 1e-300, 1.0, 0.0]]), 0.0) == 50.0

    def test_dense_init_is_not_sparse(self):
        net = build_lenet5_caffe(seed=0)
        # biases start at exactly zero and count as zeros (about 0.13%)
        assert weight_sparsity(net) < 0.5

    def test_negative_threshold(self):
        with pytest.raises(ConfigError):
            weight_sparsity(linear(EXAMPLE), -1.0)

    @given(st.lists(st.floats(-1, 1), min_size=4, max_size=20), st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_tau(self, values, t1, t2):
        net = linear([values])
        lo, hi = sorted((t1, t2))
        assert weight_sparsity(net, lo) <= weight_sparsity(net, hi)

    @given(st.lists(st.floats(-1, 1), min_size=4, max_size=20), st.floats(0, 1))
    def test_prune_idempotent(self, values, tau):
        once = prune_weights(linear([values]), tau)
        twice = prune_weights(once, tau)
        np.testing.assert_array_equal(once.weights[0], twice.weights[0])


class TestNeurons:
    def two_groups(self):
        net = linear([[1e-7, -1e-7], [1.0, 1.0]])
        return net, extract_groups(net, "output")

    def test_example(self):
        net, p = self.two_groups()
        assert neuron_sparsity(net, p, 1e-5) == 50.0
        np.testing.assert_array_equal(dead_groups(net.weights[0], p.layers[0]), [True, False])

    def test_prune_zeroes_dead_group(self):
        net, p = self.two_groups()
        out = prune_neurons(net, p, 1e-5)
        np.testing.assert_array_equal(out.weights[0], [[0, 0], [1, 1]])

    def test_normalized_by_group_size(self):
        # sum of |w| is 3e-5 but the mean is 1e-5 -> alive; mean 0.9e-5 -> dead
        w = np.array([[1e-5, 1e-5, 1e-5], [0.9e-5, 0.9e-5, 0.9e-5]])
        net = linear(w)
        dead = dead_groups(w, extract_groups(net, "output").layers[0], 1e-5)
        np.testing.assert_array_equal(dead, [False, True])

    def test_all_zero(self):
        net = build_lenet5_caffe(seed=0)
        net.set_arrays([np.zeros_like(a) for a in net.arrays()])
        for mode in ("input", "output"):
            assert neuron_sparsity(net, extract_groups(net, mode)) == 100.0
            assert neuron_sparsity(net, extract_groups(net, mode), 0.0) == 100.0

    @pytest.mark.parametrize("mode", ["input", "output"])
    def test_one_group_increment(self, mode):
        net = build_mlp([6, 5, 4], seed=1)
        p = extract_groups(net, mode)
        base = neuron_sparsity(net, p)
        layer, groups = net.layers[1], p.layers[1]
        flat = layer.weight.reshape(-1)
        flat[groups.index_sets()[2]] = 0
        assert neuron_sparsity(net, p) - base == pytest.approx(100.0 / p.total, abs=1e-12)

    @given(st.lists(st.floats(-1e-4, 1e-4), min_size=6, max_size=6), st.floats(0, 1e-4), st.floats(0, 1e-4))
    def test_monotone_in_tau(self, values, t1, t2):
        net = linear(np.reshape(values, (3, 2)))
        p = extract_groups(net, "output")
        lo, hi = sorted((t1, t2))
        assert neuron_sparsity(net, p, lo) <= neuron_sparsity(net, p, hi)


class TestReport:
    def test_dead_group_weights_count_as_zero(self):
        w = np.array([[1e-3, 2e-6], [1.0, 1.0]])  # first row: mean 5e-4 alive
        net = linear(w)
        p = extract_groups(net, "output")
        _, rep = sparsity_report(net, p, 1e-5, 1e-3)
        assert rep.neuron_sparsity == 50.0
        assert rep.weight_sparsity == 50.0
        assert rep.layers[0].zero_params == 2

    def test_fields(self):
        net = build_mlp([4, 3, 2], seed=0)
        p = extract_groups(net, "input")
        _, rep = sparsity_report(net, p)
        assert rep.total_params == net.count_params() == 23
        assert rep.total_groups == 4 + 3
        assert rep.weight_threshold == rep.neuron_threshold == 1e-5
        assert sum(l.params for l in rep.layers) == rep.total_params

    def test_reproducible(self):
        net = build_mlp([8, 6, 3], seed=2)
        net.layers[0].weight[:, :3] = 0
        p = extract_groups(net, "input")
        assert sparsity_report(net, p)[1] == sparsity_report(net, p)[1]
        assert sparsity_report(net, p)[1].to_dict() == sparsity_report(net.copy(), p)[1].to_dict()


class TestErrorRate:
    def test_perfect_and_constant(self):
        net = linear(np.eye(3), bias=np.zeros(3))
        x = np.eye(3)
        assert error_rate(net, Dataset(x, np.array([0, 1, 2]), num_classes=3)) == 0.0
        assert error_rate(net, Dataset(x, np.array([1, 2, 0]), num_classes=3)) == 100.0

    def test_zero_net_predicts_first_class(self):
        net = linear(np.zeros((3, 2)), bias=np.zeros(3))
        data = Dataset(np.ones((4, 2)), np.array([0, 1, 1, 2]), num_classes=3)
        assert error_rate(net, data) == 75.0
