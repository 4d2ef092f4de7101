"""Weight/neuron pruning and sparsity reporting.

A weight counts as zero when ``|w| < tau_w`` (or it is exactly 0). A group
("neuron": a filter, or an fc row/column depending on the grouping) is dead
when the mean absolute value of its weights is below ``tau_n`` or all of
its weights are exactly zero. Biases are counted in the weight total but
never belong to a group.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .model import predict

DEFAULT_WEIGHT_THRESHOLD = 1e-5
DEFAULT_NEURON_THRESHOLD = 1e-5


def _check_tau(tau, name):
    if not tau >= 0:
        raise ConfigError(f"threshold must be nonnegative, got {tau}", name)


def _is_zero(a, tau):
    return (np.abs(a) < tau) | (a == 0)


def prune_weights(net, tau_w=DEFAULT_WEIGHT_THRESHOLD):
    _check_tau(tau_w, "weight_threshold")
    out = net.copy()
    out.set_arrays([np.where(np.abs(a) < tau_w, np.zeros((), a.dtype), a) for a in out.arrays()])
    return out


def weight_sparsity(net, tau_w=DEFAULT_WEIGHT_THRESHOLD):
    _check_tau(tau_w, "weight_threshold")
    arrays = net.arrays()
    zeros = sum(int(np.count_nonzero(_is_zero(a, tau_w))) for a in arrays)
    return 100.0 * zeros / sum(a.size for a in arrays)


def dead_groups(w, groups, tau_n=DEFAULT_NEURON_THRESHOLD):
    """Boolean mask over the groups of one layer."""
    abs_sum = np.bincount(groups.ids, weights=np.abs(w, dtype=np.float64).reshape(-1),
                          minlength=groups.num_groups)
    return (abs_sum / groups.sizes < tau_n) | (abs_sum == 0)


def prune_neurons(net, partition, tau_n=DEFAULT_NEURON_THRESHOLD):
    _check_tau(tau_n, "neuron_threshold")
    out = net.copy()
    for layer, groups in zip(out.layers, partition.layers):
        dead = dead_groups(layer.weight, groups, tau_n)
        if dead.any():
            flat = layer.weight.reshape(-1).copy()
            flat[dead[groups.ids]] = 0
            layer.weight = flat.reshape(layer.weight.shape)
    return out


def neuron_sparsity(net, partition, tau_n=DEFAULT_NEURON_THRESHOLD):
    _check_tau(tau_n, "neuron_threshold")
    dead = sum(int(dead_groups(l.weight, g, tau_n).sum()) for l, g in zip(net.layers, partition.layers))
    return 100.0 * dead / partition.total


@dataclass
class LayerSparsity:
    layer: int
    params: int
    zero_params: int
    groups: int
    dead_groups: int


@dataclass
class SparsityReport:
    weight_sparsity: float
    neuron_sparsity: float
    weight_threshold: float
    neuron_threshold: float
    total_params: int
    total_groups: int
    layers: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def sparsity_report(net, partition, tau_w=DEFAULT_WEIGHT_THRESHOLD, tau_n=DEFAULT_NEURON_THRESHOLD):
    """Prune weights then neurons; return ``(pruned_net, report)``.

    Both percentages are measured on the pruned network, so every weight of
    a dead group counts towards weight sparsity.
    """
    pruned = prune_neurons(prune_weights(net, tau_w), partition, tau_n)
    layers = []
    for layer, groups in zip(pruned.layers, partition.layers):
        arrays = [layer.weight] + ([layer.bias] if layer.bias is not None else [])
        layers.append(LayerSparsity(
            layer=layer.index,
            params=sum(a.size for a in arrays),
            zero_params=sum(int(np.count_nonzero(_is_zero(a, tau_w))) for a in arrays),
            groups=groups.num_groups,
            dead_groups=int(dead_groups(layer.weight, groups, tau_n).sum()),
        ))
    total_params = sum(l.params for l in layers)
    report = SparsityReport(
        weight_sparsity=100.0 * sum(l.zero_params for l in layers) / total_params,
        neuron_sparsity=100.0 * sum(l.dead_groups for l in layers) / partition.total,
        weight_threshold=tau_w,
        neuron_threshold=tau_n,
        total_params=total_params,
        total_groups=partition.total,
        layers=layers,
    )
    return pruned, report


def error_rate(net, dataset, batch_size=1000):
    """Classification error in percent."""
    if len(dataset) == 0:
        return 0.0
    pred = predict(net, dataset.images, batch_size)
    return 100.0 * float(np.mean(pred != dataset.labels))
