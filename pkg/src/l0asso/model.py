"""Networks, parameter registry, group partitions and checkpoints."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError

GROUPING_MODES = ("output", "input")
CHECKPOINT_VERSION = 1


@dataclass
class LayerParams:
    """One weight layer. ``kind`` is ``"conv"`` or ``"affine"``.

    ``relu`` and ``pool`` describe what follows the linear map (pool is the
    max-pool window, 0 for none).
    """

    kind: str
    weight: np.ndarray
    bias: np.ndarray | None
    index: int
    relu: bool = True
    pool: int = 0
    stride: int = 1

    def __post_init__(self):
        ndim = {"conv": 4, "affine": 2}.get(self.kind)
        if ndim is None:
            raise ConfigError(f"unknown layer kind {self.kind!r}", "layer.kind")
        if self.weight.ndim != ndim:
            raise DimensionError(f"{self.kind} weight must be {ndim}-D, got shape {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")


@dataclass
class LayerGroups:
    """Assignment of each flat weight index of one layer to a group.

    ``ids[i]`` is the group of flat (row-major) weight index ``i``.
    """

    shape: tuple
    ids: np.ndarray
    num_groups: int
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.intp)
        if self.ids.size != int(np.prod(self.shape)):
            raise DimensionError(f"group ids cover {self.ids.size} entries, layer has {int(np.prod(self.shape))}")
        self.sizes = np.bincount(self.ids, minlength=self.num_groups)
        if self.sizes.size != self.num_groups or np.any(self.sizes == 0):
            raise ConfigError("every group must be nonempty and ids must lie in [0, num_groups)", "groups")

    @classmethod
    def from_index_sets(cls, shape, index_sets):
        """Build from explicit disjoint flat index sets covering the layer."""
        n = int(np.prod(shape))
        ids = np.full(n, -1, dtype=np.intp)
        for g, idx in enumerate(index_sets):
            idx = np.asarray(idx, dtype=np.intp)
            if np.any(ids[idx] != -1):
                raise ConfigError(f"group {g} overlaps an earlier group", "groups")
            ids[idx] = g
        if np.any(ids == -1):
            raise ConfigError("index sets do not cover every weight", "groups")
        return cls(tuple(shape), ids, len(index_sets))

    @classmethod
    def single(cls, shape):
        return cls(tuple(shape), np.zeros(int(np.prod(shape)), dtype=np.intp), 1)

    def index_sets(self):
        order = np.argsort(self.ids, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1])


@dataclass
class GroupPartition:
    layers: list
    mode: str

    @property
    def counts(self):
        return [g.num_groups for g in self.layers]

    @property
    def total(self):
        return sum(self.counts)


@dataclass
class NetworkParams:
    layers: list
    arch: str
    grouping: str = "input"

    def __post_init__(self):
        if self.grouping not in GROUPING_MODES:
            raise ConfigError(f"unknown grouping mode {self.grouping!r}", "model.grouping")

    @property
    def weights(self):
        """Regularized tensors, one per layer."""
        return [layer.weight for layer in self.layers]

    def arrays(self):
        """All trainable arrays in a fixed order: w0, b0, w1, b1, ..."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            if layer.bias is not None:
                out.append(layer.bias)
        return out

    def set_arrays(self, arrays):
        it = iter(arrays)
        for layer in self.layers:
            layer.weight = next(it)
            if layer.bias is not None:
                layer.bias = next(it)

    def is_weight(self):
        """Mask aligned with :meth:`arrays`: True for weights, False for biases."""
        return [flag for layer in self.layers for flag in ((True, False) if layer.bias is not None else (True,))]

    def count_params(self):
        return sum(a.size for a in self.arrays())

    def copy(self):
        layers = [LayerParams(l.kind, l.weight.copy(), None if l.bias is None else l.bias.copy(),
                              l.index, l.relu, l.pool, l.stride) for l in self.layers]
        return NetworkParams(layers, self.arch, self.grouping)

    def astype(self, dtype):
        net = self.copy()
        net.set_arrays([a.astype(dtype) for a in net.arrays()])
        return net

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    @property
    def partition(self):
        return extract_groups(self, self.grouping)


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _conv(rng, index, c_in, c_out, k, dtype, pool):
    w = _glorot(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k, dtype)
    return LayerParams("conv", w, np.zeros(c_out, dtype=dtype), index, relu=True, pool=pool)


def _affine(rng, index, n_in, n_out, dtype, relu):
    w = _glorot(rng, (n_out, n_in), n_in, n_out, dtype)
    return LayerParams("affine", w, np.zeros(n_out, dtype=dtype), index, relu=relu)


def build_lenet5_caffe(seed=0, dtype=np.float64, grouping="input"):
    """conv 20@5x5 - pool - conv 50@5x5 - pool - fc 500 - fc 10 on 1x28x28."""
    rng = np.random.default_rng(seed)
    layers = [
        _conv(rng, 0, 1, 20, 5, dtype, pool=2),
        _conv(rng, 1, 20, 50, 5, dtype, pool=2),
        _affine(rng, 2, 800, 500, dtype, relu=True),
        _affine(rng, 3, 500, 10, dtype, relu=False),
    ]
    return NetworkParams(layers, "lenet5-caffe", grouping)


def build_mlp(sizes, seed=0, dtype=np.float64, grouping="input"):
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ConfigError("an MLP needs at least input and output sizes", "model.mlp_sizes")
    if min(sizes) < 1:
        raise ConfigError("layer sizes must be >= 1", "model.mlp_sizes")
    rng = np.random.default_rng(seed)
    n = len(sizes) - 1
    layers = [_affine(rng, i, sizes[i], sizes[i + 1], dtype, relu=i < n - 1) for i in range(n)]
    return NetworkParams(layers, "mlp", grouping)


def build_small_convnet(seed=0, dtype=np.float64, grouping="input"):
    """Two conv layers and one fc on 1x12x12 input (392 params); used for gradient checks."""
    rng = np.random.default_rng(seed)
    layers = [
        _conv(rng, 0, 1, 4, 3, dtype, pool=2),   # 12 -> 10 -> 5
        _conv(rng, 1, 4, 6, 2, dtype, pool=2),   # 5 -> 4 -> 2
        _affine(rng, 2, 24, 10, dtype, relu=False),
    ]
    return NetworkParams(layers, "small-convnet", grouping)


def layer_groups(layer, mode):
    w = layer.weight
    if layer.kind == "conv":
        F = w.shape[0]
        return LayerGroups(w.shape, np.repeat(np.arange(F), w.size // F), F)
    O, I = w.shape
    if mode == "output":
        return LayerGroups(w.shape, np.repeat(np.arange(O), I), O)
    return LayerGroups(w.shape, np.tile(np.arange(I), O), I)


def extract_groups(net, mode):
    """Conv layers group by filter; fc layers by output row or input column."""
    if mode not in GROUPING_MODES:
        raise ConfigError(f"grouping mode must be one of {GROUPING_MODES}, got {mode!r}", "model.grouping")
    return GroupPartition([layer_groups(layer, mode) for layer in net.layers], mode)


def forward(net, x, params=None):
    """Logits of ``net`` on batch ``x``.

    ``params`` optionally supplies tensors aligned with ``net.arrays()`` (for
    gradient recording); otherwise the stored arrays are used untracked.
    """
    if params is None:
        params = [T.Tensor(a) for a in net.arrays()]
    it = iter(params)
    h = x if isinstance(x, T.Tensor) else T.Tensor(x)
    for layer in net.layers:
        w = next(it)
        b = next(it) if layer.bias is not None else None
        if layer.kind == "conv":
            h = T.conv2d(h, w, b, layer.stride)
        else:
            if h.data.ndim != 2:
                h = T.flatten(h)
            h = T.affine(h, w, b)
        if layer.relu:
            h = T.relu(h)
        if layer.pool:
            h = T.maxpool2d(h, layer.pool)
    return h


def predict(net, x, batch_size=1000):
    out = []
    for i in range(0, len(x), batch_size):
        out.append(np.argmax(forward(net, x[i:i + batch_size]).data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)


def save_checkpoint(net, path):
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": net.arch,
        "grouping": net.grouping,
        "layers": [{"kind": l.kind, "index": l.index, "relu": l.relu, "pool": l.pool,
                    "stride": l.stride, "has_bias": l.bias is not None} for l in net.layers],
    }
    arrays = {f"a{i}": a for i, a in enumerate(net.arrays())}
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}", "checkpoint")
        arrays = [z[f"a{i}"] for i in range(len(z.files) - 1)]
    it = iter(arrays)
    layers = []
    for spec in meta["layers"]:
        w = next(it)
        b = next(it) if spec["has_bias"] else None
        layers.append(LayerParams(spec["kind"], w, b, spec["index"], spec["relu"], spec["pool"], spec["stride"]))
    return NetworkParams(layers, meta["arch"], meta["grouping"])


def check_compatible(net, reference):
    """Raise DimensionError unless ``net`` has the same shapes as ``reference``."""
    a = [x.shape for x in net.arrays()]
    b = [x.shape for x in reference.arrays()]
    if a != b:
        raise DimensionError(f"checkpoint shapes {a} do not match model {b}")
