"""Run configuration: an INI file with fixed sections and keys.

Every key has a default; the fully resolved configuration is written back
into the run directory so a run can be reproduced from it alone.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, fields
from importlib import resources

import numpy as np

from .errors import ConfigError
from .optim import OptimizerSpec, TrainSettings
from .regularizers import RegularizerSpec

ARCHS = ("lenet5-caffe", "mlp")
SOURCES = ("mnist", "synthetic")
PRECISIONS = {"float32": np.float32, "float64": np.float64}


def _int_list(text):
    return [int(s) for s in text.replace(" ", "").split(",") if s]


# (section, key, attribute, parser)
SCHEMA = [
    ("model", "arch", "arch", str),
    ("model", "mlp_sizes", "mlp_sizes", _int_list),
    ("model", "grouping", "grouping", str),
    ("data", "source", "source", str),
    ("data", "mnist_dir", "mnist_dir", str),
    ("data", "synthetic_classes", "synthetic_classes", int),
    ("data", "synthetic_dim", "synthetic_dim", int),
    ("data", "synthetic_per_class", "synthetic_per_class", int),
    ("data", "synthetic_test_per_class", "synthetic_test_per_class", int),
    ("data", "synthetic_spread", "synthetic_spread", float),
    ("regularizer", "kind", "kind", str),
    ("regularizer", "lambda", "lam", float),
    ("regularizer", "beta0", "beta0", float),
    ("regularizer", "sigma", "sigma", float),
    ("regularizer", "beta_interval", "beta_interval", int),
    ("optimizer", "method", "method", str),
    ("optimizer", "lr", "lr", float),
    ("optimizer", "lr_decay", "lr_decay", float),
    ("optimizer", "lr_decay_interval", "lr_decay_interval", int),
    ("optimizer", "adam_beta1", "adam_beta1", float),
    ("optimizer", "adam_beta2", "adam_beta2", float),
    ("optimizer", "adam_eps", "adam_eps", float),
    ("train", "epochs", "epochs", int),
    ("train", "batch_size", "batch_size", int),
    ("train", "seed", "seed", int),
    ("train", "precision", "precision", str),
    ("train", "probe_size", "probe_size", int),
    ("metrics", "weight_threshold", "weight_threshold", float),
    ("metrics", "neuron_threshold", "neuron_threshold", float),
    ("output", "out_dir", "out_dir", str),
]


@dataclass
class RunConfig:
    arch: str = "lenet5-caffe"
    mlp_sizes: list = None
    grouping: str = "input"
    source: str = "mnist"
    mnist_dir: str = ""
    synthetic_classes: int = 3
    synthetic_dim: int = 10
    synthetic_per_class: int = 100
    synthetic_test_per_class: int = 100
    synthetic_spread: float = 1.0
    kind: str = "sgl0"
    lam: float = 0.1 / 60000
    beta0: float = 2.5 / 60000
    sigma: float = 1.25
    beta_interval: int = 40
    method: str = "adam"
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_interval: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 128
    seed: int = 1
    precision: str = "float32"
    probe_size: int = 512
    weight_threshold: float = 1e-5
    neuron_threshold: float = 1e-5
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.mlp_sizes is None:
            self.mlp_sizes = [784, 300, 100, 10]

    # -- validation ----------------------------------------------------------

    def validate(self):
        """Raise ConfigError naming the first invalid field."""
        if self.arch not in ARCHS:
            raise ConfigError(f"must be one of {ARCHS}, got {self.arch!r}", "model.arch")
        if self.arch == "mlp" and (len(self.mlp_sizes) < 2 or min(self.mlp_sizes) < 1):
            raise ConfigError("need >= 2 positive sizes", "model.mlp_sizes")
        if self.grouping not in ("input", "output"):
            raise ConfigError(f"must be 'input' or 'output', got {self.grouping!r}", "model.grouping")
        if self.source not in SOURCES:
            raise ConfigError(f"must be one of {SOURCES}, got {self.source!r}", "data.source")
        if self.source == "synthetic":
            for key in ("synthetic_classes", "synthetic_dim", "synthetic_per_class", "synthetic_test_per_class"):
                if getattr(self, key) < 1:
                    raise ConfigError("must be >= 1", f"data.{key}")
            if self.synthetic_classes < 2:
                raise ConfigError("must be >= 2", "data.synthetic_classes")
            if not self.synthetic_spread > 0:
                raise ConfigError("must be positive", "data.synthetic_spread")
            if self.arch == "mlp" and self.mlp_sizes[0] != self.synthetic_dim:
                raise ConfigError(f"first size {self.mlp_sizes[0]} != synthetic_dim {self.synthetic_dim}",
                                  "model.mlp_sizes")
            if self.arch == "mlp" and self.mlp_sizes[-1] != self.synthetic_classes:
                raise ConfigError(f"last size {self.mlp_sizes[-1]} != synthetic_classes "
                                  f"{self.synthetic_classes}", "model.mlp_sizes")
            if self.arch == "lenet5-caffe":
                raise ConfigError("lenet5-caffe needs 28x28 images; use data.source = mnist", "model.arch")
        if self.source == "mnist" and self.arch == "mlp" and (self.mlp_sizes[0] != 784 or self.mlp_sizes[-1] != 10):
            raise ConfigError("MNIST MLP must map 784 inputs to 10 classes", "model.mlp_sizes")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"must be one of {tuple(PRECISIONS)}", "train.precision")
        if self.probe_size < 1:
            raise ConfigError("must be >= 1", "train.probe_size")
        if not self.out_dir:
            raise ConfigError("must not be empty", "output.out_dir")
        self.train_settings()
        return self

    def regularizer(self):
        return RegularizerSpec(self.kind, self.lam)

    def optimizer(self):
        return OptimizerSpec(self.method, self.lr, self.lr_decay, self.lr_decay_interval,
                             self.adam_beta1, self.adam_beta2, self.adam_eps)

    def train_settings(self):
        return TrainSettings(
            regularizer=self.regularizer(), optimizer=self.optimizer(), epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, beta0=self.beta0, sigma=self.sigma,
            beta_interval=self.beta_interval, weight_threshold=self.weight_threshold,
            neuron_threshold=self.neuron_threshold, probe_size=self.probe_size, loss="xent",
        )

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    # -- serialization -------------------------------------------------------

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        for section, key, attr, _ in SCHEMA:
            if not parser.has_section(section):
                parser.add_section(section)
            value = getattr(self, attr)
            if isinstance(value, list):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            parser.set(section, key, text)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def hash(self):
        """Digest of every setting except the output directory."""
        return hashlib.sha256(self.replace(out_dir="-").to_ini().encode()).hexdigest()[:16]

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return RunConfig(**values)


def parse_config(text):
    """Parse INI text; unknown sections/keys and bad values raise ConfigError."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    known = {(s, k): (attr, fn) for s, k, attr, fn in SCHEMA}
    sections = {s for s, *_ in SCHEMA}
    values = {}
    for section in parser.sections():
        if section not in sections:
            raise ConfigError("unknown section", section)
        for key, raw in parser.items(section):
            if (section, key) not in known:
                raise ConfigError("unknown key", f"{section}.{key}")
            attr, fn = known[(section, key)]
            try:
                values[attr] = fn(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"invalid value {raw!r}: {exc}", f"{section}.{key}") from exc
            if fn is float and not np.isfinite(values[attr]):
                raise ConfigError(f"must be finite, got {raw!r}", f"{section}.{key}")
    return RunConfig(**values).validate()


def preset_names():
    return sorted(p.name[:-4] for p in resources.files("l0asso.presets").iterdir() if p.name.endswith(".ini"))


def load_config(path_or_preset):
    """Load a config file, or a shipped preset by name."""
    if os.path.exists(path_or_preset):
        with open(path_or_preset) as fh:
            return parse_config(fh.read())
    if path_or_preset in preset_names():
        return parse_config(resources.files("l0asso.presets").joinpath(path_or_preset + ".ini").read_text())
    raise ConfigError(f"no such file or preset: {path_or_preset!r} (presets: {', '.join(preset_names())})",
                      "--config")
