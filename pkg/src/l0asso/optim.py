"""Penalty-decomposition training for sparse group l0asso, and baselines.

For the l0-carrying regularizers the weights W are paired with an auxiliary
copy V and the relaxed objective

    F_beta(V, W) = L(W) + sum_l [ lam*(R_GL(W_l) + ||V_l||_0) + beta/2*||V_l - W_l||^2 ]

is minimized by alternating a gradient step on W with an exact
hard-thresholding update of V; ``beta`` is multiplied by ``sigma`` at fixed
epoch intervals. The group lasso and sparse group lasso baselines are
trained by plain subgradient descent on ``L(W) + lam*R(W)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import regularizers as reg
from . import tensor as T
from .data import BatchPlan, batches
from .errors import ConfigError, TrainingDiverged
from .metrics import DEFAULT_NEURON_THRESHOLD, DEFAULT_WEIGHT_THRESHOLD, error_rate, sparsity_report
from .model import forward

LOSSES = ("xent", "mse")


@dataclass
class OptimizerSpec:
    method: str = "adam"
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_interval: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ConfigError(f"must be 'sgd' or 'adam', got {self.method!r}", "optimizer.method")
        if not self.lr > 0:
            raise ConfigError(f"must be positive, got {self.lr}", "optimizer.lr")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"must lie in (0, 1], got {self.lr_decay}", "optimizer.lr_decay")
        if self.lr_decay_interval < 1:
            raise ConfigError("must be >= 1 epoch", "optimizer.lr_decay_interval")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam decay rates must lie in [0, 1)", "optimizer.adam_beta")
        if not self.eps > 0:
            raise ConfigError("must be positive", "optimizer.adam_eps")

    def lr_at(self, epoch):
        """Learning rate for 0-based ``epoch`` under step decay."""
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_interval)

    def build(self, params):
        if self.method == "sgd":
            return SGD()
        return Adam(params, self.beta1, self.beta2, self.eps)


class SGD:
    def step(self, params, grads, lr):
        for p, g in zip(params, grads):
            p -= lr * g


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainSettings:
    """Everything the training loops need; built from a RunConfig by the CLI."""

    regularizer: reg.RegularizerSpec
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    epochs: int = 1
    batch_size: int = 128
    seed: int = 0
    beta0: float = 0.0
    sigma: float = 1.25
    beta_interval: int = 40
    weight_threshold: float = DEFAULT_WEIGHT_THRESHOLD
    neuron_threshold: float = DEFAULT_NEURON_THRESHOLD
    probe_size: int = 512
    loss: str = "xent"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("must be >= 1", "train.epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "train.batch_size")
        if self.loss not in LOSSES:
            raise ConfigError(f"must be one of {LOSSES}", "train.loss")
        if self.regularizer.uses_split:
            if self.regularizer.lam > 0 and not self.beta0 > 0:
                raise ConfigError(f"must be positive when lambda > 0, got {self.beta0}", "regularizer.beta0")
            if self.beta0 < 0:
                raise ConfigError("must be nonnegative", "regularizer.beta0")
            if not self.sigma > 1:
                raise ConfigError(f"must be > 1, got {self.sigma}", "regularizer.sigma")
            if self.beta_interval < 1:
                raise ConfigError("must be >= 1 epoch", "regularizer.beta_interval")


@dataclass
class PenaltyState:
    """W (inside ``net``), V, and the scalars of the penalty method."""

    net: object
    aux: list
    lam: float
    beta: float
    sigma: float
    lr: float
    partition: object
    group_lasso: bool = True
    k: int = 0
    j: int = 1

    def escalate(self):
        self.beta *= self.sigma
        self.j += 1

    def coupling_gap(self):
        """sum_l ||V_l - W_l||_2^2"""
        return float(sum(np.sum(np.square(v - w, dtype=np.float64)) for v, w in zip(self.aux, self.net.weights)))


@dataclass
class TrainRecord:
    epoch: int
    train_loss: float
    f_beta: float
    test_error: float
    weight_sparsity: float
    neuron_sparsity: float
    beta: float
    lr: float
    wall_time: float = 0.0


@dataclass
class TrainResult:
    net: object
    records: list
    aux: list | None = None


def batch_loss(net, x, y, params=None, loss="xent"):
    out = forward(net, x, params)
    if loss == "mse":
        return T.squared_error(out, y)
    return T.softmax_cross_entropy(out, y)


def loss_and_grads(net, x, y, loss="xent"):
    """Minibatch mean loss and its gradient for every array of ``net.arrays()``."""
    leaves = [T.Tensor(a, requires_grad=True) for a in net.arrays()]
    with T.Tape() as tape:
        value = batch_loss(net, x, y, leaves, loss)
    return value.item(), tape.gradient(value, leaves)


def f_beta_value(loss_value, weights, aux, lam, beta, partition, group_lasso=True):
    """Relaxed objective given a precomputed data loss."""
    total = float(loss_value)
    for w, v, g in zip(weights, aux, partition.layers):
        r = reg.l0_count(v)
        if group_lasso:
            r += reg.group_lasso_value(w, g)
        total += lam * r + 0.5 * beta * float(np.sum(np.square(v - w, dtype=np.float64)))
    return total


def f_beta_eval(net, aux, lam, beta, partition, x, y, group_lasso=True, loss="xent"):
    value = batch_loss(net, x, y, loss=loss).item()
    return f_beta_value(value, net.weights, aux, lam, beta, partition, group_lasso)


def _check_finite(loss_value, grads, state, where):
    if not np.isfinite(loss_value) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDiverged(f"non-finite {'loss' if not np.isfinite(loss_value) else 'gradient'}",
                               where[0], where[1], state=dict(state))


def inner_step_W(state, x, y, optimizer, loss="xent", where=(0, 0)):
    """One stochastic W update; returns the minibatch loss.

    Each weight tensor receives grad L + lam*dR_GL(W) - beta*(V - W); biases
    receive only grad L.
    """
    net = state.net
    value, grads = loss_and_grads(net, x, y, loss)
    wi = 0
    for i, is_w in enumerate(net.is_weight()):
        if not is_w:
            continue
        w, v, groups = net.weights[wi], state.aux[wi], state.partition.layers[wi]
        g = grads[i]
        if state.group_lasso and state.lam:
            g = g + state.lam * reg.group_lasso_subgrad(w, groups)
        if state.beta:
            g = g - state.beta * (v - w)
        grads[i] = g
        wi += 1
    _check_finite(value, grads, {"lam": state.lam, "beta": state.beta, "lr": state.lr, "loss": value}, where)
    optimizer.step(net.arrays(), grads, state.lr)
    state.k += 1
    return value


def inner_step_V(state):
    """V_l <- H_sqrt(2 lam / beta)(W_l) for every regularized tensor."""
    if state.lam == 0:
        state.aux = [w.copy() for w in state.net.weights]
    else:
        state.aux = [reg.prox_l0(w, state.lam, state.beta) for w in state.net.weights]
    return state.aux


def baseline_step(net, spec, partition, x, y, optimizer, lr, loss="xent", where=(0, 0)):
    value, grads = loss_and_grads(net, x, y, loss)
    if spec.kind != "none" and spec.lam:
        wi = 0
        for i, is_w in enumerate(net.is_weight()):
            if is_w:
                grads[i] = grads[i] + spec.subgrad(net.weights[wi], partition.layers[wi])
                wi += 1
    _check_finite(value, grads, {"lam": spec.lam, "lr": lr, "loss": value}, where)
    optimizer.step(net.arrays(), grads, lr)
    return value


def initial_aux(net, lam, beta):
    """V^1 = H_sqrt(2 lam / beta0)(W^1); identity when lam = 0."""
    if lam == 0:
        return [w.copy() for w in net.weights]
    return [reg.prox_l0(w, lam, beta) for w in net.weights]


def _evaluate(net, partition, test, settings):
    pruned, report = sparsity_report(net, partition, settings.weight_threshold, settings.neuron_threshold)
    err = error_rate(pruned, test) if test is not None else float("nan")
    return err, report


def _probe(train, settings):
    n = min(settings.probe_size, len(train))
    return train.images[:n], train.labels[:n]


def run_algorithm1(net, train, test, settings, on_epoch=None):
    """Train ``net`` in place with penalty decomposition.

    Every minibatch does one W step then one V step. ``beta`` is multiplied
    by ``sigma`` every ``beta_interval`` epochs; the learning rate follows the
    optimizer's own decay schedule. ``on_epoch`` receives each TrainRecord.
    """
    spec = settings.regularizer
    if not spec.uses_split:
        raise ConfigError(f"{spec.kind!r} is trained with run_baseline", "regularizer.kind")
    partition = net.partition
    state = PenaltyState(net=net, aux=initial_aux(net, spec.lam, settings.beta0), lam=spec.lam,
                         beta=settings.beta0, sigma=settings.sigma, lr=settings.optimizer.lr,
                         partition=partition, group_lasso=spec.kind == "sgl0")
    optimizer = settings.optimizer.build(net.arrays())
    plan = BatchPlan(settings.batch_size, settings.seed)
    px, py = _probe(train, settings)
    records = []
    last_good = net.copy()
    start = time.perf_counter()
    for epoch in range(settings.epochs):
        if epoch and epoch % settings.beta_interval == 0:
            state.escalate()
        state.lr = settings.optimizer.lr_at(epoch)
        losses, counts = [], []
        try:
            for step, (x, y) in enumerate(batches(train, plan, epoch)):
                losses.append(inner_step_W(state, x, y, optimizer, settings.loss, (epoch + 1, step)))
                counts.append(len(y))
                inner_step_V(state)
        except TrainingDiverged as exc:
            exc.last_good = last_good
            raise
        fb = f_beta_eval(net, state.aux, state.lam, state.beta, partition, px, py,
                         state.group_lasso, settings.loss)
        err, report = _evaluate(net, partition, test, settings)
        rec = TrainRecord(epoch + 1, float(np.average(losses, weights=counts)), fb, err,
                          report.weight_sparsity, report.neuron_sparsity, state.beta, state.lr,
                          time.perf_counter() - start)
        if not np.isfinite(rec.train_loss) or not np.isfinite(fb):
            raise TrainingDiverged("non-finite epoch loss", epoch + 1, state.k, last_good)
        records.append(rec)
        last_good = net.copy()
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(net, records, state.aux)


def run_baseline(net, train, test, settings, on_epoch=None):
    """Subgradient training on L(W) + lam*R(W) for none/l1/gl/sgl."""
    spec = settings.regularizer
    if spec.uses_split:
        raise ConfigError(f"{spec.kind!r} is trained with run_algorithm1", "regularizer.kind")
    partition = net.partition
    optimizer = settings.optimizer.build(net.arrays())
    plan = BatchPlan(settings.batch_size, settings.seed)
    px, py = _probe(train, settings)
    records = []
    last_good = net.copy()
    start = time.perf_counter()
    for epoch in range(settings.epochs):
        lr = settings.optimizer.lr_at(epoch)
        losses, counts = [], []
        try:
            for step, (x, y) in enumerate(batches(train, plan, epoch)):
                losses.append(baseline_step(net, spec, partition, x, y, optimizer, lr,
                                            settings.loss, (epoch + 1, step)))
                counts.append(len(y))
        except TrainingDiverged as exc:
            exc.last_good = last_good
            raise
        objective = batch_loss(net, px, py, loss=settings.loss).item() + spec.value(net.weights, partition)
        err, report = _evaluate(net, partition, test, settings)
        rec = TrainRecord(epoch + 1, float(np.average(losses, weights=counts)), objective, err,
                          report.weight_sparsity, report.neuron_sparsity, 0.0, lr,
                          time.perf_counter() - start)
        if not np.isfinite(rec.train_loss) or not np.isfinite(objective):
            raise TrainingDiverged("non-finite epoch loss", epoch + 1, step, last_good)
        records.append(rec)
        last_good = net.copy()
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(net, records, None)


def train(net, train_data, test_data, settings, on_epoch=None):
    """Dispatch on the regularizer kind."""
    if settings.regularizer.uses_split:
        return run_algorithm1(net, train_data, test_data, settings, on_epoch)
    return run_baseline(net, train_data, test_data, settings, on_epoch)
