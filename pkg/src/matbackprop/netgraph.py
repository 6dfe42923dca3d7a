"""A small sequential layer framework with explicit caches and SGD with momentum.

Each layer maps one matrix to one matrix. ``forward`` returns ``(y, cache)``
and ``backward(cache, gy)`` returns ``(gx, param_grads)`` where
``param_grads`` lines up with ``layer.params``. Losses take the target at
forward time and start the backward pass from the scalar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ContractError, MatBackpropError, TrainingFailure
from .linalg import as_matrix
from .ncuts import AffinityModel, affinity_backward, affinity_forward, j1_backward, j1_forward, j2_backward, j2_forward
from .spectral import DEFAULT_POLICY, LOG, GapPolicy, MatrixFunctionSpec, deep_o2p_backward, deep_o2p_forward


class Layer:
    params: list[np.ndarray] = []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, gy):
        raise NotImplementedError

    def __repr__(self):
        return type(self).__name__


class Linear(Layer):
    """Row-wise affine map ``X -> X W + b``."""

    def __init__(self, weight, bias=None):
        weight = as_matrix(weight, "weight")
        bias = np.zeros((1, weight.shape[1])) if bias is None else as_matrix(bias, "bias")
        if bias.shape != (1, weight.shape[1]):
            raise ContractError(f"bias must be 1 x {weight.shape[1]}, got {bias.shape}")
        self.params = [weight.copy(), bias.copy()]

    @classmethod
    def init(cls, rng, n_in, n_out, scale=None, bias=0.0):
        scale = 1.0 / math.sqrt(n_in) if scale is None else scale
        return cls(scale * rng.standard_normal((n_in, n_out)), np.full((1, n_out), float(bias)))

    @property
    def weight(self):
        return self.params[0]

    @property
    def bias(self):
        return self.params[1]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ContractError(f"Linear expects {self.weight.shape[0]} columns, got shape {x.shape}")
        return x @ self.weight + self.bias, x

    def backward(self, x, gy):
        return gy @ self.weight.T, [x.T @ gy, gy.sum(axis=0, keepdims=True)]


class Rectifier(Layer):
    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, mask, gy):
        return np.where(mask, gy, 0.0), []


class Flatten(Layer):
    """Matrix to a single row (row-major)."""

    def forward(self, x):
        return x.reshape(1, -1), x.shape

    def backward(self, shape, gy):
        return gy.reshape(shape), []


class AppendOnes(Layer):
    """Adds a constant column of ``value``; used to keep affinities strictly positive."""

    def __init__(self, value=1.0):
        self.value = float(value)

    def forward(self, x):
        return np.hstack([x, np.full((x.shape[0], 1), self.value)]), None

    def backward(self, cache, gy):
        return gy[:, :-1], []


class Scale(Layer):
    """``x -> w * x`` with a 1 x 1 parameter ``w``."""

    def __init__(self, w=0.0):
        self.params = [np.array([[float(w)]])]

    def forward(self, x):
        return self.params[0][0, 0] * x, x

    def backward(self, x, gy):
        return self.params[0][0, 0] * gy, [np.array([[float(np.vdot(x, gy))]])]


class DeepO2P(Layer):
    """Log-covariance pooling ``F -> log(F^T F + eps I)``."""

    def __init__(self, spec: MatrixFunctionSpec = LOG, path="svd", policy: GapPolicy = DEFAULT_POLICY):
        self.spec, self.path, self.policy = spec, path, policy

    def forward(self, x):
        return deep_o2p_forward(x, self.spec, self.path, self.policy)

    def backward(self, cache, gy):
        return deep_o2p_backward(cache, gy), []

    def __repr__(self):
        return f"DeepO2P(path={self.path!r}, eps={self.spec.epsilon:g})"


class Affinity(Layer):
    """``F -> F Lambda F^T``; ``Lambda`` is a trainable parameter."""

    def __init__(self, Lambda, nonneg_guard=True):
        self.model = AffinityModel(np.array(Lambda, dtype=np.float64), nonneg_guard)
        self.params = [self.model.Lambda]

    def forward(self, x):
        return affinity_forward(x, self.model), x

    def backward(self, x, gy):
        gLambda, gF = affinity_backward(x, self.model, gy)
        return gF, [gLambda]


# -- losses ---------------------------------------------------------------------


class Loss:
    def forward(self, x, target):
        raise NotImplementedError

    def backward(self, cache):
        raise NotImplementedError

    def __repr__(self):
        return type(self).__name__


class IdentityLoss(Loss):
    """The input itself, which must be 1 x 1."""

    def forward(self, x, target=None):
        x = np.asarray(x, dtype=np.float64)
        if x.size != 1:
            raise ContractError(f"IdentityLoss needs a scalar input, got shape {x.shape}")
        return float(x.reshape(())), x.shape

    def backward(self, shape):
        return np.ones(shape)


class LogisticLoss(Loss):
    """Binary cross-entropy on a 1 x 1 logit, target in {0, 1}."""

    def forward(self, x, target):
        z = float(np.asarray(x).reshape(()))
        y = float(target)
        return float(np.logaddexp(0.0, z) - y * z), (z, y)

    def backward(self, cache):
        z, y = cache
        p = 0.5 * (1.0 + math.tanh(0.5 * z))
        return np.array([[p - y]])


class FrobeniusAlignmentLoss(Loss):
    """``1/2 ||X - T||_F^2``."""

    def forward(self, x, target):
        r = np.asarray(x, dtype=np.float64) - np.asarray(target, dtype=np.float64)
        with np.errstate(over="ignore"):
            # overflow shows up as a non-finite loss, which the pipeline reports
            return 0.5 * float(np.sum(r**2)), r

    def backward(self, r):
        return r.copy()


class J2Loss(Loss):
    """Projector alignment between an affinity ``W`` and the indicator ``E`` (target)."""

    def forward(self, W, E):
        return j2_forward(W, E)

    def backward(self, cache):
        return j2_backward(cache)


class J1Loss(Loss):
    def forward(self, W, E):
        return j1_forward(W, E)

    def backward(self, cache):
        return j1_backward(cache)


# -- pipelines --------------------------------------------------------------------


@dataclass
class Pipeline:
    layers: list[Layer]
    loss: Loss

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def predict(self, x):
        for layer in self.layers:
            x, _ = layer.forward(x)
        return x


@dataclass
class Caches:
    layer_caches: list[Any]
    loss_cache: Any
    output: np.ndarray


def pipeline_forward(p: Pipeline, x, y):
    """Returns ``(loss value, caches)``."""
    caches = []
    h = as_matrix(x, "x")
    for layer in p.layers:
        h, c = layer.forward(h)
        caches.append(c)
    value, lc = p.loss.forward(h, y)
    if not math.isfinite(value):
        raise ContractError(f"loss is not finite ({value})")
    return value, Caches(caches, lc, h)


def pipeline_backward(p: Pipeline, caches: Caches | None):
    """Returns ``(param_grads, input_grad)``; ``param_grads`` follows ``p.params``."""
    if caches is None or len(caches.layer_caches) != len(p.layers):
        raise ContractError("pipeline_backward needs the caches of a matching forward pass")
    g = p.loss.backward(caches.loss_cache)
    per_layer = []
    for layer, c in zip(reversed(p.layers), reversed(caches.layer_caches)):
        g, pg = layer.backward(c, g)
        if len(pg) != len(layer.params):
            raise ContractError(f"{layer!r} returned {len(pg)} parameter grads for {len(layer.params)} params")
        per_layer.append(pg)
    flat = [gp for pg in reversed(per_layer) for gp in pg]
    return flat, g


# -- training ---------------------------------------------------------------------


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 1
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]


def evaluate_loss(p: Pipeline, dataset) -> float:
    return float(np.mean([pipeline_forward(p, x, y)[0] for x, y in dataset]))


def sgd_train(
    p: Pipeline,
    dataset: Sequence,
    cfg: SgdConfig,
    diagnostics: Callable[[Pipeline], dict] | None = None,
    step_hook: Callable[[int, list[Caches], list[float]], None] | None = None,
    params: Sequence[np.ndarray] | None = None,
) -> TrainingLog:
    """Mini-batch SGD with classical momentum (``v = mu v - lr g; w += v``).

    Records one entry per epoch (epoch 0 is the initial state) with the mean
    loss over the whole dataset and any ``diagnostics(p)`` output.
    ``step_hook(step, caches, losses)`` sees every forward pass used for an update.
    ``params`` restricts the update to a subset of ``p.params`` (the rest stay frozen).
    """
    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    all_params = p.params
    if params is None:
        chosen = list(range(len(all_params)))
    else:
        ids = [id(w) for w in params]
        chosen = [i for i, w in enumerate(all_params) if id(w) in ids]
        if len(chosen) != len(ids):
            raise ContractError("params must be a subset of the pipeline parameters")
    params = [all_params[i] for i in chosen]
    velocity = [np.zeros_like(w) for w in params]
    log = TrainingLog()

    def record(epoch):
        rec = {"epoch": epoch, "loss": evaluate_loss(p, dataset)}
        if diagnostics is not None:
            rec.update(diagnostics(p))
        log.records.append(rec)
        return rec

    last_good = [w.copy() for w in params]
    record(0)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = [np.zeros_like(w) for w in params]
            caches, losses = [], []
            for i in batch:
                x, y = dataset[i]
                try:
                    value, c = pipeline_forward(p, x, y)
                    pg, _ = pipeline_backward(p, c)
                except MatBackpropError as exc:
                    raise TrainingFailure(f"step {step} (epoch {epoch}) failed: {exc}", epoch, last_good) from exc
                for acc, j in zip(grads, chosen):
                    acc += pg[j]
                caches.append(c)
                losses.append(value)
            if step_hook is not None:
                step_hook(step, caches, losses)
            for w, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * (g / len(batch))
                w += v
            step += 1
        if not all(np.all(np.isfinite(w)) for w in params):
            raise TrainingFailure(f"parameters diverged at epoch {epoch}", epoch, last_good)
        try:
            rec = record(epoch)
        except MatBackpropError as exc:
            raise TrainingFailure(f"evaluation failed at epoch {epoch}: {exc}", epoch, last_good) from exc
        if not math.isfinite(rec["loss"]):
            raise TrainingFailure(f"non-finite loss at epoch {epoch}", epoch, last_good)
        last_good = [w.copy() for w in params]
    return log
