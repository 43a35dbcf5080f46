"""Relaxed variable splitting over a model's parameters.

The optimizer alternates an exact thresholding step on an auxiliary copy
``u`` of each selected weight tensor with a gradient step on the live
weights ``w`` that is pulled toward ``u`` by the splitting term
(beta/2) * ||w - u||^2.  Any model exposing ``parameters()`` (a dict of
live float64 arrays keyed 'layer.weight' / 'layer.bias') and
``loss_and_grads(X, y)`` can be trained; the CNN in ``rvsm.nn`` and the
tiny least-squares model below both qualify.

The recorded objective is the split Lagrangian

    L(u, w) = f(w) + lam * P(u) + (beta/2) * ||w - u||^2

evaluated once per iteration at (u_next, w_current); in full-batch mode
it is nonincreasing for learning rates below the usual smoothness bound,
which the test suite monitors.  At a stationary point the iterates settle
where u equals the threshold of w and the pull balances the gradient,

    grad f(w) + beta * (w - u) = 0,

so the reported gradient residual is the norm of that left-hand side over
the thresholded layers.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .nn import _softmax_cross_entropy_batch
from .prox import PenaltySpec, penalty_value, threshold
from .rng import stream

EVAL_CHUNK = 32  # images per forward pass when evaluating


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration, message):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class RvsmConfig:
    """Hyperparameters for one training run.

    ``thresholded_layers`` names the layers whose weight tensor is split;
    biases and all other layers follow plain SGD.  The penalty weight
    lives inside ``penalty``; the threshold level is gamma = lam / beta,
    always recomputed.
    """

    penalty: PenaltySpec
    eta: float = 0.01
    beta: float = 0.1
    thresholded_layers: tuple = ("dense",)
    normalize_w: bool = False
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        object.__setattr__(self, "thresholded_layers", tuple(self.thresholded_layers))

    @property
    def lam(self) -> float:
        return self.penalty.lam

    @property
    def gamma(self) -> float:
        return self.lam / self.beta


@dataclass
class RvsmState:
    """Auxiliary variables and traces accumulated during training."""

    u: dict
    iteration: int = 0
    lagrangian_trace: list = field(default_factory=list)  # (iteration, L value)
    loss_trace: list = field(default_factory=list)        # (epoch, train, test)


class EquilibriumReport(NamedTuple):
    u_residual: float     # sup norm of u - T(w)
    grad_residual: float  # l2 norm of grad f(w) + beta * (w - u)


class EpochMetrics(NamedTuple):
    epoch: int
    train_loss: float
    test_loss: float
    accuracy: float
    sparsity: float


def u_step(config: RvsmConfig, w: np.ndarray) -> np.ndarray:
    """Exact minimizer of the Lagrangian in u: the penalty's threshold of w."""
    if config.lam == 0:
        return np.array(w, copy=True)
    return threshold(config.penalty, config.gamma, w)


def w_step(config: RvsmConfig, w, u_next, grad_f):
    """Gradient step on f plus the pull toward u; optional unit normalization."""
    w_hat = w - config.eta * grad_f - (config.eta * config.beta) * (w - u_next)
    if config.normalize_w:
        norm = np.linalg.norm(w_hat)
        if norm == 0:
            raise ValueError("cannot normalize a zero weight vector")
        return w_hat / norm
    return w_hat


def lagrangian_value(config: RvsmConfig, f_value: float, u_map: dict, w_map: dict) -> float:
    """f + lam * P(u) + (beta/2) * sum over thresholded layers of ||w - u||^2."""
    total = f_value
    for name, u in u_map.items():
        w = w_map[name]
        if w.shape != u.shape:
            raise ValueError(f"u and w disagree on shape for layer {name!r}")
        total += penalty_value(config.penalty, u)
        total += 0.5 * config.beta * float(np.sum((w - u) ** 2))
    return total


def _weight_key(name: str) -> str:
    return f"{name}.weight"


def _check_thresholded(config, params):
    for name in config.thresholded_layers:
        if _weight_key(name) not in params:
            raise ValueError(f"thresholded layer {name!r} is not a parameter of the model")


def u_sparsity(state: RvsmState) -> float:
    """Fraction of exact zeros across all auxiliary tensors."""
    total = sum(u.size for u in state.u.values())
    zeros = sum(int(np.count_nonzero(u == 0)) for u in state.u.values())
    return zeros / total if total else 0.0


@contextmanager
def deployed_weights(model, u_map: dict):
    """Temporarily substitute u for the thresholded weight tensors.

    The deployed model is (w for untouched layers, u elsewhere); this
    swaps in place and restores on exit, so no parameter copies leak.
    """
    params = model.parameters()
    saved = {}
    try:
        for name, u in u_map.items():
            key = _weight_key(name)
            saved[key] = params[key].copy()
            params[key][...] = u
        yield model
    finally:
        for key, w in saved.items():
            params[key][...] = w


def evaluate(model, data, chunk: int = EVAL_CHUNK):
    """Mean cross-entropy and accuracy of the model's current parameters."""
    X, y = data
    n = len(y)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, chunk):
        xs, ys = X[start : start + chunk], y[start : start + chunk]
        logits = model.forward(xs)
        loss, _ = _softmax_cross_entropy_batch(logits, ys)
        loss_sum += loss * len(ys)
        correct += int((logits.argmax(axis=1) == ys).sum())
    return loss_sum / n, correct / n


def _epoch_metrics(model, state, test_data, epoch, train_loss):
    test_loss = float("nan")
    acc = float("nan")
    if test_data is not None:
        with deployed_weights(model, state.u):
            test_loss, acc = evaluate(model, test_data)
    state.loss_trace.append((epoch, train_loss, test_loss))
    return EpochMetrics(epoch, train_loss, test_loss, acc, u_sparsity(state))


def rvsm_train(model, data, config: RvsmConfig, test_data=None):
    """Run the splitting loop; returns (model, state, per-epoch metrics).

    Each minibatch iteration thresholds u from the current weights, takes
    the gradient at those weights, then moves them; untouched layers get
    plain SGD.  With lam = 0 the trajectory is bit-identical to SGD.
    """
    X, y = data
    n = len(y)
    if n == 0:
        raise ValueError("training data is empty")
    params = model.parameters()
    _check_thresholded(config, params)
    wkeys = {_weight_key(name): name for name in config.thresholded_layers}
    state = RvsmState(u={})
    shuffle = stream(config.seed, "shuffle")
    metrics = []
    iteration = 0
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            for name in config.thresholded_layers:
                state.u[name] = u_step(config, params[_weight_key(name)])
            loss, grads = model.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(iteration, f"non-finite loss at iteration {iteration}")
            w_map = {name: params[_weight_key(name)] for name in config.thresholded_layers}
            state.lagrangian_trace.append(
                (iteration, lagrangian_value(config, loss, state.u, w_map))
            )
            for key, g in grads.items():
                if key in wkeys:
                    name = wkeys[key]
                    params[key][...] = w_step(config, params[key], state.u[name], g)
                else:
                    params[key] -= config.eta * g
            epoch_loss += loss
            batches += 1
            iteration += 1
        state.iteration = iteration
        metrics.append(_epoch_metrics(model, state, test_data, epoch, epoch_loss / batches))
    return model, state, metrics


def penalty_subgradient(spec: PenaltySpec, w):
    """Subgradient of the unit-weight penalty, 0 at the origin."""
    if spec.kind == "l1":
        return np.sign(w)
    if spec.kind == "tl1":
        a = spec.a
        return a * (a + 1.0) * np.sign(w) / (a + np.abs(w)) ** 2
    raise ValueError("the l0 penalty has zero gradient almost everywhere; use rvsm_train")


def penalized_sgd_train(model, data, config: RvsmConfig, test_data=None):
    """Baseline: SGD directly on f(w) + lam * P(w) for the thresholded layers.

    Only l1 and tl1 are differentiable enough to accept; the returned
    per-epoch sparsity counts exact zeros in w, which plain SGD
    essentially never produces.
    """
    if config.penalty.kind == "l0":
        raise ValueError("penalized SGD does not support the l0 penalty")
    X, y = data
    n = len(y)
    if n == 0:
        raise ValueError("training data is empty")
    params = model.parameters()
    _check_thresholded(config, params)
    wkeys = {_weight_key(name) for name in config.thresholded_layers}
    shuffle = stream(config.seed, "shuffle")
    metrics = []
    iteration = 0
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = model.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(iteration, f"non-finite loss at iteration {iteration}")
            for key, g in grads.items():
                if key in wkeys:
                    g = g + config.lam * penalty_subgradient(config.penalty, params[key])
                params[key] -= config.eta * g
            epoch_loss += loss
            batches += 1
            iteration += 1
        test_loss = float("nan")
        acc = float("nan")
        if test_data is not None:
            test_loss, acc = evaluate(model, test_data)
        zeros = sum(int(np.count_nonzero(params[k] == 0)) for k in wkeys)
        total = sum(params[k].size for k in wkeys)
        metrics.append(
            EpochMetrics(epoch, epoch_loss / batches, test_loss, acc, zeros / total)
        )
    return model, metrics


def full_batch_gradient(model, data, chunk: int = EVAL_CHUNK):
    """Gradient of the mean loss over all samples, fixed-order accumulation."""
    X, y = data
    n = len(y)
    if n == 0:
        raise ValueError("cannot take a gradient over an empty dataset")
    total_loss = 0.0
    total_grads = None
    for start in range(0, n, chunk):
        xs, ys = X[start : start + chunk], y[start : start + chunk]
        loss, grads = model.loss_and_grads(xs, ys)
        scale = len(ys) / n
        total_loss += loss * scale
        if total_grads is None:
            total_grads = {k: g * scale for k, g in grads.items()}
        else:
            for k, g in grads.items():
                total_grads[k] += g * scale
    return total_loss, total_grads


def equilibrium_residuals(config: RvsmConfig, model, state: RvsmState, data) -> EquilibriumReport:
    """How far the final (u, w) sit from the stationarity conditions.

    ``u_residual`` is the sup-norm gap between the stored u and a fresh
    threshold of the current weights; ``grad_residual`` is the l2 norm of
    grad f(w) + beta * (w - u) over the thresholded layers, using the
    full-dataset gradient.
    """
    params = model.parameters()
    _check_thresholded(config, params)
    _, grads = full_batch_gradient(model, data)
    u_res = 0.0
    sq = 0.0
    for name in config.thresholded_layers:
        key = _weight_key(name)
        w = params[key]
        u = state.u[name]
        u_res = max(u_res, float(np.max(np.abs(u - u_step(config, w)))) if u.size else 0.0)
        resid = grads[key] + config.beta * (w - u)
        sq += float(np.sum(resid**2))
    return EquilibriumReport(u_res, float(np.sqrt(sq)))


class LeastSquaresModel:
    """One linear map under half mean-squared error.

    The minimal smooth model used to watch the optimizer itself: its
    full-batch loss is quadratic, so descent and stationarity behave
    exactly as the theory predicts.
    """

    def __init__(self, weights):
        self.w = np.array(weights, dtype=np.float64)

    def parameters(self):
        return {"linear.weight": self.w}

    def forward(self, X):
        return X @ self.w

    def loss_and_grads(self, X, y):
        r = X @ self.w - y
        n = len(y)
        loss = 0.5 * float(r @ r) / n
        return loss, {"linear.weight": X.T @ r / n}
