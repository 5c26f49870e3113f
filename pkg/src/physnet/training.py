"""Gradient-descent training shared by every model in the package.

The optimizer loop (`minimize`) works on any loss object exposing
``evaluate(values, idx) -> (loss, grad, metrics)``; model-specific loss
objects live next to their models.  `train` is the MLP-facing wrapper
handling the common cases (plain MSE, MSE with a symmetry penalty).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingDivergedError
from .mlp import MLP, Dataset, symmetry_metric
from .tape import ParamStore


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float = 1e-3
    optimizer: str = "adam"          # "adam" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int | None = None    # None = full batch
    loss_weights: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ShapeError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ShapeError("learning rate must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ShapeError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ShapeError("batch size must be positive")
        if any(w < 0 for w in self.loss_weights.values()):
            raise ShapeError("loss weights must be nonnegative")


class AdamState:
    def __init__(self, n, cfg: TrainConfig):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.cfg = cfg

    def step(self, values, grad):
        cfg = self.cfg
        self.t += 1
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad * grad
        mhat = self.m / (1.0 - cfg.beta1**self.t)
        vhat = self.v / (1.0 - cfg.beta2**self.t)
        values -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)


class SgdState:
    def __init__(self, n, cfg: TrainConfig):
        self.cfg = cfg

    def step(self, values, grad):
        values -= self.cfg.learning_rate * grad


def minimize(loss, values0: np.ndarray, cfg: TrainConfig, n_rows: int | None = None):
    """Run the optimizer; returns (final values, per-epoch history).

    ``loss.evaluate(values, idx)`` gets ``idx=None`` in full-batch mode or
    an index array per mini-batch.  History records one entry per epoch
    with the (batch-size weighted) mean loss and any metrics the loss
    reports on its last call of the epoch.
    """
    values = values0.copy()
    state_cls = AdamState if cfg.optimizer == "adam" else SgdState
    state = state_cls(values.size, cfg)
    history = []
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        if cfg.batch_size is None or n_rows is None or cfg.batch_size >= n_rows:
            loss_val, grad, metrics = loss.evaluate(values, None)
            epoch_loss = loss_val
            if not np.isfinite(epoch_loss):
                raise TrainingDivergedError(epoch, epoch_loss)
            state.step(values, grad)
        else:
            perm = rng.permutation(n_rows)
            total, metrics = 0.0, {}
            for start in range(0, n_rows, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                loss_val, grad, metrics = loss.evaluate(values, idx)
                if not np.isfinite(loss_val):
                    raise TrainingDivergedError(epoch, loss_val)
                state.step(values, grad)
                total += loss_val * idx.size
            epoch_loss = total / n_rows
        history.append({"epoch": epoch, "loss": float(epoch_loss), **metrics})
    return values, history


class MseLoss:
    """Mean squared error of model predictions against dataset targets.

    Optionally monitors (without penalizing) the symmetry metric on the
    training inputs' mirrored pairs.
    """

    def __init__(self, model: MLP, data: Dataset, monitor_parity: str | None = None):
        self.model = model
        self.data = data
        self.monitor_parity = monitor_parity

    def evaluate(self, values, idx):
        model = self.model.with_params(
            ParamStore(self.model.params.shapes, values)
        )
        X = self.data.inputs if idx is None else self.data.inputs[idx]
        T = self.data.targets if idx is None else self.data.targets[idx]
        y, state = model.predict_with_state(X)
        resid = y - T
        loss = float(np.mean(resid**2))
        seed = (2.0 / resid.size) * resid
        grad = model.param_vjp(X, seed, state)
        metrics = {}
        if self.monitor_parity is not None:
            metrics["symmetry_metric"] = symmetry_metric(
                model, self.data.inputs, self.monitor_parity
            )
        return loss, grad, metrics


class SymmetryRegularizedMse:
    """MSE plus weight * symmetry metric evaluated on mirrored inputs."""

    def __init__(self, model: MLP, data: Dataset, parity: str, weight: float = 1.0):
        if parity not in ("even", "odd"):
            raise ShapeError(f"parity must be 'even' or 'odd', got {parity!r}")
        self.model = model
        self.data = data
        self.parity = parity
        self.weight = float(weight)

    def evaluate(self, values, idx):
        model = self.model.with_params(
            ParamStore(self.model.params.shapes, values)
        )
        X = self.data.inputs if idx is None else self.data.inputs[idx]
        T = self.data.targets if idx is None else self.data.targets[idx]
        y, state = model.predict_with_state(X)
        resid = y - T
        mse = float(np.mean(resid**2))
        seed = (2.0 / resid.size) * resid
        grad = model.param_vjp(X, seed, state)

        sign = -1.0 if self.parity == "even" else +1.0
        ym, state_m = model.predict_with_state(-X)
        combo = y + sign * ym
        metric = float(np.mean(combo**2))
        seed_c = (2.0 / combo.size) * combo
        grad += self.weight * model.param_vjp(X, seed_c, state)
        grad += (self.weight * sign) * model.param_vjp(-X, seed_c, state_m)
        return (
            mse + self.weight * metric,
            grad,
            {"symmetry_metric": metric, "mse": mse},
        )


def resolve_loss(model: MLP, data: Dataset, loss_spec, cfg: TrainConfig,
                 monitor_parity: str | None = None):
    if isinstance(loss_spec, str):
        if loss_spec == "mse":
            return MseLoss(model, data, monitor_parity=monitor_parity)
        if loss_spec in ("mse+even_symmetry", "mse+odd_symmetry"):
            parity = "even" if "even" in loss_spec else "odd"
            weight = cfg.loss_weights.get("symmetry", 1.0)
            return SymmetryRegularizedMse(model, data, parity, weight)
        raise ShapeError(f"unknown loss spec {loss_spec!r}")
    return loss_spec


def train(model: MLP, data: Dataset, loss_spec, cfg: TrainConfig,
          monitor_parity: str | None = None):
    """Train an MLP; returns (trained model, history).

    Deterministic given the config seed; raises TrainingDivergedError with
    the offending epoch if the loss leaves the finite range.
    """
    loss = resolve_loss(model, data, loss_spec, cfg, monitor_parity)
    values, history = minimize(loss, model.params.values, cfg, n_rows=len(data))
    trained = model.with_params(ParamStore(model.params.shapes, values))
    return trained, history
