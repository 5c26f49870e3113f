"""Hamiltonian neural network and direct-derivative baseline.

The HNN is a scalar energy network H(q, p); its vector field is the
symplectic gradient (dH/dp, -dH/dq) computed through the engine's
gradient graph, so the field is exactly divergence-free by construction.
Training matches that field against derivative targets, which requires
parameter gradients of input gradients (one more reverse pass through
the gradient graph).
"""

from __future__ import annotations

import json

import numpy as np

from . import tape as tp
from .errors import ShapeError
from .mlp import MLP, Dataset, MLPConfig
from .training import MseLoss, TrainConfig, minimize

HNN_SHAPE = (2, 200, 200, 1)
BASELINE_SHAPE = (2, 200, 200, 2)


def field_from_energy_tape(energy_tape: tp.Tape, params: tp.ParamStore):
    """ODE field (t, y) -> (dH/dp, -dH/dq) for any scalar energy tape."""
    if energy_tape.input_dim != 2 or energy_tape.output_width != 1:
        raise ShapeError("energy tape must map (q, p) to a scalar")
    grad_tape = tp.grad_graph(energy_tape)

    def field(t, y):
        g = tp.eval_tape(grad_tape, params, y)
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    return field


class HnnModel:
    """Scalar energy network over canonical coordinates (q, p)."""

    def __init__(self, mlp: MLP):
        if mlp.config.layer_sizes[0] != 2 or mlp.config.layer_sizes[-1] != 1:
            raise ShapeError("HNN requires input arity 2 and scalar output")
        self.mlp = mlp

    @classmethod
    def create(cls, activation="tanh", seed=0, hidden=HNN_SHAPE[1:-1]):
        sizes = (2, *hidden, 1)
        return cls(MLP.create(sizes, activation=activation, seed=seed))

    def energy(self, q, p):
        """H value; meaningful only up to an additive constant."""
        out = self.mlp.forward(np.array([q, p], dtype=np.float64))
        return float(out[0])

    def energy_batch(self, states):
        return self.mlp.forward(states)[:, 0]

    def input_grads(self, states):
        """(dH/dq, dH/dp) rows for a batch of states."""
        return tp.eval_tape(self.mlp.grad_tape, self.mlp.params, states)

    def dynamics(self, state):
        """(dq/dt, dp/dt) = (dH/dp, -dH/dq) at one state or a batch."""
        g = tp.eval_tape(self.mlp.grad_tape, self.mlp.params, state)
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def ode_field(self):
        return lambda t, y: self.dynamics(y)

    def save(self, path):
        self.mlp.save(path, model_kind="hnn")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("model_kind") != "hnn":
            raise ShapeError(f"model kind {doc.get('model_kind')!r} is not 'hnn'")
        return cls(MLP.from_json_dict(doc))


def hnn_loss(model: HnnModel, states, targets) -> float:
    """Sum of the two mean-squared Hamilton-equation residuals.

    states rows are (q, p); targets rows are (dq/dt, dp/dt).
    """
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if states.size == 0:
        raise ShapeError("empty batch")
    g = model.input_grads(states)
    r_q = g[:, 1] - targets[:, 0]
    r_p = g[:, 0] + targets[:, 1]
    return float(np.mean(r_q**2) + np.mean(r_p**2))


class HnnLoss:
    """Trainable Hamilton-equation residual with optional held-out metric."""

    def __init__(self, model: HnnModel, states, targets,
                 test_states=None, test_targets=None):
        self.model = model
        self.states = np.asarray(states, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        if self.states.shape != self.targets.shape or self.states.shape[1] != 2:
            raise ShapeError("states and targets must both be (n, 2)")
        self.test_states = test_states
        self.test_targets = test_targets

    def evaluate(self, values, idx):
        mlp = self.model.mlp
        params = tp.ParamStore(mlp.params.shapes, values)
        X = self.states if idx is None else self.states[idx]
        T = self.targets if idx is None else self.targets[idx]
        n = X.shape[0]
        g, saved = tp.forward_saved(mlp.grad_tape, params, X)
        r_q = g[:, 1] - T[:, 0]
        r_p = g[:, 0] + T[:, 1]
        loss = float(np.mean(r_q**2) + np.mean(r_p**2))
        seed = np.column_stack([(2.0 / n) * r_p, (2.0 / n) * r_q])
        grad, _ = tp.vjp_saved(mlp.grad_tape, params, X, seed, saved)
        metrics = {}
        if self.test_states is not None:
            trial = HnnModel(mlp.with_params(params))
            metrics["test_loss"] = hnn_loss(trial, self.test_states, self.test_targets)
        return loss, grad, metrics


def train_hnn(model: HnnModel, states, targets, cfg: TrainConfig,
              holdout_fraction: float = 0.0):
    """Train the energy network against derivative targets.

    With a positive holdout fraction, that share of the data is held out
    (seeded random split) and scored as "test_loss" each epoch; training
    uses the remainder.
    """
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if holdout_fraction > 0.0:
        rng = np.random.default_rng(cfg.seed)
        n = states.shape[0]
        perm = rng.permutation(n)
        n_test = max(1, int(round(holdout_fraction * n)))
        test_idx, train_idx = perm[:n_test], perm[n_test:]
        loss = HnnLoss(model, states[train_idx], targets[train_idx],
                       states[test_idx], targets[test_idx])
        n_rows = train_idx.size
    else:
        loss = HnnLoss(model, states, targets)
        n_rows = states.shape[0]
    values, history = minimize(loss, model.mlp.params.values, cfg, n_rows=n_rows)
    trained = HnnModel(model.mlp.with_params(tp.ParamStore(model.mlp.params.shapes, values)))
    return trained, history


class BaselineModel:
    """MLP that outputs (dq/dt, dp/dt) directly."""

    def __init__(self, mlp: MLP):
        if mlp.config.layer_sizes[0] != 2 or mlp.config.layer_sizes[-1] != 2:
            raise ShapeError("baseline requires input arity 2 and output arity 2")
        self.mlp = mlp

    @classmethod
    def create(cls, activation="tanh", seed=0, hidden=BASELINE_SHAPE[1:-1]):
        sizes = (2, *hidden, 2)
        return cls(MLP.create(sizes, activation=activation, seed=seed))

    def dynamics(self, state):
        return self.mlp.forward(np.asarray(state, dtype=np.float64))

    def ode_field(self):
        return lambda t, y: self.dynamics(y)

    def save(self, path):
        self.mlp.save(path, model_kind="baseline")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("model_kind") != "baseline":
            raise ShapeError(f"model kind {doc.get('model_kind')!r} is not 'baseline'")
        return cls(MLP.from_json_dict(doc))


def train_baseline(model: BaselineModel, states, targets, cfg: TrainConfig):
    """Plain MSE fit of the direct-derivative network."""
    data = Dataset(np.asarray(states), np.asarray(targets))
    loss = MseLoss(model.mlp, data)
    values, history = minimize(loss, model.mlp.params.values, cfg, n_rows=len(data))
    trained = BaselineModel(model.mlp.with_params(tp.ParamStore(model.mlp.params.shapes, values)))
    return trained, history


def load_dynamics_model(path):
    """Load either model kind from its JSON document."""
    with open(path) as fh:
        doc = json.load(fh)
    kind = doc.get("model_kind")
    if kind == "hnn":
        return HnnModel(MLP.from_json_dict(doc))
    if kind == "baseline":
        return BaselineModel(MLP.from_json_dict(doc))
    raise ShapeError(f"unknown model_kind {kind!r}")
