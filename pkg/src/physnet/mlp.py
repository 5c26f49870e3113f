"""MLP models: plain feed-forward nets and parity-enforcing hub variants.

A hub model evaluates the shared stack at +t and -t and combines the two
outputs, which makes the prescribed symmetry hold by construction:

* even hub:  f(t) = (F(t) + F(-t)) / 2  so f(t) = f(-t) exactly,
* odd hub:   f(t) = (F(t) - F(-t)) / 2  so f(t) = -f(-t) and f(0) = 0.

Combining after the final affine layer is algebraically identical to
forming the even/odd parts of the last hidden layer with shared weights;
the even combination keeps the output bias once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .activations import ACTIVATION_NAMES
from .errors import ShapeError

PLAIN, EVEN_HUB, ODD_HUB = "plain", "even_hub", "odd_hub"
OUTPUT_MODES = (PLAIN, EVEN_HUB, ODD_HUB)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MLPConfig:
    layer_sizes: tuple
    activation: str = "tanh"
    output_mode: str = PLAIN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 3:
            raise ShapeError("need at least one hidden layer: [in, hidden..., out]")
        if any(s < 1 for s in self.layer_sizes):
            raise ShapeError("layer sizes must be positive")
        if self.activation not in ACTIVATION_NAMES:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.output_mode not in OUTPUT_MODES:
            raise ShapeError(f"unknown output mode {self.output_mode!r}")
        if self.output_mode != PLAIN and (
            self.layer_sizes[0] != 1 or self.layer_sizes[-1] != 1
        ):
            raise ShapeError("hub modes require scalar input and scalar output")

    @property
    def param_shapes(self):
        sizes = self.layer_sizes
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]


def init_params(config: MLPConfig) -> tp.ParamStore:
    """Per-layer uniform init in +-sqrt(6/(fan_in+fan_out)) for weights and biases."""
    rng = np.random.default_rng(config.seed)
    ps = tp.ParamStore(config.param_shapes)
    for layer, (out, inp) in enumerate(ps.shapes):
        bound = np.sqrt(6.0 / (inp + out))
        ps.weight(layer)[:] = rng.uniform(-bound, bound, size=(out, inp))
        ps.bias(layer)[:] = rng.uniform(-bound, bound, size=out)
    return ps


def build_tape(config: MLPConfig) -> tp.Tape:
    """Forward tape of the plain stack: affine/activation alternation."""
    t = tp.Tape(config.layer_sizes[0], config.param_shapes)
    node = 0
    n_layers = len(config.param_shapes)
    for layer in range(n_layers):
        node = t.affine(node, layer)
        if layer < n_layers - 1:
            node = t.act(node, config.activation)
    t.set_output(node)
    return t


class MLP:
    """A configured network with its parameters and cached tapes."""

    def __init__(self, config: MLPConfig, params: tp.ParamStore | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        expected = sum(o * i + o for o, i in config.param_shapes)
        if self.params.n_params != expected:
            raise ShapeError(
                f"parameter count {self.params.n_params} does not match "
                f"configured shape (expected {expected})"
            )
        self.tape = build_tape(config)
        self._grad_tape = None

    @classmethod
    def create(cls, layer_sizes, activation="tanh", output_mode=PLAIN, seed=0):
        return cls(MLPConfig(tuple(layer_sizes), activation, output_mode, seed))

    @property
    def grad_tape(self) -> tp.Tape:
        """Tape computing the input gradient; built once on demand."""
        if self._grad_tape is None:
            self._grad_tape = tp.grad_graph(self.tape)
        return self._grad_tape

    def with_params(self, params: tp.ParamStore) -> "MLP":
        clone = MLP.__new__(MLP)
        clone.config = self.config
        clone.params = params
        clone.tape = self.tape
        clone._grad_tape = self._grad_tape
        return clone

    # -- evaluation ------------------------------------------------------

    def forward(self, x):
        """Plain forward pass; rejects hub configurations."""
        if self.config.output_mode != PLAIN:
            raise ShapeError("forward() is for plain models; use the hub evaluators")
        return tp.eval_tape(self.tape, self.params, x)

    def forward_even_hub(self, t):
        if self.config.output_mode != EVEN_HUB:
            raise ShapeError("model is not configured with an even hub output")
        return self._hub(t, +1.0)

    def forward_odd_hub(self, t):
        if self.config.output_mode != ODD_HUB:
            raise ShapeError("model is not configured with an odd hub output")
        return self._hub(t, -1.0)

    def _hub(self, t, sign):
        t_arr = np.asarray(t, dtype=np.float64)
        scalar = t_arr.ndim == 0
        x = t_arr.reshape(-1, 1)
        plus = tp.eval_tape(self.tape, self.params, x)
        minus = tp.eval_tape(self.tape, self.params, -x)
        out = 0.5 * (plus + sign * minus)
        return float(out[0, 0]) if scalar else out

    def predict(self, x):
        """Mode-appropriate evaluation, batched."""
        if self.config.output_mode == PLAIN:
            return self.forward(x)
        x_arr = np.asarray(x, dtype=np.float64)
        if x_arr.ndim == 0:
            x_arr = x_arr.reshape(1)
        sign = +1.0 if self.config.output_mode == EVEN_HUB else -1.0
        return self._hub(x_arr.reshape(-1), sign)

    def predict_with_state(self, X):
        """Batched prediction plus the executor state needed for param_vjp."""
        X = np.asarray(X, dtype=np.float64)
        if self.config.output_mode == PLAIN:
            y, saved = tp.forward_saved(self.tape, self.params, X)
            return y, (saved,)
        yp, sp = tp.forward_saved(self.tape, self.params, X)
        ym, sm = tp.forward_saved(self.tape, self.params, -X)
        sign = +1.0 if self.config.output_mode == EVEN_HUB else -1.0
        return 0.5 * (yp + sign * ym), (sp, sm, X)

    def param_vjp(self, X, seed, state):
        """Parameter gradient of seed . predict(X), reusing forward state."""
        if self.config.output_mode == PLAIN:
            g, _ = tp.vjp_saved(self.tape, self.params, X, seed, state[0])
            return g
        sp, sm, X = state
        sign = +1.0 if self.config.output_mode == EVEN_HUB else -1.0
        gp, _ = tp.vjp_saved(self.tape, self.params, X, 0.5 * seed, sp)
        gm, _ = tp.vjp_saved(self.tape, self.params, -X, (0.5 * sign) * seed, sm)
        return gp + gm

    # -- serialization ---------------------------------------------------

    def to_json_dict(self, model_kind=None):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "layer_sizes": list(self.config.layer_sizes),
            "activation": self.config.activation,
            "output_mode": self.config.output_mode,
            "params": self.params.values.tolist(),
        }
        if model_kind is not None:
            doc["model_kind"] = model_kind
        return doc

    def save(self, path, model_kind=None):
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_json_dict(model_kind), fh)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ShapeError(f"unsupported model schema version {doc.get('schema_version')!r}")
        config = MLPConfig(
            tuple(doc["layer_sizes"]), doc["activation"], doc["output_mode"]
        )
        params = tp.ParamStore(config.param_shapes, np.array(doc["params"], dtype=np.float64))
        return cls(config, params)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass
class Dataset:
    """Paired inputs/targets with optional provenance metadata."""

    inputs: np.ndarray
    targets: np.ndarray
    noise_sigma: float | None = None
    generator: str | None = None

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        self.inputs = inputs.reshape(-1, 1) if inputs.ndim == 1 else inputs
        self.targets = targets.reshape(-1, 1) if targets.ndim == 1 else targets
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError("inputs and targets must have the same number of rows")
        if not (np.isfinite(self.inputs).all() and np.isfinite(self.targets).all()):
            raise ShapeError("dataset contains non-finite values")

    def __len__(self):
        return self.inputs.shape[0]


def symmetry_metric(model: MLP, xs, parity: str) -> float:
    """Mean squared deviation from exact parity on mirrored input pairs.

    parity="even" measures mean((f(x) - f(-x))^2); parity="odd" measures
    mean((f(x) + f(-x))^2).
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ShapeError("symmetry metric needs at least one input")
    if parity not in ("even", "odd"):
        raise ShapeError(f"parity must be 'even' or 'odd', got {parity!r}")
    if xs.ndim == 1 and model.config.layer_sizes[0] == 1:
        xs = xs.reshape(-1, 1)
    if model.config.output_mode == PLAIN:
        plus = model.forward(xs)
        minus = model.forward(-xs)
    else:
        plus = model.predict(xs.reshape(-1))
        minus = model.predict(-xs.reshape(-1))
    combo = plus - minus if parity == "even" else plus + minus
    return float(np.mean(combo**2))
