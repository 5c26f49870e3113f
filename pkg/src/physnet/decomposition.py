"""Even-odd decomposition network.

Two parallel scalar MLP branches fit the target through their sum while
loss penalties push one branch toward even symmetry and the other toward
odd symmetry.  After training, the branches expose the even and odd
components of the learned function.  Works on centered data; the analytic
reference decomposition is even(x) = (f(x)+f(-x))/2, odd = (f(x)-f(-x))/2.
"""

from __future__ import annotations

import json

import numpy as np

from . import tape as tp
from .errors import ShapeError
from .mlp import MLP, Dataset
from .training import TrainConfig, minimize

DEFAULT_HIDDEN = (32, 32)


class DecompositionNet:
    def __init__(self, even_branch: MLP, odd_branch: MLP,
                 lambda_even: float = 1.0, lambda_odd: float = 1.0):
        for branch, name in ((even_branch, "even"), (odd_branch, "odd")):
            sizes = branch.config.layer_sizes
            if sizes[0] != 1 or sizes[-1] != 1:
                raise ShapeError(f"{name} branch must be scalar-in/scalar-out")
        if lambda_even < 0 or lambda_odd < 0:
            raise ShapeError("branch loss weights must be nonnegative")
        self.even_branch = even_branch
        self.odd_branch = odd_branch
        self.lambda_even = float(lambda_even)
        self.lambda_odd = float(lambda_odd)

    @classmethod
    def create(cls, hidden=DEFAULT_HIDDEN, activation="tanh", seed=0,
               lambda_even=1.0, lambda_odd=1.0):
        sizes = (1, *hidden, 1)
        return cls(
            MLP.create(sizes, activation=activation, seed=seed),
            MLP.create(sizes, activation=activation, seed=seed + 1),
            lambda_even,
            lambda_odd,
        )

    # -- packed parameter vector over both branches -----------------------

    @property
    def packed_values(self):
        return np.concatenate([self.even_branch.params.values, self.odd_branch.params.values])

    def unpack(self, values):
        n_even = self.even_branch.params.n_params
        even = tp.ParamStore(self.even_branch.params.shapes, values[:n_even])
        odd = tp.ParamStore(self.odd_branch.params.shapes, values[n_even:])
        return even, odd

    def with_values(self, values):
        even, odd = self.unpack(values)
        return DecompositionNet(
            self.even_branch.with_params(even),
            self.odd_branch.with_params(odd),
            self.lambda_even,
            self.lambda_odd,
        )

    def save(self, path):
        doc = {
            "schema_version": 1,
            "model_kind": "decomposition",
            "lambda_even": self.lambda_even,
            "lambda_odd": self.lambda_odd,
            "even": self.even_branch.to_json_dict(),
            "odd": self.odd_branch.to_json_dict(),
        }
        with open(path, "w", newline="\n") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("model_kind") != "decomposition":
            raise ShapeError(f"model kind {doc.get('model_kind')!r} is not 'decomposition'")
        return cls(
            MLP.from_json_dict(doc["even"]),
            MLP.from_json_dict(doc["odd"]),
            doc["lambda_even"],
            doc["lambda_odd"],
        )


def decomp_forward(net: DecompositionNet, x):
    """(y_even, y_odd, y_hat) at a scalar or batch of scalars."""
    x_arr = np.asarray(x, dtype=np.float64)
    scalar = x_arr.ndim == 0
    col = x_arr.reshape(-1, 1)
    y_even = net.even_branch.forward(col)[:, 0]
    y_odd = net.odd_branch.forward(col)[:, 0]
    y_hat = y_even + y_odd
    if scalar:
        return float(y_even[0]), float(y_odd[0]), float(y_hat[0])
    return y_even, y_odd, y_hat


def decomp_loss(net: DecompositionNet, batch: Dataset) -> float:
    """Fit MSE plus the weighted branch parity penalties."""
    if len(batch) == 0:
        raise ShapeError("empty batch")
    x = batch.inputs[:, 0]
    y = batch.targets[:, 0]
    y_even, y_odd, y_hat = decomp_forward(net, x)
    ye_m, yo_m, _ = decomp_forward(net, -x)
    fit = np.mean((y_hat - y) ** 2)
    even_pen = np.mean((y_even - ye_m) ** 2)
    odd_pen = np.mean((y_odd + yo_m) ** 2)
    return float(fit + net.lambda_even * even_pen + net.lambda_odd * odd_pen)


class DecompositionLoss:
    """decomp_loss with gradients over the packed branch parameters."""

    def __init__(self, net: DecompositionNet, data: Dataset):
        self.net = net
        self.data = data

    def evaluate(self, values, idx):
        net = self.net.with_values(values)
        X = self.data.inputs if idx is None else self.data.inputs[idx]
        Y = self.data.targets if idx is None else self.data.targets[idx]
        n = X.shape[0]
        even, odd = net.even_branch, net.odd_branch

        # one stacked pass per branch evaluates +x and -x together
        Xpm = np.vstack([X, -X])
        ye_all, se = tp.forward_saved(even.tape, even.params, Xpm)
        yo_all, so = tp.forward_saved(odd.tape, odd.params, Xpm)
        ye, yem = ye_all[:n], ye_all[n:]
        yo, yom = yo_all[:n], yo_all[n:]

        resid = ye + yo - Y
        c_even = ye - yem
        c_odd = yo + yom
        loss = float(
            np.mean(resid**2)
            + net.lambda_even * np.mean(c_even**2)
            + net.lambda_odd * np.mean(c_odd**2)
        )

        seed_fit = (2.0 / resid.size) * resid
        seed_e = (2.0 * net.lambda_even / c_even.size) * c_even
        seed_o = (2.0 * net.lambda_odd / c_odd.size) * c_odd

        ge = tp.vjp_saved(even.tape, even.params, Xpm,
                          np.vstack([seed_fit + seed_e, -seed_e]), se)[0]
        go = tp.vjp_saved(odd.tape, odd.params, Xpm,
                          np.vstack([seed_fit + seed_o, seed_o]), so)[0]

        metrics = {
            "fit_mse": float(np.mean(resid**2)),
            "even_penalty": float(np.mean(c_even**2)),
            "odd_penalty": float(np.mean(c_odd**2)),
        }
        return loss, np.concatenate([ge, go]), metrics


def train_decomposition(net: DecompositionNet, data: Dataset, cfg: TrainConfig):
    loss = DecompositionLoss(net, data)
    values, history = minimize(loss, net.packed_values, cfg, n_rows=len(data))
    return net.with_values(values), history


def decompose(net: DecompositionNet, xs, targets=None):
    """Component table for trained nets: columns x, y_even, y_odd, y_hat
    (plus target when provided)."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    y_even, y_odd, y_hat = decomp_forward(net, xs)
    table = {"x": xs, "y_even": y_even, "y_odd": y_odd, "y_hat": y_hat}
    if targets is not None:
        table["target"] = np.asarray(targets, dtype=np.float64).reshape(-1)
    return table


def decomposition_csv(table) -> str:
    cols = list(table)
    lines = [",".join(cols)]
    n = len(table[cols[0]])
    for i in range(n):
        lines.append(",".join(format(table[c][i], ".17g") for c in cols))
    return "\n".join(lines) + "\n"
