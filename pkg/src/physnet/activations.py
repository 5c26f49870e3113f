"""Elementwise activation functions with first and second derivatives.

Every activation used in a tape must provide value, first and second
derivative so that gradient graphs stay differentiable one more time.
ReLU uses the subgradient convention relu'(0) = 0 and relu'' = 0 everywhere.
"""

import numpy as np

TANH, SIGMOID, RELU, SINE = 0, 1, 2, 3

_NAMES = {"tanh": TANH, "sigmoid": SIGMOID, "relu": RELU, "sine": SINE}
_CODES = {v: k for k, v in _NAMES.items()}

ACTIVATION_NAMES = tuple(_NAMES)


def activation_code(name: str) -> int:
    try:
        return _NAMES[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(_NAMES)}")


def activation_name(code: int) -> str:
    return _CODES[code]


def _sigmoid(x):
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def act_value(code: int, x):
    x = np.asarray(x, dtype=np.float64)
    if code == TANH:
        return np.tanh(x)
    if code == SIGMOID:
        return _sigmoid(x)
    if code == RELU:
        return np.maximum(x, 0.0)
    if code == SINE:
        return np.sin(x)
    raise ValueError(f"unknown activation code {code}")


def act_deriv1(code: int, x):
    x = np.asarray(x, dtype=np.float64)
    if code == TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if code == SIGMOID:
        s = _sigmoid(x)
        return s * (1.0 - s)
    if code == RELU:
        return (x > 0.0).astype(np.float64)
    if code == SINE:
        return np.cos(x)
    raise ValueError(f"unknown activation code {code}")


def act_deriv2(code: int, x):
    x = np.asarray(x, dtype=np.float64)
    if code == TANH:
        t = np.tanh(x)
        return -2.0 * t * (1.0 - t * t)
    if code == SIGMOID:
        s = _sigmoid(x)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    if code == RELU:
        return np.zeros_like(x)
    if code == SINE:
        return -np.sin(x)
    raise ValueError(f"unknown activation code {code}")


# Activations whose first derivative is an algebraic function of the
# activation VALUE; for these the engine reuses stored forward buffers
# instead of re-evaluating the transcendental.
VALUE_DERIV_KINDS = (TANH, SIGMOID, RELU)


def act_deriv1_from_value(code: int, v):
    """sigma'(x) expressed through v = sigma(x)."""
    v = np.asarray(v, dtype=np.float64)
    if code == TANH:
        return 1.0 - v * v
    if code == SIGMOID:
        return v * (1.0 - v)
    if code == RELU:
        return (v > 0.0).astype(np.float64)
    raise ValueError(f"activation code {code} has no value-form first derivative")


def act_deriv1v_deriv(code: int, v):
    """d/dv of the value-form derivative above."""
    v = np.asarray(v, dtype=np.float64)
    if code == TANH:
        return -2.0 * v
    if code == SIGMOID:
        return 1.0 - 2.0 * v
    if code == RELU:
        return np.zeros_like(v)
    raise ValueError(f"activation code {code} has no value-form first derivative")
