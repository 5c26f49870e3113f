"""Compiled core vs numpy fallback: both executors must agree on every
program, batched and single-row, forward and reverse."""

import numpy as np
import pytest

from physnet import backend
from physnet import tape as tp
from physnet.activations import ACTIVATION_NAMES

needs_compiled = pytest.mark.skipif(
    not backend.HAVE_COMPILED, reason="compiled core not built"
)


def random_tape(rng, activation):
    sizes = [int(rng.integers(1, 5))] + [int(rng.integers(1, 24)) for _ in range(2)] + [1]
    shapes = [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]
    t = tp.Tape(sizes[0], shapes)
    node = 0
    for layer in range(len(shapes)):
        node = t.affine(node, layer)
        if layer < len(shapes) - 1:
            node = t.act(node, activation)
    t.set_output(node)
    ps = tp.ParamStore(shapes, 0.8 * rng.standard_normal(sum(o * i + o for o, i in shapes)))
    return t, ps


@needs_compiled
@pytest.mark.parametrize("activation", ACTIVATION_NAMES)
def test_forward_and_vjp_agree(activation, rng):
    for _ in range(10):
        t, ps = random_tape(rng, activation)
        prog = tp.lower(t)
        ex_np = backend.make_executor(prog, "numpy")
        ex_c = backend.make_executor(prog, "compiled")
        for n in (1, 7):
            X = np.ascontiguousarray(rng.standard_normal((n, t.input_dim)))
            y1, _ = ex_np.forward(ps.values, X)
            y2, _ = ex_c.forward(ps.values, X)
            np.testing.assert_allclose(y1, y2, rtol=1e-12, atol=1e-13)
            seed = np.ascontiguousarray(rng.standard_normal((n, 1)))
            p1, i1 = ex_np.vjp(ps.values, X, seed, None)
            p2, i2 = ex_c.vjp(ps.values, X, seed, None)
            np.testing.assert_allclose(p1, p2, rtol=1e-11, atol=1e-12)
            np.testing.assert_allclose(i1, i2, rtol=1e-11, atol=1e-12)


@needs_compiled
def test_gradient_graph_agrees(rng):
    t, ps = random_tape(rng, "tanh")
    gt = tp.grad_graph(t)
    prog = tp.lower(gt)
    ex_np = backend.make_executor(prog, "numpy")
    ex_c = backend.make_executor(prog, "compiled")
    X = np.ascontiguousarray(rng.standard_normal((9, t.input_dim)))
    y1, s1 = ex_np.forward(ps.values, X)
    y2, s2 = ex_c.forward(ps.values, X)
    np.testing.assert_allclose(y1, y2, rtol=1e-12, atol=1e-13)
    seed = np.ascontiguousarray(rng.standard_normal(y1.shape))
    p1, i1 = ex_np.vjp(ps.values, X, seed, s1)
    p2, i2 = ex_c.vjp(ps.values, X, seed, s2)
    np.testing.assert_allclose(p1, p2, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(i1, i2, rtol=1e-11, atol=1e-12)


@needs_compiled
def test_saved_state_not_clobbered_by_second_forward(rng):
    """Workspace reuse must never recycle a buffer the caller still holds."""
    t, ps = random_tape(rng, "tanh")
    prog = tp.lower(t)
    ex = backend.make_executor(prog, "compiled")
    X1 = np.ascontiguousarray(rng.standard_normal((600, t.input_dim)))
    X2 = np.ascontiguousarray(rng.standard_normal((600, t.input_dim)))
    y1, saved1 = ex.forward(ps.values, X1)
    y2, saved2 = ex.forward(ps.values, X2)
    seed = np.ones((600, 1))
    p1a, _ = ex.vjp(ps.values, X1, seed, saved1)
    p1b, _ = ex.vjp(ps.values, X1, seed, None)
    np.testing.assert_allclose(p1a, p1b, rtol=1e-12, atol=1e-14)


def test_backend_env_override(monkeypatch):
    monkeypatch.setenv("PHYSNET_BACKEND", "numpy")
    assert backend.backend_name() == "numpy"
    monkeypatch.setenv("PHYSNET_BACKEND", "bogus")
    with pytest.raises(RuntimeError):
        backend.backend_name()
