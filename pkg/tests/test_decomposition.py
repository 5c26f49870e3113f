"""Even-odd decomposition network tests."""

import numpy as np
import pytest

from physnet.decomposition import (
    DecompositionNet,
    decomp_forward,
    decomp_loss,
    decompose,
    train_decomposition,
)
from physnet.errors import ShapeError
from physnet.mlp import Dataset
from physnet.training import TrainConfig


def zeroed_net():
    net = DecompositionNet.create(hidden=(8, 8), seed=0)
    net.even_branch.params.values[:] = 0.0
    net.odd_branch.params.values[:] = 0.0
    return net


class TestForward:
    def test_zero_weight_branches(self):
        ye, yo, yh = decomp_forward(zeroed_net(), 0.4)
        assert (ye, yo, yh) == (0.0, 0.0, 0.0)

    def test_sum_identity(self, rng):
        net = DecompositionNet.create(hidden=(8, 8), seed=3)
        xs = rng.uniform(-2, 2, 17)
        ye, yo, yh = decomp_forward(net, xs)
        assert np.array_equal(yh, ye + yo)


class TestLoss:
    def test_zero_net_on_zero_targets(self):
        xs = np.linspace(-1, 1, 32)
        assert decomp_loss(zeroed_net(), Dataset(xs, np.zeros(32))) == 0.0

    def test_zero_net_on_exponential(self):
        # loss reduces to mean(target^2); direct numerical oracle
        xs = np.linspace(-1.0, 1.0, 1000)
        target_sq_mean = float(np.mean(np.exp(xs) ** 2))
        assert target_sq_mean == pytest.approx(1.8134, abs=2e-3)
        loss = decomp_loss(zeroed_net(), Dataset(xs, np.exp(xs)))
        assert loss == pytest.approx(target_sq_mean, rel=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(ShapeError):
            decomp_loss(zeroed_net(), Dataset(np.zeros((0, 1)), np.zeros((0, 1))))

    def test_loss_at_least_fit_term(self, rng):
        net = DecompositionNet.create(hidden=(8, 8), seed=1)
        xs = rng.uniform(-1, 1, 64)
        ys = np.exp(xs)
        data = Dataset(xs, ys)
        full = decomp_loss(net, data)
        bare = DecompositionNet(net.even_branch, net.odd_branch, 0.0, 0.0)
        assert full >= decomp_loss(bare, data)


class TestTraining:
    @pytest.fixture(scope="class")
    def trained_exp(self):
        xs = np.linspace(-1.0, 1.0, 1024)
        net = DecompositionNet.create(seed=0)
        trained, history = train_decomposition(
            net, Dataset(xs, np.exp(xs)), TrainConfig(epochs=2500, learning_rate=5e-3, seed=0)
        )
        return trained, xs, history

    def test_exponential_splits_into_cosh_sinh(self, trained_exp):
        trained, xs, _ = trained_exp
        ye, yo, _ = decomp_forward(trained, 1.0)
        assert ye == pytest.approx(np.cosh(1.0), abs=0.05)
        assert yo == pytest.approx(np.sinh(1.0), abs=0.05)

    def test_loss_decreases(self, trained_exp):
        _, _, history = trained_exp
        assert history[-1]["loss"] < 1e-2 * history[0]["loss"]

    def test_even_target_silences_odd_branch(self):
        xs = np.linspace(-2.0, 2.0, 1024)
        net = DecompositionNet.create(seed=1)
        trained, _ = train_decomposition(
            net, Dataset(xs, xs**2), TrainConfig(epochs=2500, learning_rate=5e-3, seed=1)
        )
        table = decompose(trained, xs)
        assert np.abs(table["y_odd"]).max() <= 0.05 * np.abs(table["y_even"]).max()

    def test_odd_target_silences_even_branch(self):
        xs = np.linspace(-2.0, 2.0, 1024)
        net = DecompositionNet.create(seed=2)
        trained, _ = train_decomposition(
            net, Dataset(xs, xs**3), TrainConfig(epochs=2500, learning_rate=5e-3, seed=2)
        )
        table = decompose(trained, xs)
        assert np.abs(table["y_even"]).max() <= 0.05 * np.abs(table["y_odd"]).max()


def test_decompose_table_columns(rng):
    net = DecompositionNet.create(hidden=(6, 6), seed=5)
    xs = np.linspace(-1, 1, 11)
    table = decompose(net, xs, targets=np.exp(xs))
    assert set(table) == {"x", "y_even", "y_odd", "y_hat", "target"}
    np.testing.assert_array_equal(table["y_hat"], table["y_even"] + table["y_odd"])


def test_branch_shape_validation():
    from physnet.mlp import MLP

    with pytest.raises(ShapeError):
        DecompositionNet(MLP.create([2, 4, 1]), MLP.create([1, 4, 1]))
    with pytest.raises(ShapeError):
        DecompositionNet.create(lambda_even=-1.0)


def test_serialization_round_trip(tmp_path):
    net = DecompositionNet.create(hidden=(6, 6), seed=8, lambda_even=2.0)
    path = tmp_path / "d.json"
    net.save(path)
    back = DecompositionNet.load(path)
    assert back.lambda_even == 2.0
    x = 0.37
    assert decomp_forward(back, x) == decomp_forward(net, x)
