"""Ground-truth system tests: fields, energies, trajectory generation,
finite differences, CSV round trips."""

import numpy as np
import pytest

from physnet.errors import ShapeError
from physnet.systems import (
    NoiseSpec,
    SystemSpec,
    TrajectoryData,
    finite_difference,
    generate,
    pendulum_field,
    spring_field,
    true_energy,
)


class TestFields:
    def test_spring_unit_circle_point(self):
        np.testing.assert_array_equal(
            spring_field(SystemSpec("spring"), np.array([1.0, 0.0])), [0.0, -2.0]
        )

    def test_spring_fixed_point(self):
        np.testing.assert_array_equal(
            spring_field(SystemSpec("spring"), np.array([0.0, 0.0])), [0.0, 0.0]
        )

    def test_spring_constants(self):
        np.testing.assert_array_equal(
            spring_field(SystemSpec("spring", m=2.0, k=3.0), np.array([1.0, 1.0])),
            [1.0, -6.0],
        )

    def test_pendulum_at_origin_momentum(self):
        np.testing.assert_array_equal(
            pendulum_field(SystemSpec("pendulum"), np.array([0.0, 1.0])), [1.0, -0.0]
        )

    def test_pendulum_right_angle(self):
        np.testing.assert_allclose(
            pendulum_field(SystemSpec("pendulum"), np.array([np.pi / 2, 0.0])),
            [0.0, -9.8],
            rtol=1e-15,
        )

    def test_pendulum_small_angle_linearization(self):
        out = pendulum_field(SystemSpec("pendulum"), np.array([0.001, 0.0]))
        assert out[1] == pytest.approx(-9.8 * 0.001, abs=1e-6)

    def test_wrong_spec_kind(self):
        with pytest.raises(ShapeError):
            spring_field(SystemSpec("pendulum"), np.array([0.0, 0.0]))
        with pytest.raises(ShapeError):
            pendulum_field(SystemSpec("spring"), np.array([0.0, 0.0]))


class TestEnergy:
    def test_spring_energy(self):
        assert true_energy(SystemSpec("spring"), np.array([1.0, 0.0])) == 1.0

    def test_pendulum_rest_energy(self):
        assert true_energy(SystemSpec("pendulum"), np.array([0.0, 0.0])) == 0.0

    def test_energy_conserved_along_trajectory(self):
        tr = generate(SystemSpec("spring"), [1.0, 0.0], 2000, (0.0, 20.0))
        H = true_energy(SystemSpec("spring"), tr.states)
        assert np.abs(H - 1.0).max() <= 1e-8


class TestGenerate:
    def test_noiseless_matches_exact(self):
        tr = generate(SystemSpec("spring"), [1.0, 0.0], 3000, (0.0, 20.0), NoiseSpec(0.0))
        exact = np.column_stack([np.cos(2 * tr.times), -np.sin(2 * tr.times)])
        assert np.abs(tr.states - exact).max() <= 1e-9

    def test_exact_derivatives_recorded(self):
        spec = SystemSpec("spring")
        tr = generate(spec, [1.0, 0.0], 1000, (0.0, 10.0), NoiseSpec(0.05), seed=3)
        # derivatives are the exact field on the clean states even when the
        # coordinates carry noise
        clean = generate(spec, [1.0, 0.0], 1000, (0.0, 10.0), NoiseSpec(0.0), seed=3)
        np.testing.assert_allclose(
            tr.derivatives, spec.field(clean.states), rtol=0, atol=1e-9
        )

    def test_noise_statistics(self):
        spec = SystemSpec("spring")
        clean = generate(spec, [1.0, 0.0], 5000, (0.0, 20.0), NoiseSpec(0.0), seed=9)
        noisy = generate(spec, [1.0, 0.0], 5000, (0.0, 20.0), NoiseSpec(0.01), seed=9)
        assert 0.009 <= np.std(noisy.q - clean.q) <= 0.011
        assert 0.009 <= np.std(noisy.p - clean.p) <= 0.011

    def test_bit_reproducible(self):
        a = generate(SystemSpec("pendulum"), [1.0, 0.0], 500, (0.0, 5.0), NoiseSpec(0.02), seed=4)
        b = generate(SystemSpec("pendulum"), [1.0, 0.0], 500, (0.0, 5.0), NoiseSpec(0.02), seed=4)
        for attr in ("times", "q", "p", "dq", "dp"):
            assert np.array_equal(getattr(a, attr), getattr(b, attr))

    def test_minimum_samples(self):
        with pytest.raises(ShapeError):
            generate(SystemSpec("spring"), [1.0, 0.0], 1, (0.0, 1.0))


class TestFiniteDifference:
    def test_linear_exact(self):
        t = np.linspace(0.0, 2.0, 41)
        np.testing.assert_allclose(finite_difference(t, t), np.ones_like(t), atol=1e-13)

    def test_quadratic_exact(self):
        t = np.linspace(0.0, 2.0, 41)
        np.testing.assert_allclose(finite_difference(t, t**2), 2 * t, atol=1e-12)

    def test_sine_truncation_bound(self):
        # derivative of sin(w t): central-difference truncation error is
        # w^3 h^2 / 6 in the interior and w^3 h^2 / 3 at the one-sided ends
        w, h = 2.0, 0.004
        t = np.arange(0.0, 20.0 + h / 2, h)
        err = np.abs(finite_difference(t, np.sin(w * t)) - w * np.cos(w * t))
        assert err[1:-1].max() <= 1.1 * w**3 * h**2 / 6
        assert max(err[0], err[-1]) <= 1.1 * w**3 * h**2 / 3

    def test_spring_field_recovery(self):
        spec = SystemSpec("spring")
        tr = generate(spec, [1.0, 0.0], 5000, (0.0, 20.0))
        fd = np.column_stack(
            [finite_difference(tr.times, tr.q), finite_difference(tr.times, tr.p)]
        )
        assert np.abs(fd - tr.derivatives).max() <= 1e-4

    def test_non_uniform_grid_rejected(self):
        t = np.array([0.0, 0.1, 0.3, 0.4])
        with pytest.raises(ShapeError):
            finite_difference(t, t)

    def test_needs_three_points(self):
        with pytest.raises(ShapeError):
            finite_difference(np.array([0.0, 1.0]), np.array([0.0, 1.0]))


class TestCsv:
    def test_round_trip_exact(self, tmp_path):
        tr = generate(SystemSpec("spring"), [1.0, 0.0], 200, (0.0, 5.0), NoiseSpec(0.01), seed=6)
        path = tmp_path / "traj.csv"
        tr.save_csv(path)
        back = TrajectoryData.from_csv(path)
        for attr in ("times", "q", "p", "dq", "dp"):
            assert np.array_equal(getattr(tr, attr), getattr(back, attr))
        assert back.source == tr.source
        assert back.noise_sigma == tr.noise_sigma
        assert back.seed == tr.seed

    def test_header_and_line_endings(self, tmp_path):
        tr = generate(SystemSpec("spring"), [1.0, 0.0], 5, (0.0, 1.0))
        path = tmp_path / "t.csv"
        tr.save_csv(path)
        raw = path.read_bytes()
        assert raw.startswith(b"t,q,p,dq,dp,source,sigma,seed\n")
        assert b"\r" not in raw

    def test_byte_deterministic(self, tmp_path):
        tr = generate(SystemSpec("pendulum"), [1.0, 0.0], 50, (0.0, 2.0), NoiseSpec(0.03), seed=1)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        tr.save_csv(p1)
        tr.save_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()


def test_trajectory_validation():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ShapeError):
        TrajectoryData(t, np.zeros(4), np.zeros(5), np.zeros(5), np.zeros(5))
    with pytest.raises(ShapeError):
        TrajectoryData(np.array([0.0, 0.1, 0.3]), np.zeros(3), np.zeros(3),
                       np.zeros(3), np.zeros(3))
