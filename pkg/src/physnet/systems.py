"""Ground-truth dynamical systems, noisy trajectory generation, and
numerical differentiation of sampled series.

The ideal mass-spring uses the rescaled energy H = p^2/m + k q^2 (no 1/2
factors), so with m = k = 1 the field is (2p, -2q).  The ideal pendulum
uses H = p^2/2 + (g/l)(1 - cos q), giving the field (p, -(g/l) sin q).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .odeint import OdeProblem, integrate

GROUND_TRUTH, NOISY, MODEL_ROLLOUT = "ground_truth", "noisy", "model_rollout"


@dataclass(frozen=True)
class SystemSpec:
    kind: str                 # "spring" or "pendulum"
    m: float = 1.0
    k: float = 1.0
    g_over_l: float = 9.8

    def __post_init__(self):
        if self.kind not in ("spring", "pendulum"):
            raise ShapeError(f"unknown system kind {self.kind!r}")
        if self.m <= 0 or self.k <= 0 or self.g_over_l <= 0:
            raise ShapeError("system constants must be positive")

    def field(self, state):
        return system_field(self, state)

    def ode_field(self):
        return lambda t, y: system_field(self, y)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ShapeError("noise sigma must be nonnegative")


@dataclass
class TrajectoryData:
    """Sampled trajectory on a uniform grid with derivative series.

    ``generate`` fills dq/dp with the exact field evaluated on the clean
    states; consumers that want noise-consistent derivative estimates use
    :func:`finite_difference` on the (possibly noisy) coordinates.
    """

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    dq: np.ndarray
    dp: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0
    source: str = GROUND_TRUTH

    def __post_init__(self):
        arrays = [self.times, self.q, self.p, self.dq, self.dp]
        n = len(self.times)
        if any(len(a) != n for a in arrays):
            raise ShapeError("trajectory series must have equal lengths")
        steps = np.diff(self.times)
        if len(steps) and np.abs(steps - steps[0]).max() > 1e-12 * max(1.0, abs(steps[0])):
            raise ShapeError("trajectory times must be uniform")

    @property
    def states(self):
        return np.column_stack([self.q, self.p])

    @property
    def derivatives(self):
        return np.column_stack([self.dq, self.dp])

    def with_fd_derivatives(self):
        """Copy with dq/dp replaced by finite differences of q/p."""
        return TrajectoryData(
            self.times,
            self.q,
            self.p,
            finite_difference(self.times, self.q),
            finite_difference(self.times, self.p),
            self.noise_sigma,
            self.seed,
            self.source,
        )

    # -- CSV round trip ----------------------------------------------------

    CSV_HEADER = ["t", "q", "p", "dq", "dp", "source", "sigma", "seed"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_HEADER)
        for i in range(len(self.times)):
            writer.writerow(
                [
                    format(self.times[i], ".17g"),
                    format(self.q[i], ".17g"),
                    format(self.p[i], ".17g"),
                    format(self.dq[i], ".17g"),
                    format(self.dp[i], ".17g"),
                    self.source,
                    format(self.noise_sigma, ".17g"),
                    self.seed,
                ]
            )
        return buf.getvalue()

    def save_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, path) -> "TrajectoryData":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != cls.CSV_HEADER:
                raise ShapeError(f"unexpected trajectory CSV header {header!r}")
            rows = list(reader)
        if not rows:
            raise ShapeError("trajectory CSV has no data rows")
        cols = list(zip(*rows))
        return cls(
            times=np.array(cols[0], dtype=np.float64),
            q=np.array(cols[1], dtype=np.float64),
            p=np.array(cols[2], dtype=np.float64),
            dq=np.array(cols[3], dtype=np.float64),
            dp=np.array(cols[4], dtype=np.float64),
            source=rows[0][5],
            noise_sigma=float(rows[0][6]),
            seed=int(rows[0][7]),
        )


def spring_field(spec: SystemSpec, state):
    if spec.kind != "spring":
        raise ShapeError(f"spring_field called with {spec.kind!r} spec")
    q, p = state[..., 0], state[..., 1]
    return np.stack([2.0 * p / spec.m, -2.0 * spec.k * q], axis=-1)


def pendulum_field(spec: SystemSpec, state):
    if spec.kind != "pendulum":
        raise ShapeError(f"pendulum_field called with {spec.kind!r} spec")
    q, p = state[..., 0], state[..., 1]
    return np.stack([p, -spec.g_over_l * np.sin(q)], axis=-1)


def system_field(spec: SystemSpec, state):
    state = np.asarray(state, dtype=np.float64)
    if spec.kind == "spring":
        return spring_field(spec, state)
    return pendulum_field(spec, state)


def true_energy(spec: SystemSpec, state):
    """Conserved energy of the exact system at the given state(s)."""
    state = np.asarray(state, dtype=np.float64)
    q, p = state[..., 0], state[..., 1]
    if spec.kind == "spring":
        return p**2 / spec.m + spec.k * q**2
    return p**2 / 2.0 + spec.g_over_l * (1.0 - np.cos(q))


def generate(
    spec: SystemSpec,
    y0,
    n: int,
    t_span,
    noise: NoiseSpec = NoiseSpec(0.0),
    seed: int = 0,
) -> TrajectoryData:
    """Sample the exact trajectory on a uniform grid and add coordinate noise.

    Integrates at tolerance 1e-12, records the exact field as dq/dp, then
    perturbs q and p independently with N(0, sigma^2) draws.  Deterministic
    for a fixed seed.
    """
    if n < 2:
        raise ShapeError("need at least two samples")
    grid = np.linspace(t_span[0], t_span[1], n)
    sol = integrate(
        OdeProblem(spec.ode_field(), y0, t_span, rtol=1e-12, atol=1e-12, sample_times=grid)
    )
    exact = sol.states
    derivs = system_field(spec, exact)
    rng = np.random.default_rng(seed)
    q = exact[:, 0] + noise.sigma * rng.standard_normal(n)
    p = exact[:, 1] + noise.sigma * rng.standard_normal(n)
    return TrajectoryData(
        times=grid,
        q=q,
        p=p,
        dq=derivs[:, 0],
        dp=derivs[:, 1],
        noise_sigma=noise.sigma,
        seed=seed,
        source=NOISY if noise.sigma > 0 else GROUND_TRUTH,
    )


def finite_difference(times, series):
    """Second-order derivative estimate on a uniform grid.

    Central differences in the interior, one-sided three-point stencils at
    both endpoints.
    """
    times = np.asarray(times, dtype=np.float64)
    series = np.asarray(series, dtype=np.float64)
    if times.size < 3:
        raise ShapeError("finite differences need at least 3 samples")
    steps = np.diff(times)
    h = steps[0]
    if np.abs(steps - h).max() > 1e-12 * max(1.0, abs(h)):
        raise ShapeError("finite differences require a uniform grid")
    out = np.empty_like(series)
    out[1:-1] = (series[2:] - series[:-2]) / (2.0 * h)
    out[0] = (-3.0 * series[0] + 4.0 * series[1] - series[2]) / (2.0 * h)
    out[-1] = (3.0 * series[-1] - 4.0 * series[-2] + series[-3]) / (2.0 * h)
    return out
