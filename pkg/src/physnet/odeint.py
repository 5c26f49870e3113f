"""ODE integration: classic fixed-step RK4 and adaptive Dormand-Prince 5(4).

Both modes can resample their solution onto an explicit output grid using
cubic Hermite interpolation between accepted steps (the step-end slopes
are already available from the integration).  The adaptive mode uses the
standard DOPRI coefficients with a PI step-size controller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, ShapeError, StepUnderflowError

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# Difference between the 5th and embedded 4th order weights.
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass
class OdeProblem:
    field: callable                      # (t, y) -> dy/dt
    y0: np.ndarray
    t_span: tuple
    mode: str = "adaptive"               # "fixed" or "adaptive"
    h: float | None = None               # fixed-mode step
    rtol: float = 1e-12
    atol: float = 1e-12
    sample_times: np.ndarray | None = None
    max_steps: int | None = None         # accepted+rejected step budget

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=np.float64).ravel()
        t0, t1 = float(self.t_span[0]), float(self.t_span[1])
        if not t1 > t0:
            raise ShapeError("t_span must satisfy t1 > t0")
        self.t_span = (t0, t1)
        if self.mode not in ("fixed", "adaptive"):
            raise ShapeError(f"unknown integration mode {self.mode!r}")
        if self.mode == "fixed":
            if self.h is None or self.h <= 0:
                raise ShapeError("fixed mode requires a positive step h")
        else:
            if self.rtol <= 0 or self.atol <= 0:
                raise ShapeError("adaptive mode requires positive rtol and atol")
        if self.sample_times is not None:
            st = np.asarray(self.sample_times, dtype=np.float64)
            if st.ndim != 1 or st.size < 1:
                raise ShapeError("sample_times must be a 1-d array")
            if np.any(np.diff(st) <= 0):
                raise ShapeError("sample_times must be strictly increasing")
            if st[0] < t0 - 1e-12 or st[-1] > t1 + 1e-12:
                raise ShapeError("sample_times must lie within t_span")
            self.sample_times = st


@dataclass
class Solution:
    times: np.ndarray
    states: np.ndarray                   # (len(times), dim)
    n_steps: int
    n_rejected: int


def rk4_step(field, t, y, h):
    """One classic fourth-order Runge-Kutta update."""
    if h <= 0:
        raise ShapeError("rk4_step requires h > 0")
    y = np.asarray(y, dtype=np.float64)
    k1 = np.asarray(field(t, y), dtype=np.float64)
    k2 = np.asarray(field(t + 0.5 * h, y + 0.5 * h * k1), dtype=np.float64)
    k3 = np.asarray(field(t + 0.5 * h, y + 0.5 * h * k2), dtype=np.float64)
    k4 = np.asarray(field(t + h, y + h * k3), dtype=np.float64)
    y_next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y_next)):
        raise BlowUpError(t)
    return y_next


def _hermite_resample(ts, ys, fs, sample_times):
    """Cubic Hermite interpolation of (ts, ys, fs) node data onto a grid.

    Returns the requested grid itself (bit-equal) as the output times.
    """
    ts = np.asarray(ts)
    ys = np.asarray(ys)
    fs = np.asarray(fs)
    out = np.empty((sample_times.size, ys.shape[1]))
    idx = np.searchsorted(ts, sample_times, side="right") - 1
    idx = np.clip(idx, 0, ts.size - 2)
    for k, (t, i) in enumerate(zip(sample_times, idx)):
        h = ts[i + 1] - ts[i]
        s = (t - ts[i]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out[k] = (
            h00 * ys[i]
            + h10 * h * fs[i]
            + h01 * ys[i + 1]
            + h11 * h * fs[i + 1]
        )
    return out


def _finish(ts, ys, fs, problem, n_steps, n_rejected):
    if problem.sample_times is not None:
        states = _hermite_resample(ts, ys, fs, problem.sample_times)
        return Solution(problem.sample_times.copy(), states, n_steps, n_rejected)
    return Solution(np.array(ts), np.array(ys), n_steps, n_rejected)


def _integrate_fixed(problem: OdeProblem) -> Solution:
    t0, t1 = problem.t_span
    field = problem.field
    h = float(problem.h)
    t, y = t0, problem.y0.copy()
    f = np.asarray(field(t, y), dtype=np.float64)
    ts, ys, fs = [t], [y.copy()], [f.copy()]
    n_steps = 0
    while t < t1 - 1e-14 * (t1 - t0):
        step = min(h, t1 - t)
        y = rk4_step(field, t, y, step)
        t = t1 if t + step >= t1 - 1e-14 * (t1 - t0) else t + step
        f = np.asarray(field(t, y), dtype=np.float64)
        ts.append(t)
        ys.append(y.copy())
        fs.append(f.copy())
        n_steps += 1
    return _finish(ts, ys, fs, problem, n_steps, 0)


def _integrate_adaptive(problem: OdeProblem) -> Solution:
    t0, t1 = problem.t_span
    span = t1 - t0
    field = problem.field
    rtol, atol = problem.rtol, problem.atol

    t = t0
    y = problem.y0.copy()
    f = np.asarray(field(t, y), dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise BlowUpError(t)

    ts, ys, fs = [t], [y.copy()], [f.copy()]
    h = 1e-3 * span
    err_prev = 1.0
    n_steps = n_rejected = 0
    k = np.empty((7, y.size))

    while t < t1:
        if h < 1e-14 * span:
            raise StepUnderflowError(t, h)
        if problem.max_steps is not None and n_steps + n_rejected >= problem.max_steps:
            raise BlowUpError(t)
        h = min(h, t1 - t)
        k[0] = f
        for i in range(1, 7):
            yi = y + h * (_A[i] @ k[:i])
            k[i] = field(t + _C[i] * h, yi)
        y_new = y + h * (_B5 @ k)
        if not np.all(np.isfinite(y_new)):
            raise BlowUpError(t)
        err_vec = h * (_E @ k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))

        if err <= 1.0:
            t_new = t + h
            # k[6] is evaluated at (t+h, y_new): FSAL slope reuse
            f = k[6].copy()
            t, y = t_new, y_new
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
            n_steps += 1
            # PI controller (order-5 error exponents)
            fac = 0.9 * (err + 1e-300) ** -0.14 * err_prev**0.08
            err_prev = max(err, 1e-10)
        else:
            n_rejected += 1
            fac = max(0.2, 0.9 * (err + 1e-300) ** -0.2)
        h *= min(5.0, max(0.2, fac))

    return _finish(ts, ys, fs, problem, n_steps, n_rejected)


def integrate(problem: OdeProblem) -> Solution:
    """Solve the problem; dense output lands exactly on sample_times."""
    if problem.mode == "fixed":
        return _integrate_fixed(problem)
    return _integrate_adaptive(problem)
