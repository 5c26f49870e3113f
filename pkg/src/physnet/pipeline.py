"""Experiment orchestration: noise sweeps, the constraint-regulated
symbolic regression pipeline, activation comparisons, and their metrics.

The central three-way comparison at each noise level:

* baseline: sparse regression fit directly on the noisy data, with
  derivative targets finite-differenced from the noisy coordinates;
* constraint network: energy-conserving model trained on the same noisy
  targets, then rolled out through the ODE solver;
* regulated: sparse regression re-fit on the constraint network's clean
  rollout, with derivatives supplied by the network's own field.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .decomposition import (
    DecompositionNet,
    decomposition_csv,
    decompose,
    train_decomposition,
)
from .errors import EmptyModelError, IntegrationError, PhysnetError, ShapeError
from .hnn import BaselineModel, HnnModel, train_baseline, train_hnn
from .mlp import Dataset
from .odeint import OdeProblem, Solution, integrate
from .seeds import derive_seed
from .sindy import FeatureLibrary, SindyModel, StlsqConfig, fit, print_equations, threshold_sweep
from .systems import (
    MODEL_ROLLOUT,
    NoiseSpec,
    SystemSpec,
    TrajectoryData,
    finite_difference,
    generate,
    true_energy,
)
from .training import TrainConfig

ACTIVATION_ORDER = ("relu", "tanh", "sigmoid", "sine")


class PipelineStageError(PhysnetError):
    """A pipeline stage failed; carries the stage tag."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    system: SystemSpec
    sigmas: tuple = (0.0, 0.01, 0.02, 0.03)
    n_obs: int = 5000
    t_span_train: tuple = (0.0, 10.0)
    t_span_compare: tuple = (0.0, 10.0)
    y0: tuple = (1.0, 0.0)
    hnn_epochs: int = 2000
    hnn_lr: float = 1e-3
    hnn_activation: str = "tanh"
    hnn_hidden: tuple = (200, 200)
    thresholds: tuple = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 1.5)
    ridge_alpha: float = 0.05
    poly_degree: int = 2
    fourier_freqs: int = 1
    rollout_n: int = 5000
    rollout_tol: float = 1e-12
    rollout_max_steps: int = 400000
    compare_n: int = 1000
    hybrid_derivative_source: str = "field"   # or "finite_difference"
    seed: int = 0

    def __post_init__(self):
        if sorted(self.sigmas) != list(self.sigmas) or any(s < 0 for s in self.sigmas):
            raise ShapeError("sigmas must be nonnegative and sorted ascending")
        if self.hybrid_derivative_source not in ("field", "finite_difference"):
            raise ShapeError(
                f"unknown hybrid derivative source {self.hybrid_derivative_source!r}"
            )

    def library(self):
        return FeatureLibrary(self.poly_degree, self.fourier_freqs)

    def train_config(self, seed):
        return TrainConfig(epochs=self.hnn_epochs, learning_rate=self.hnn_lr, seed=seed)


@dataclass
class SigmaRecord:
    sigma: float
    status: str = "ok"
    error: str = ""
    data: TrajectoryData | None = None
    baseline_model: SindyModel | None = None
    hnn_model: HnnModel | None = None
    hybrid_model: SindyModel | None = None
    rollout: TrajectoryData | None = None
    metrics: dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list

    @property
    def failed(self):
        return [r for r in self.records if r.status != "ok"]


# -- metrics ---------------------------------------------------------------


def coordinate_mse(pred: Solution, truth: Solution):
    """Squared-state-error metric on a shared time grid.

    Returns (scalar mean over time of |state error|^2 summed over the two
    coordinates, per-time error curve).
    """
    if pred.times.shape != truth.times.shape or not np.array_equal(pred.times, truth.times):
        raise ShapeError("coordinate MSE needs a common time grid")
    per_time = np.sum((pred.states - truth.states) ** 2, axis=1)
    return float(np.mean(per_time)), per_time


def energy_drift(spec: SystemSpec, solution: Solution):
    """(max |H - H0|, std of H) of the true energy along a trajectory."""
    energies = true_energy(spec, solution.states)
    return float(np.abs(energies - energies[0]).max()), float(np.std(energies))


# -- pipeline stages ---------------------------------------------------------


def derivative_targets(traj: TrajectoryData):
    """Training targets per the noise-regulation protocol: finite
    differences of the (noisy) coordinate series."""
    return np.column_stack(
        [finite_difference(traj.times, traj.q), finite_difference(traj.times, traj.p)]
    )


def sweep_and_fit(traj: TrajectoryData, cfg: ExperimentConfig, sweep_seed: int):
    """Threshold sweep, then a full-data fit at the chosen threshold.

    If the full fit empties a column (possible because the sweep fits on
    a subset), fall back to the next lower candidate threshold.
    """
    library = cfg.library()
    base = StlsqConfig(ridge_alpha=cfg.ridge_alpha)
    chosen, report = threshold_sweep(traj, library, cfg.thresholds, base, seed=sweep_seed)
    for thr in sorted((t for t in cfg.thresholds if t <= chosen), reverse=True):
        try:
            model = fit(traj, library, StlsqConfig(thr, cfg.ridge_alpha))
            return model, thr, report
        except EmptyModelError:
            continue
    raise EmptyModelError("all columns", chosen)


def run_baseline_sindy(traj: TrajectoryData, cfg: ExperimentConfig):
    """Sparse fit directly on noisy data (finite-difference derivatives)."""
    fd_traj = traj.with_fd_derivatives()
    sweep_seed = derive_seed(cfg.seed, f"baseline-sweep-{traj.noise_sigma}")
    try:
        model, threshold, report = sweep_and_fit(fd_traj, cfg, sweep_seed)
    except EmptyModelError as exc:
        raise PipelineStageError("baseline-sindy", exc) from exc
    return model, threshold, report


def run_sindy_hnn(traj: TrajectoryData, cfg: ExperimentConfig):
    """Constraint-network noise regulation in front of the sparse fit.

    Trains the energy network on noisy finite-difference targets, rolls
    out clean coordinate predictions over the training span, and fits the
    sparse model to the rollout.  Rollout derivatives default to the
    network's own field evaluated at the rollout points (exact for the
    surrogate); set hybrid_derivative_source="finite_difference" to use
    differenced rollout coordinates instead.

    Returns (hnn model, rollout trajectory, sparse model, info dict).
    """
    label = f"hnn-{traj.noise_sigma}"
    targets = derivative_targets(traj)
    model = HnnModel.create(
        activation=cfg.hnn_activation,
        seed=derive_seed(cfg.seed, f"{label}-init"),
        hidden=cfg.hnn_hidden,
    )
    try:
        trained, history = train_hnn(
            model, traj.states, targets, cfg.train_config(derive_seed(cfg.seed, f"{label}-train"))
        )
    except PhysnetError as exc:
        raise PipelineStageError("hnn-training", exc) from exc

    grid = np.linspace(cfg.t_span_train[0], cfg.t_span_train[1], cfg.rollout_n)
    try:
        sol = integrate(
            OdeProblem(
                trained.ode_field(),
                np.asarray(cfg.y0, dtype=np.float64),
                cfg.t_span_train,
                rtol=cfg.rollout_tol,
                atol=cfg.rollout_tol,
                sample_times=grid,
                max_steps=cfg.rollout_max_steps,
            )
        )
    except IntegrationError as exc:
        raise PipelineStageError("hnn-rollout", exc) from exc

    if cfg.hybrid_derivative_source == "field":
        derivs = trained.dynamics(sol.states)
    else:
        derivs = np.column_stack(
            [finite_difference(grid, sol.states[:, 0]), finite_difference(grid, sol.states[:, 1])]
        )
    rollout = TrajectoryData(
        times=grid,
        q=sol.states[:, 0],
        p=sol.states[:, 1],
        dq=derivs[:, 0],
        dp=derivs[:, 1],
        noise_sigma=traj.noise_sigma,
        seed=traj.seed,
        source=MODEL_ROLLOUT,
    )
    try:
        hybrid, threshold, report = sweep_and_fit(
            rollout, cfg, derive_seed(cfg.seed, f"hybrid-sweep-{traj.noise_sigma}")
        )
    except EmptyModelError as exc:
        raise PipelineStageError("hybrid-sindy", exc) from exc
    info = {
        "history": history,
        "final_train_loss": history[-1]["loss"],
        "threshold": threshold,
        "sweep_report": report,
    }
    return trained, rollout, hybrid, info


def _compare_rollout(field_fn, cfg: ExperimentConfig):
    """Rollout over the comparison span; (solution, failure message)."""
    grid = np.linspace(cfg.t_span_compare[0], cfg.t_span_compare[1], cfg.compare_n)
    try:
        sol = integrate(
            OdeProblem(
                field_fn,
                np.asarray(cfg.y0, dtype=np.float64),
                cfg.t_span_compare,
                rtol=1e-10,
                atol=1e-10,
                sample_times=grid,
                max_steps=cfg.rollout_max_steps,
            )
        )
        return sol, ""
    except IntegrationError as exc:
        return None, str(exc)


def truth_solution(cfg: ExperimentConfig) -> Solution:
    grid = np.linspace(cfg.t_span_compare[0], cfg.t_span_compare[1], cfg.compare_n)
    return integrate(
        OdeProblem(
            cfg.system.ode_field(),
            np.asarray(cfg.y0, dtype=np.float64),
            cfg.t_span_compare,
            rtol=1e-12,
            atol=1e-12,
            sample_times=grid,
        )
    )


def _method_metrics(field_fn, cfg, truth):
    sol, err = _compare_rollout(field_fn, cfg)
    if sol is None:
        return {"coord_mse": np.inf, "energy_std": np.inf, "energy_max_drift": np.inf,
                "rollout_error": err}
    mse, _ = coordinate_mse(sol, truth)
    drift, std = energy_drift(cfg.system, sol)
    return {"coord_mse": mse, "energy_std": std, "energy_max_drift": drift,
            "rollout_error": ""}


# -- experiments -------------------------------------------------------------


def run_sigma_trial(cfg: ExperimentConfig, sigma: float) -> SigmaRecord:
    record = SigmaRecord(sigma=sigma)
    truth = truth_solution(cfg)
    try:
        data_seed = derive_seed(cfg.seed, f"generate-{sigma}")
        traj = generate(cfg.system, cfg.y0, cfg.n_obs, cfg.t_span_train,
                        NoiseSpec(sigma), seed=data_seed)
        record.data = traj

        t0 = time.perf_counter()
        baseline, b_thr, b_report = run_baseline_sindy(traj, cfg)
        t_baseline = time.perf_counter() - t0
        record.baseline_model = baseline

        t0 = time.perf_counter()
        hnn_model, rollout, hybrid, info = run_sindy_hnn(traj, cfg)
        t_hybrid = time.perf_counter() - t0
        record.hnn_model = hnn_model
        record.rollout = rollout
        record.hybrid_model = hybrid

        record.metrics = {
            "sigma": sigma,
            "baseline": {
                "threshold": b_thr,
                "n_terms": baseline.n_terms,
                "equations": print_equations(baseline),
                "runtime_s": t_baseline,
                **_method_metrics(baseline.ode_field(), cfg, truth),
            },
            "hnn": {
                "final_train_loss": info["final_train_loss"],
                "runtime_s": t_hybrid,
                **_method_metrics(hnn_model.ode_field(), cfg, truth),
            },
            "hybrid": {
                "threshold": info["threshold"],
                "n_terms": hybrid.n_terms,
                "equations": print_equations(hybrid),
                "runtime_s": t_hybrid,
                **_method_metrics(hybrid.ode_field(), cfg, truth),
            },
        }
    except PhysnetError as exc:
        record.status = "failed"
        record.error = str(exc)
    return record


def noise_sweep(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Baseline vs constraint-regulated comparison at each noise level.

    Per-sigma failures are recorded and the sweep continues.  When
    ``out_dir`` is given, artifacts and summary.csv are written there.
    """
    records = [run_sigma_trial(cfg, sigma) for sigma in cfg.sigmas]
    result = ExperimentResult(cfg, records)
    if out_dir is not None:
        write_sweep_artifacts(result, out_dir)
    return result


def _fmt(x):
    return format(float(x), ".17g")


def summary_rows(result: ExperimentResult):
    """summary.csv rows; deterministic for a fixed master seed (wall-clock
    runtimes live in metrics.json instead)."""
    rows = []
    for rec in result.records:
        if rec.status != "ok":
            continue
        m = rec.metrics
        for method, model in (
            ("baseline_sindy", rec.baseline_model),
            ("hnn", None),
            ("sindy_hnn", rec.hybrid_model),
        ):
            key = {"baseline_sindy": "baseline", "hnn": "hnn", "sindy_hnn": "hybrid"}[method]
            eq = print_equations(model) if model is not None else ["", ""]
            rows.append(
                {
                    "sigma": _fmt(rec.sigma),
                    "method": method,
                    "equation_q": eq[0],
                    "equation_p": eq[1],
                    "n_terms": str(model.n_terms) if model is not None else "",
                    "coord_mse": _fmt(m[key]["coord_mse"]),
                    "energy_std": _fmt(m[key]["energy_std"]),
                    "runtime_s": "",
                }
            )
    return rows


SUMMARY_COLUMNS = ("sigma", "method", "equation_q", "equation_p",
                   "n_terms", "coord_mse", "energy_std", "runtime_s")


def write_summary_csv(rows, path):
    lines = [",".join(SUMMARY_COLUMNS)]
    for row in rows:
        lines.append(",".join(_csv_quote(row[c]) for c in SUMMARY_COLUMNS))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _csv_quote(value):
    value = str(value)
    if "," in value or '"' in value:
        return '"' + value.replace('"', '""') + '"'
    return value


def _sigma_dirname(sigma):
    return format(float(sigma), "g")


def write_sweep_artifacts(result: ExperimentResult, out_dir):
    import os

    os.makedirs(out_dir, exist_ok=True)
    for rec in result.records:
        sdir = os.path.join(out_dir, _sigma_dirname(rec.sigma))
        os.makedirs(sdir, exist_ok=True)
        if rec.status != "ok":
            with open(os.path.join(sdir, "metrics.json"), "w", newline="\n") as fh:
                json.dump({"sigma": rec.sigma, "status": rec.status, "error": rec.error},
                          fh, indent=2, sort_keys=True)
                fh.write("\n")
            continue
        rec.data.save_csv(os.path.join(sdir, "data.csv"))
        rec.hnn_model.save(os.path.join(sdir, "hnn.json"))
        rec.rollout.save_csv(os.path.join(sdir, "rollout.csv"))
        rec.baseline_model.save(os.path.join(sdir, "baseline.sindy.json"))
        rec.hybrid_model.save(os.path.join(sdir, "hybrid.sindy.json"))
        with open(os.path.join(sdir, "metrics.json"), "w", newline="\n") as fh:
            json.dump({"status": "ok", **rec.metrics}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    write_summary_csv(summary_rows(result), os.path.join(out_dir, "summary.csv"))


def activation_sweep(cfg: ExperimentConfig, out_dir=None,
                     activations=ACTIVATION_ORDER, sigma=0.01,
                     eval_span=(0.0, 500.0), eval_n=2001,
                     holdout_fraction=0.2):
    """Train one energy network per activation on shared data, then score
    long-horizon rollouts against the exact trajectory.

    Returns per-activation records with training history and the
    time-resolved rollout squared error.
    """
    data_seed = derive_seed(cfg.seed, f"activation-data-{sigma}")
    traj = generate(cfg.system, cfg.y0, cfg.n_obs, cfg.t_span_train,
                    NoiseSpec(sigma), seed=data_seed)
    targets = derivative_targets(traj)
    init_seed = derive_seed(cfg.seed, "activation-init")
    grid = np.linspace(eval_span[0], eval_span[1], eval_n)
    truth = integrate(
        OdeProblem(cfg.system.ode_field(), np.asarray(cfg.y0, dtype=np.float64),
                   eval_span, rtol=1e-12, atol=1e-12, sample_times=grid)
    )
    records = {}
    for act in activations:
        model = HnnModel.create(activation=act, seed=init_seed, hidden=cfg.hnn_hidden)
        t0 = time.perf_counter()
        trained, history = train_hnn(
            model, traj.states, targets, cfg.train_config(init_seed),
            holdout_fraction=holdout_fraction,
        )
        runtime = time.perf_counter() - t0
        sol, err = None, ""
        try:
            sol = integrate(
                OdeProblem(trained.ode_field(), np.asarray(cfg.y0, dtype=np.float64),
                           eval_span, rtol=cfg.rollout_tol, atol=cfg.rollout_tol,
                           sample_times=grid, max_steps=4 * cfg.rollout_max_steps)
            )
        except IntegrationError as exc:
            err = str(exc)
        if sol is not None:
            _, per_time = coordinate_mse(sol, truth)
        else:
            per_time = np.full(grid.size, np.inf)
        records[act] = {
            "model": trained,
            "history": history,
            "final_train_loss": history[-1]["loss"],
            "final_test_loss": history[-1].get("test_loss", history[-1]["loss"]),
            "times": grid,
            "mse_curve": per_time,
            "rollout_error": err,
            "runtime_s": runtime,
        }
    if out_dir is not None:
        write_activation_artifacts(records, out_dir)
    return records


def write_activation_artifacts(records, out_dir):
    import os

    os.makedirs(out_dir, exist_ok=True)
    summary = ["activation,final_train_loss,final_test_loss,mse_mean_100_500"]
    for act, rec in records.items():
        adir = os.path.join(out_dir, act)
        os.makedirs(adir, exist_ok=True)
        rec["model"].save(os.path.join(adir, "hnn.json"))
        with open(os.path.join(adir, "history.csv"), "w", newline="\n") as fh:
            fh.write("epoch,train_loss,test_loss\n")
            for h in rec["history"]:
                fh.write(f"{h['epoch']},{_fmt(h['loss'])},{_fmt(h.get('test_loss', h['loss']))}\n")
        with open(os.path.join(adir, "rollout_mse.csv"), "w", newline="\n") as fh:
            fh.write("t,mse\n")
            for t, m in zip(rec["times"], rec["mse_curve"]):
                fh.write(f"{_fmt(t)},{_fmt(m)}\n")
        tail = rec["mse_curve"][rec["times"] >= 100.0]
        summary.append(
            f"{act},{_fmt(rec['final_train_loss'])},{_fmt(rec['final_test_loss'])},{_fmt(np.mean(tail))}"
        )
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="\n") as fh:
        fh.write("\n".join(summary) + "\n")


# -- even/odd decomposition suite --------------------------------------------

DECOMP_TARGETS = {
    "x2": (lambda x: x**2, (-2.0, 2.0), 4000),
    "x3": (lambda x: x**3, (-2.0, 2.0), 4000),
    "exp": (np.exp, (-1.0, 1.0), 4000),
    "mixture": (
        lambda x: np.cos(10 * x) + np.cos(20 * x) + x**2 + np.sin(5 * x) + x**3,
        (-1.0, 1.0),
        12000,
    ),
}


def even_odd_suite(out_dir, seed=0, n_points=2048, learning_rate=2e-3, targets=None):
    """Train the decomposition network on the four reference targets and
    emit their component tables."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    results = {}
    for name, (f, (lo, hi), epochs) in (targets or DECOMP_TARGETS).items():
        xs = np.linspace(lo, hi, n_points)
        ys = f(xs)
        net = DecompositionNet.create(seed=derive_seed(seed, f"decomp-{name}"))
        trained, history = train_decomposition(
            net, Dataset(xs, ys),
            TrainConfig(epochs=epochs, learning_rate=learning_rate,
                        seed=derive_seed(seed, f"decomp-train-{name}")),
        )
        table = decompose(trained, xs, targets=ys)
        tdir = os.path.join(out_dir, name)
        os.makedirs(tdir, exist_ok=True)
        with open(os.path.join(tdir, "decomposition.csv"), "w", newline="\n") as fh:
            fh.write(decomposition_csv(table))
        trained.save(os.path.join(tdir, "model.json"))
        results[name] = {"net": trained, "history": history, "table": table}
    return results
