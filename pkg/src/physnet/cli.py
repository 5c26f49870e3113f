"""Command-line interface.

Subcommands: generate, train, rollout, sindy fit, experiment.  Every
command takes --seed (falling back to the PHYSNET_SEED environment
variable) and produces bit-reproducible outputs for a fixed seed.  An
optional --config file supplies flat ``key = value`` defaults; explicit
flags win over the file, the file wins over built-in defaults.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import pipeline
from .decomposition import DecompositionNet, decompose, decomposition_csv, train_decomposition
from .errors import PhysnetError, ShapeError
from .hnn import BaselineModel, HnnModel, load_dynamics_model, train_baseline, train_hnn
from .mlp import MLP, Dataset
from .odeint import OdeProblem, integrate
from .seeds import derive_seed
from .sindy import FeatureLibrary, SindyModel, StlsqConfig, fit, print_equations, threshold_sweep
from .systems import (
    MODEL_ROLLOUT,
    NoiseSpec,
    SystemSpec,
    TrajectoryData,
    finite_difference,
    generate,
)
from .training import TrainConfig, train

TARGET_FUNCS = {
    "cos": np.cos,
    "sin": np.sin,
    "x2": lambda x: x**2,
    "x3": lambda x: x**3,
    "exp": np.exp,
    "mixture": lambda x: np.cos(10 * x) + np.cos(20 * x) + x**2 + np.sin(5 * x) + x**3,
}

_SENTINEL = "__unset__"


def _span(text):
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:END, got {text!r}")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def read_config_file(path):
    """Flat ``key = value`` overrides; keys use the flag spelling without
    leading dashes (dashes and underscores are interchangeable)."""
    overrides = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ShapeError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            overrides[key.strip().replace("-", "_")] = value.strip()
    return overrides


def resolve(args, parser):
    """Apply file overrides between explicit flags and parser defaults."""
    path = getattr(args, "config", None)
    if not path:
        return args
    overrides = read_config_file(path)
    for key, value in overrides.items():
        if not hasattr(args, key):
            raise ShapeError(f"config key {key!r} is not a flag of this command")
        if getattr(args, key) is _SENTINEL or getattr(args, key) is None:
            continue
    # second pass: only replace values the user did not set explicitly
    for key, value in overrides.items():
        if key in args.__dict__ and key in getattr(args, "_explicit", set()):
            continue
        if key in args.__dict__:
            default_type = parser.get_default(key)
            setattr(args, key, _coerce(value, getattr(args, key)))
    return args


def _coerce(text, template):
    if isinstance(template, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if isinstance(template, tuple):
        if template and isinstance(template[0], int):
            return _ints(text)
        return _floats(text)
    return text


class _TrackingParser(argparse.ArgumentParser):
    """Records which destinations were explicitly provided, so config-file
    values only fill the gaps."""

    def parse_args(self, argv=None, namespace=None):
        args = super().parse_args(argv, namespace)
        explicit = set()
        argv = sys.argv[1:] if argv is None else list(argv)
        for action in self._get_all_actions():
            for opt in action.option_strings:
                if any(a == opt or a.startswith(opt + "=") for a in argv):
                    explicit.add(action.dest)
        args._explicit = explicit
        return args

    def _get_all_actions(self):
        actions = list(self._actions)
        for action in self._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sub in action.choices.values():
                    actions.extend(sub._actions)
        return actions


def default_seed():
    env = os.environ.get("PHYSNET_SEED")
    return int(env) if env else 0


def build_parser():
    parser = _TrackingParser(prog="physnet", description=__doc__,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a (noisy) ground-truth trajectory to CSV")
    gen.add_argument("--system", choices=("spring", "pendulum"), default="spring")
    gen.add_argument("--n", type=int, default=5000, help="number of samples")
    gen.add_argument("--t-span", type=_span, default=(0.0, 20.0), metavar="T0:T1")
    gen.add_argument("--y0", type=_floats, default=(1.0, 0.0), metavar="Q,P")
    gen.add_argument("--sigma", type=float, default=0.0, help="coordinate noise std dev")
    gen.add_argument("--m", type=float, default=1.0, help="spring mass")
    gen.add_argument("--k", type=float, default=1.0, help="spring constant")
    gen.add_argument("--g-over-l", type=float, default=9.8, help="pendulum g/l")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--config", help="flat key=value overrides file")
    gen.add_argument("--out", required=True, help="output trajectory CSV")

    tr = sub.add_parser("train", help="train a model and write its JSON")
    tr.add_argument("kind", choices=("hnn", "baseline", "plain", "even-hub",
                                     "odd-hub", "symmetry", "decomp"))
    tr.add_argument("--data", help="input CSV (trajectory for hnn/baseline, x,y pairs otherwise)")
    tr.add_argument("--target", choices=sorted(TARGET_FUNCS),
                    help="synthesize 1-d training data from this function")
    tr.add_argument("--n", type=int, default=200, help="synthesized sample count")
    tr.add_argument("--x-range", type=_span, default=(-2.0, 2.0), metavar="LO:HI")
    tr.add_argument("--sigma", type=float, default=0.2, help="target noise std dev")
    tr.add_argument("--grid", choices=("uniform", "linspace"), default="uniform",
                    help="random-uniform or evenly spaced synthesized inputs")
    tr.add_argument("--layers", type=_ints, default=None,
                    help="layer sizes, e.g. 1,5,5,1 (defaults per model kind)")
    tr.add_argument("--activation", choices=("tanh", "sigmoid", "relu", "sine"), default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--parity", choices=("even", "odd"), default="even",
                    help="symmetry-loss parity (symmetry kind only)")
    tr.add_argument("--symmetry-weight", type=float, default=1.0)
    tr.add_argument("--holdout", type=float, default=0.0,
                    help="held-out fraction scored as test loss (hnn)")
    tr.add_argument("--hidden", type=_ints, default=None, help="hidden sizes for hnn/baseline/decomp")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--config", help="flat key=value overrides file")
    tr.add_argument("--table-out", help="also write a decomposition table CSV (decomp kind)")
    tr.add_argument("--out", required=True, help="output model JSON")

    ro = sub.add_parser("rollout", help="integrate a trained model and write the trajectory")
    ro.add_argument("--model", required=True, help="model JSON (hnn, baseline, or sindy)")
    ro.add_argument("--y0", type=_floats, default=(1.0, 0.0), metavar="Q,P")
    ro.add_argument("--t-span", type=_span, default=(0.0, 10.0), metavar="T0:T1")
    ro.add_argument("--n", type=int, default=5000)
    ro.add_argument("--tol", type=float, default=1e-12)
    ro.add_argument("--mode", choices=("adaptive", "fixed"), default="adaptive")
    ro.add_argument("--h", type=float, default=None, help="fixed-mode step size")
    ro.add_argument("--max-steps", type=int, default=1000000)
    ro.add_argument("--seed", type=int, default=None)
    ro.add_argument("--config", help="flat key=value overrides file")
    ro.add_argument("--out", required=True, help="output trajectory CSV")

    si = sub.add_parser("sindy", help="sparse dynamics identification")
    si_sub = si.add_subparsers(dest="sindy_command", required=True)
    sf = si_sub.add_parser("fit", help="fit a sparse model to a trajectory CSV")
    sf.add_argument("--data", required=True, help="trajectory CSV")
    sf.add_argument("--poly-degree", type=int, default=2)
    sf.add_argument("--fourier-freqs", type=int, default=1)
    sf.add_argument("--threshold", default="auto",
                    help="STLSQ threshold, or 'auto' for the sweep rule")
    sf.add_argument("--thresholds", type=_floats,
                    default=(0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 1.5),
                    help="candidate grid for --threshold auto")
    sf.add_argument("--ridge-alpha", type=float, default=0.0)
    sf.add_argument("--derivatives", choices=("fd", "file"), default="fd",
                    help="finite-difference the coordinates or trust the CSV columns")
    sf.add_argument("--seed", type=int, default=None)
    sf.add_argument("--config", help="flat key=value overrides file")
    sf.add_argument("--out", required=True, help="output model JSON")

    ex = sub.add_parser("experiment", help="run a full experiment into a results directory")
    ex.add_argument("name", choices=("spring-noise-sweep", "pendulum-noise-sweep",
                                     "activation-sweep", "even-odd-suite"))
    ex.add_argument("--sigmas", type=_floats, default=(0.0, 0.01, 0.02, 0.03))
    ex.add_argument("--n", type=int, default=5000)
    ex.add_argument("--epochs", type=int, default=2000)
    ex.add_argument("--lr", type=float, default=1e-3)
    ex.add_argument("--activation", choices=("tanh", "sigmoid", "relu", "sine"), default="tanh")
    ex.add_argument("--ridge-alpha", type=float, default=0.05)
    ex.add_argument("--seed", type=int, default=None)
    ex.add_argument("--config", help="flat key=value overrides file")
    ex.add_argument("--out", required=True, help="results directory")
    return parser


def _seed_of(args):
    return default_seed() if args.seed is None else args.seed


def cmd_generate(args):
    if args.n < 2:
        raise ShapeError("--n must be at least 2")
    if args.sigma < 0:
        raise ShapeError("--sigma must be nonnegative")
    spec = SystemSpec(args.system, m=args.m, k=args.k, g_over_l=args.g_over_l)
    traj = generate(spec, args.y0, args.n, args.t_span, NoiseSpec(args.sigma), seed=_seed_of(args))
    traj.save_csv(args.out)
    return 0


def _load_xy(args, seed):
    if args.data:
        rows = np.loadtxt(args.data, delimiter=",", skiprows=1)
        return rows[:, 0], rows[:, 1]
    if not args.target:
        raise ShapeError("either --data or --target is required for this model kind")
    rng = np.random.default_rng(seed)
    lo, hi = args.x_range
    if args.grid == "uniform":
        xs = rng.uniform(lo, hi, args.n)
    else:
        xs = np.linspace(lo, hi, args.n)
    ys = TARGET_FUNCS[args.target](xs) + args.sigma * rng.standard_normal(args.n)
    return xs, ys


def cmd_train(args):
    seed = _seed_of(args)
    out = {}
    if args.kind in ("hnn", "baseline"):
        if not args.data:
            raise ShapeError(f"--data (trajectory CSV) is required for {args.kind}")
        traj = TrajectoryData.from_csv(args.data)
        targets = np.column_stack([
            finite_difference(traj.times, traj.q),
            finite_difference(traj.times, traj.p),
        ])
        epochs = 2000 if args.epochs is None else args.epochs
        lr = 1e-3 if args.lr is None else args.lr
        activation = args.activation or "tanh"
        hidden = args.hidden or (200, 200)
        cfg = TrainConfig(epochs=epochs, learning_rate=lr, seed=seed)
        if args.kind == "hnn":
            model = HnnModel.create(activation=activation, seed=seed, hidden=hidden)
            trained, history = train_hnn(model, traj.states, targets, cfg,
                                         holdout_fraction=args.holdout)
        else:
            model = BaselineModel.create(activation=activation, seed=seed, hidden=hidden)
            trained, history = train_baseline(model, traj.states, targets, cfg)
        trained.save(args.out)
        out = {"train_loss": history[-1]["loss"]}
        if "test_loss" in history[-1]:
            out["test_loss"] = history[-1]["test_loss"]
    elif args.kind == "decomp":
        epochs = args.epochs
        if epochs is None:
            epochs = 30000 if args.target == "mixture" else 4000
        lr = 2e-3 if args.lr is None else args.lr
        if args.target in ("exp", "mixture") and "x_range" not in args._explicit:
            args.x_range = (-1.0, 1.0)
        if "sigma" not in args._explicit:
            args.sigma = 0.0
        if "n" not in args._explicit:
            args.n = 2048
        if "grid" not in args._explicit:
            args.grid = "linspace"
        xs, ys = _load_xy(args, seed)
        net = DecompositionNet.create(hidden=args.hidden or (32, 32),
                                      activation=args.activation or "tanh", seed=seed)
        trained, history = train_decomposition(
            net, Dataset(xs, ys), TrainConfig(epochs=epochs, learning_rate=lr, seed=seed))
        trained.save(args.out)
        if args.table_out:
            with open(args.table_out, "w", newline="\n") as fh:
                fh.write(decomposition_csv(decompose(trained, xs, targets=ys)))
        out = {"train_loss": history[-1]["loss"], "fit_mse": history[-1]["fit_mse"]}
    else:
        # 1-d fitters: plain, hubs, symmetry-regularized plain
        xs, ys = _load_xy(args, seed)
        epochs = 5000 if args.epochs is None else args.epochs
        lr = 1e-2 if args.lr is None else args.lr
        layers = args.layers or (1, 5, 5, 1)
        activation = args.activation or "sigmoid"
        mode = {"plain": "plain", "symmetry": "plain",
                "even-hub": "even_hub", "odd-hub": "odd_hub"}[args.kind]
        model = MLP.create(layers, activation=activation, output_mode=mode, seed=seed)
        cfg = TrainConfig(epochs=epochs, learning_rate=lr, seed=seed,
                          loss_weights={"symmetry": args.symmetry_weight})
        if args.kind == "symmetry":
            loss_spec = f"mse+{args.parity}_symmetry"
        else:
            loss_spec = "mse"
        trained, history = train(model, Dataset(xs, ys), loss_spec, cfg,
                                 monitor_parity=args.parity if args.kind != "symmetry" else None)
        trained.save(args.out)
        out = {"train_loss": history[-1]["loss"]}
        if "symmetry_metric" in history[-1]:
            out["symmetry_metric"] = history[-1]["symmetry_metric"]
    print(json.dumps(out))
    return 0


def _model_field(path):
    with open(path) as fh:
        doc = json.load(fh)
    if "model_kind" in doc and doc["model_kind"] in ("hnn", "baseline"):
        return load_dynamics_model(path).ode_field()
    if "xi" in doc:
        return SindyModel.load(path).ode_field()
    raise ShapeError(f"cannot roll out model document {path!r}")


def cmd_rollout(args):
    if args.n < 2:
        raise ShapeError("--n must be at least 2")
    if args.mode == "fixed" and not args.h:
        raise ShapeError("--mode fixed requires --h")
    field = _model_field(args.model)
    grid = np.linspace(args.t_span[0], args.t_span[1], args.n)
    sol = integrate(OdeProblem(field, np.asarray(args.y0), args.t_span,
                               mode=args.mode, h=args.h,
                               rtol=args.tol, atol=args.tol,
                               sample_times=grid, max_steps=args.max_steps))
    derivs = np.array([field(t, s) for t, s in zip(sol.times, sol.states)])
    traj = TrajectoryData(times=sol.times, q=sol.states[:, 0], p=sol.states[:, 1],
                          dq=derivs[:, 0], dp=derivs[:, 1],
                          noise_sigma=0.0, seed=_seed_of(args), source=MODEL_ROLLOUT)
    traj.save_csv(args.out)
    return 0


def cmd_sindy_fit(args):
    traj = TrajectoryData.from_csv(args.data)
    if args.derivatives == "fd":
        traj = traj.with_fd_derivatives()
    library = FeatureLibrary(args.poly_degree, args.fourier_freqs)
    seed = _seed_of(args)
    if args.threshold == "auto":
        chosen, report = threshold_sweep(traj, library, args.thresholds,
                                         StlsqConfig(ridge_alpha=args.ridge_alpha), seed=seed)
        for row in report:
            print(f"threshold {row['threshold']}: terms={row['n_terms']} mse={row['mse']}",
                  file=sys.stderr)
        print(f"chosen threshold: {chosen}", file=sys.stderr)
        threshold = chosen
    else:
        threshold = float(args.threshold)
    model = fit(traj, library, StlsqConfig(threshold, args.ridge_alpha))
    model.save(args.out)
    for line in print_equations(model):
        print(line)
    return 0


def cmd_experiment(args):
    seed = _seed_of(args)
    if args.name in ("spring-noise-sweep", "pendulum-noise-sweep"):
        system = SystemSpec("spring" if args.name.startswith("spring") else "pendulum")
        cfg = pipeline.ExperimentConfig(
            system=system, sigmas=tuple(args.sigmas), n_obs=args.n,
            hnn_epochs=args.epochs, hnn_lr=args.lr, hnn_activation=args.activation,
            ridge_alpha=args.ridge_alpha, seed=seed,
        )
        result = pipeline.noise_sweep(cfg, out_dir=args.out)
        for rec in result.records:
            status = rec.status if rec.status != "ok" else "ok"
            print(f"sigma={rec.sigma:g}: {status}" + (f" ({rec.error})" if rec.error else ""),
                  file=sys.stderr)
        return 1 if result.failed else 0
    if args.name == "activation-sweep":
        cfg = pipeline.ExperimentConfig(
            system=SystemSpec("spring"), n_obs=args.n, t_span_train=(0.0, 20.0),
            hnn_epochs=args.epochs, hnn_lr=args.lr, ridge_alpha=args.ridge_alpha,
            seed=seed,
        )
        records = pipeline.activation_sweep(cfg, out_dir=args.out)
        for act, rec in records.items():
            print(f"{act}: train {rec['final_train_loss']:.3e} test {rec['final_test_loss']:.3e}",
                  file=sys.stderr)
        return 0
    # even-odd-suite
    pipeline.even_odd_suite(args.out, seed=seed)
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = resolve(args, parser)
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "rollout":
            return cmd_rollout(args)
        if args.command == "sindy":
            return cmd_sindy_fit(args)
        if args.command == "experiment":
            return cmd_experiment(args)
        parser.error(f"unknown command {args.command!r}")
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PhysnetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
