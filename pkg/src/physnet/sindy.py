"""Sparse identification of nonlinear dynamics.

Builds polynomial + Fourier feature libraries over (q, p) states, solves
the sparse regression X_dot = Theta(X) Xi with sequentially thresholded
least squares, and renders the recovered coefficient matrix as printable
governing equations.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyModelError, ShapeError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FeatureLibrary:
    """Polynomial terms up to ``poly_degree`` (constant, monomials and
    cross terms) followed by sin(kx), cos(kx) per state per frequency.

    For two states, degree 2, one frequency the canonical order is
    [1, q, p, q^2, q p, p^2, sin(q), cos(q), sin(p), cos(p)].
    """

    poly_degree: int = 2
    fourier_freqs: int = 1
    state_names: tuple = ("q", "p")

    def __post_init__(self):
        if self.poly_degree < 0 or self.fourier_freqs < 0:
            raise ShapeError("library sizes must be nonnegative")
        object.__setattr__(self, "state_names", tuple(self.state_names))

    @property
    def n_states(self):
        return len(self.state_names)

    def _poly_exponents(self):
        """Exponent tuples in canonical order: by total degree, then
        lexicographic in the leading variable (q^2 before qp before p^2)."""
        exps = []
        for degree in range(self.poly_degree + 1):
            for combo in itertools.combinations_with_replacement(
                range(self.n_states), degree
            ):
                e = [0] * self.n_states
                for idx in combo:
                    e[idx] += 1
                exps.append(tuple(e))
        return exps

    def feature_names(self):
        names = []
        for e in self._poly_exponents():
            if sum(e) == 0:
                names.append("1")
                continue
            parts = []
            for name, k in zip(self.state_names, e):
                if k == 1:
                    parts.append(name)
                elif k > 1:
                    parts.append(f"{name}^{k}")
            names.append(" ".join(parts))
        for name in self.state_names:
            for freq in range(1, self.fourier_freqs + 1):
                arg = name if freq == 1 else f"{freq} {name}"
                names.append(f"sin({arg})")
                names.append(f"cos({arg})")
        return names

    @property
    def n_features(self):
        return len(self.feature_names())

    def transform(self, X):
        """Theta(X): (n, n_features) design matrix in canonical order."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_states:
            raise ShapeError(f"expected {self.n_states} state columns, got {X.shape[1]}")
        if not np.isfinite(X).all():
            raise ShapeError("state matrix contains non-finite values")
        cols = []
        for e in self._poly_exponents():
            col = np.ones(X.shape[0])
            for j, k in enumerate(e):
                if k:
                    col = col * X[:, j] ** k
            cols.append(col)
        for j in range(self.n_states):
            for freq in range(1, self.fourier_freqs + 1):
                cols.append(np.sin(freq * X[:, j]))
                cols.append(np.cos(freq * X[:, j]))
        theta = np.column_stack(cols)
        return theta[0] if single else theta


def build_theta(library: FeatureLibrary, X):
    return library.transform(X)


@dataclass(frozen=True)
class StlsqConfig:
    threshold: float = 0.1
    ridge_alpha: float = 0.0
    max_iter: int = 20

    def __post_init__(self):
        if self.threshold < 0:
            raise ShapeError("threshold must be nonnegative")
        if self.ridge_alpha < 0:
            raise ShapeError("ridge alpha must be nonnegative")
        if self.max_iter < 1:
            raise ShapeError("max_iter must be >= 1")


def _lstsq(theta, y, alpha):
    if alpha > 0.0:
        gram = theta.T @ theta + alpha * np.eye(theta.shape[1])
        return np.linalg.solve(gram, theta.T @ y)
    return np.linalg.lstsq(theta, y, rcond=None)[0]


def stlsq(theta, x_dot, cfg: StlsqConfig, column_names=None):
    """Sequentially thresholded least squares, per target column.

    Alternates a least-squares solve on the active feature set with hard
    zeroing of coefficients below the threshold, until the active set
    stops changing or max_iter is reached.  Off-support entries of the
    returned matrix are exact zeros.  Raises EmptyModelError if every
    feature is eliminated for some column.
    """
    theta = np.asarray(theta, dtype=np.float64)
    x_dot = np.asarray(x_dot, dtype=np.float64)
    if x_dot.ndim == 1:
        x_dot = x_dot.reshape(-1, 1)
    if theta.shape[0] != x_dot.shape[0]:
        raise ShapeError("theta and x_dot must have the same row count")
    if theta.shape[0] < theta.shape[1]:
        raise ShapeError("need at least as many samples as features")
    n_feat, n_targets = theta.shape[1], x_dot.shape[1]
    if column_names is None:
        column_names = [f"column {j}" for j in range(n_targets)]

    xi = np.zeros((n_feat, n_targets))
    for j in range(n_targets):
        active = np.ones(n_feat, dtype=bool)
        coef = _lstsq(theta, x_dot[:, j], cfg.ridge_alpha)
        for _ in range(cfg.max_iter):
            small = np.abs(coef) < cfg.threshold
            new_active = active.copy()
            new_active[np.where(active)[0][small]] = False
            coef = coef[~small]
            if not new_active.any():
                raise EmptyModelError(column_names[j], cfg.threshold)
            if new_active.sum() == active.sum():
                active = new_active
                break
            active = new_active
            coef = _lstsq(theta[:, active], x_dot[:, j], cfg.ridge_alpha)
        xi[active, j] = coef
    return xi


@dataclass
class SindyModel:
    library: FeatureLibrary
    xi: np.ndarray                      # (n_features, n_states)
    threshold: float = 0.0
    ridge_alpha: float = 0.0

    @property
    def state_names(self):
        return self.library.state_names

    @property
    def n_terms(self):
        return int(np.count_nonzero(self.xi))

    def predict(self, state):
        """Theta(state) @ Xi; usable directly as an ODE field."""
        theta = self.library.transform(state)
        return theta @ self.xi

    def ode_field(self):
        return lambda t, y: self.predict(y)

    # -- serialization ---------------------------------------------------

    def to_json_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "feature_names": self.library.feature_names(),
            "state_names": list(self.library.state_names),
            "poly_degree": self.library.poly_degree,
            "fourier_freqs": self.library.fourier_freqs,
            "xi": [list(row) for row in self.xi],
            "threshold": self.threshold,
            "alpha": self.ridge_alpha,
        }

    def save(self, path):
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_json_dict(), fh)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ShapeError(f"unsupported model schema version {doc.get('schema_version')!r}")
        library = FeatureLibrary(
            doc["poly_degree"], doc["fourier_freqs"], tuple(doc["state_names"])
        )
        xi = np.array(doc["xi"], dtype=np.float64)
        return cls(library, xi, doc.get("threshold", 0.0), doc.get("alpha", 0.0))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def fit(data, library: FeatureLibrary, cfg: StlsqConfig) -> SindyModel:
    """Fit a sparse model to a trajectory's states and derivatives.

    ``data`` is a TrajectoryData; its dq/dp series are the regression
    targets (callers choose whether those are exact, finite-differenced,
    or surrogate-model derivatives).
    """
    theta = library.transform(data.states)
    targets = data.derivatives
    names = [f"d{name}/dt" for name in library.state_names]
    xi = stlsq(theta, targets, cfg, column_names=names)
    return SindyModel(library, xi, cfg.threshold, cfg.ridge_alpha)


def predict(model: SindyModel, state):
    return model.predict(state)


def print_equations(model: SindyModel, precision: int = 4):
    """One equation string per state, terms in library order.

    ``precision`` counts significant digits for O(1) coefficients;
    coefficients print with precision-1 decimal places.  Exact-zero terms
    are omitted.
    """
    decimals = max(precision - 1, 0)
    names = model.library.feature_names()
    lines = []
    for j, state in enumerate(model.state_names):
        terms = []
        for i, fname in enumerate(names):
            c = model.xi[i, j]
            if c == 0.0:
                continue
            mag = f"{abs(c):.{decimals}f}"
            body = mag if fname == "1" else f"{mag} {fname}"
            terms.append((np.sign(c), body))
        lhs = f"{state}̇"
        if not terms:
            lines.append(f"{lhs} = 0")
            continue
        first_sign, first_body = terms[0]
        text = f"{lhs} = {'-' if first_sign < 0 else ''}{first_body}"
        for sign, body in terms[1:]:
            text += f" {'-' if sign < 0 else '+'} {body}"
        lines.append(text)
    return lines


def threshold_sweep(data, library: FeatureLibrary, thresholds, cfg: StlsqConfig,
                    seed: int = 0, val_fraction: float = 0.2):
    """Choose an STLSQ threshold per the drop-most-terms-keep-the-fit rule.

    Fits on a random 80% split at every candidate threshold and scores
    derivative MSE on the held-out 20%.  The chosen threshold is the
    largest one whose validation MSE is within 1.1x of the best across
    candidates and which empties no column.  Returns (threshold, report)
    where the report rows are dicts with threshold/n_terms/mse entries
    (failed thresholds carry mse=inf).
    """
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds:
        raise ShapeError("need at least one candidate threshold")
    rng = np.random.default_rng(seed)
    n = len(data.times)
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    theta_train = library.transform(data.states[train_idx])
    theta_val = library.transform(data.states[val_idx])
    d_train = data.derivatives[train_idx]
    d_val = data.derivatives[val_idx]
    names = [f"d{name}/dt" for name in library.state_names]

    report = []
    for thr in thresholds:
        row = {"threshold": thr, "n_terms": 0, "mse": np.inf}
        try:
            xi = stlsq(theta_train, d_train, StlsqConfig(thr, cfg.ridge_alpha, cfg.max_iter),
                       column_names=names)
        except EmptyModelError:
            report.append(row)
            continue
        resid = theta_val @ xi - d_val
        row["n_terms"] = int(np.count_nonzero(xi))
        row["mse"] = float(np.mean(resid**2))
        report.append(row)

    finite = [r for r in report if np.isfinite(r["mse"])]
    if not finite:
        raise EmptyModelError("all columns", f"every threshold in {thresholds}")
    best = min(r["mse"] for r in finite)
    ok = [r for r in finite if r["mse"] <= 1.1 * best]
    chosen = max(r["threshold"] for r in ok)
    return chosen, report
