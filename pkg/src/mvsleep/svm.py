"""
One-vs-rest Linear SVM.

Each binary problem minimizes

    C * sum_i loss(1 - y_i (w.x_i + b)) + 0.5 * w.w

with loss(u) = max(0, u)^2 (squared hinge, default) or max(0, u) (hinge).
The bias is an explicit, unregularized variable.
"""

import struct
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.optimize import minimize

from .artifacts import read_artifact, write_artifact
from .epoching import FoldAssignment, ZScore, zscore_fit_apply
from .features import FeatureMatrix
from .metrics import FoldReport

MODEL_MAGIC = b"SSVM"

_ARMIJO = 1e-4
_MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    tolerance: float = 1e-4
    max_iter: int = 1000
    loss: Literal["squared_hinge", "hinge"] = "squared_hinge"
    solver: Literal["gd", "lbfgs"] = "gd"

    def __post_init__(self) -> None:
        if self.C <= 0:
            raise ValueError(f"C must be > 0, got {self.C}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.loss not in ("squared_hinge", "hinge"):
            raise ValueError(f"Unknown loss '{self.loss}'")
        if self.solver not in ("gd", "lbfgs"):
            raise ValueError(f"Unknown solver '{self.solver}'")


@dataclass(frozen=True)
class BinaryResult:
    w: np.ndarray
    b: float
    objective: float
    n_iter: int
    converged: bool
    history: tuple[float, ...] = ()


@dataclass(frozen=True)
class SvmModel:
    """
    Per-class (w, b) over z-scored inputs.

    `mean`/`std` hold the normalization applied before scoring; raw features
    go in, the transform is applied inside `scores`.
    """

    weights: np.ndarray
    biases: np.ndarray
    classes: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    converged: tuple[bool, ...] = field(default=())

    def __post_init__(self) -> None:
        k, d = self.weights.shape
        if self.biases.shape != (k,) or self.classes.shape != (k,):
            raise ValueError("Need one (w, b) per class")
        if self.mean.shape != (d,) or self.std.shape != (d,):
            raise ValueError(f"Normalization must have {d} entries")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("SVM parameters must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(
                f"Dimension mismatch: model expects {self.dim} features, got shape {X.shape}"
            )
        return ZScore(self.mean, self.std).apply(X) @ self.weights.T + self.biases

    def folded(self) -> "SvmModel":
        """The same decision function with the normalization absorbed into (w, b)."""
        weights = self.weights / self.std
        biases = self.biases - weights @ self.mean
        return SvmModel(
            weights=weights,
            biases=biases,
            classes=self.classes,
            mean=np.zeros(self.dim),
            std=np.ones(self.dim),
            converged=self.converged,
        )


def _check_inputs(X: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"X must be a nonempty [m, d] matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("Features contain NaN or infinite values")
    if y is not None and len(y) != X.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {len(y)} labels")
    return X


def _objective(
    theta: np.ndarray, X: np.ndarray, y: np.ndarray, config: SvmConfig
) -> tuple[float, np.ndarray]:
    """Objective value and (sub)gradient at theta = [w, b]."""
    w, b = theta[:-1], theta[-1]
    slack = np.maximum(0.0, 1.0 - y * (X @ w + b))
    if config.loss == "squared_hinge":
        value = config.C * float(slack @ slack) + 0.5 * float(w @ w)
        coef = -2.0 * config.C * y * slack
    else:
        value = config.C * float(slack.sum()) + 0.5 * float(w @ w)
        coef = -config.C * y * (slack > 0)
    grad = np.empty_like(theta)
    grad[:-1] = w + X.T @ coef
    grad[-1] = coef.sum()
    return value, grad


def _descend(
    theta: np.ndarray, X: np.ndarray, y: np.ndarray, config: SvmConfig
) -> tuple[np.ndarray, float, int, bool, list[float]]:
    value, grad = _objective(theta, X, y, config)
    history = [value]
    step = 1.0
    for iteration in range(config.max_iter):
        if np.max(np.abs(grad)) < config.tolerance:
            return theta, value, iteration, True, history
        sq_norm = float(grad @ grad)
        for _ in range(_MAX_BACKTRACKS):
            candidate = theta - step * grad
            new_value, new_grad = _objective(candidate, X, y, config)
            if new_value <= value - _ARMIJO * step * sq_norm:
                break
            step *= 0.5
        else:
            # No decrease at any step size: a kink of the hinge or float resolution
            return theta, value, iteration, False, history
        theta, value, grad = candidate, new_value, new_grad
        history.append(value)
        step = min(step * 2.0, 1e6)
    converged = bool(np.max(np.abs(grad)) < config.tolerance)
    return theta, value, config.max_iter, converged, history


def _lbfgs(
    theta: np.ndarray, X: np.ndarray, y: np.ndarray, config: SvmConfig
) -> tuple[np.ndarray, float, int, bool, list[float]]:
    history = [_objective(theta, X, y, config)[0]]
    result = minimize(
        _objective,
        theta,
        args=(X, y, config),
        jac=True,
        method="L-BFGS-B",
        callback=lambda xk: history.append(_objective(xk, X, y, config)[0]),
        options={"maxiter": config.max_iter, "gtol": config.tolerance},
    )
    return result.x, float(result.fun), int(result.nit), bool(result.success), history


def train_binary(
    X: np.ndarray,
    y: np.ndarray,
    config: SvmConfig | None = None,
    init: tuple[np.ndarray, float] | None = None,
) -> BinaryResult:
    """
    Solve one binary problem by full-batch descent with backtracking line search.

    Stops when the largest gradient entry drops below `config.tolerance` or
    after `config.max_iter` iterations (with a warning and `converged=False`).

    Args:
        X: [m, d] features.
        y: Labels in {-1, +1}.
        init: Optional starting (w, b); zeros otherwise.
    """
    config = config or SvmConfig()
    X = _check_inputs(X, y)
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("Binary labels must be -1 or +1")
    theta = np.zeros(X.shape[1] + 1)
    if init is not None:
        theta[:-1] = init[0]
        theta[-1] = init[1]

    solve = _lbfgs if config.solver == "lbfgs" else _descend
    theta, value, n_iter, converged, history = solve(theta, X, y, config)
    if not converged:
        warnings.warn(
            f"SVM solver stopped after {n_iter} iterations without reaching "
            f"tolerance {config.tolerance} (objective {value:.6g})",
            UserWarning,
            stacklevel=2,
        )
    return BinaryResult(
        w=theta[:-1].copy(),
        b=float(theta[-1]),
        objective=value,
        n_iter=n_iter,
        converged=converged,
        history=tuple(history),
    )


def predict_binary(w: np.ndarray, b: float, X: np.ndarray) -> np.ndarray:
    """sign(w.x + b) with score 0 mapped to +1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(w):
        raise ValueError(f"Dimension mismatch: w has {len(w)} entries, X has {X.shape[1]}")
    return np.where(X @ w + b >= 0, 1, -1)


def train_multiclass(
    X: np.ndarray,
    y: np.ndarray,
    config: SvmConfig | None = None,
    normalization: ZScore | None = None,
) -> SvmModel:
    """
    One-vs-rest over the classes present in `y`.

    Args:
        X: Features, already normalized with `normalization` when one is given.
        normalization: Stored in the model so `predict` accepts raw features.
    """
    config = config or SvmConfig()
    X = _check_inputs(X, y)
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) == 0:
        raise ValueError("No classes to train on")
    results = [
        train_binary(X, np.where(y == c, 1.0, -1.0), config) for c in classes
    ]
    d = X.shape[1]
    return SvmModel(
        weights=np.stack([r.w for r in results]),
        biases=np.array([r.b for r in results]),
        classes=classes.astype(np.int64),
        mean=np.zeros(d) if normalization is None else np.asarray(normalization.mean),
        std=np.ones(d) if normalization is None else np.asarray(normalization.std),
        converged=tuple(r.converged for r in results),
    )


def predict(model: SvmModel, X: np.ndarray) -> np.ndarray:
    """Class with the highest score; ties go to the lowest class id."""
    return model.classes[np.argmax(model.scores(X), axis=1)]


def cross_validate(
    features: FeatureMatrix,
    folds: FoldAssignment,
    config: SvmConfig | None = None,
    on_fold: Callable[[int], None] | None = None,
) -> tuple[list[FoldReport], list[bool]]:
    """
    Subject-level k-fold scoring of the one-vs-rest SVM on labeled rows.

    The z-score transform is fitted on each training side only.

    Returns:
        One report per fold, and the convergence flag of every binary problem.
    """
    labeled = features.labeled
    reports: list[FoldReport] = []
    converged: list[bool] = []
    for fold, (train_rows, test_rows) in enumerate(folds.splits(labeled.subjects)):
        if len(train_rows) == 0 or len(test_rows) == 0:
            raise ValueError(f"Fold {fold} has an empty train or test side")
        (train_x,), transform = zscore_fit_apply(labeled.values[train_rows])
        model = train_multiclass(train_x, labeled.labels[train_rows], config, transform)
        converged.extend(model.converged)
        predicted = predict(model, labeled.values[test_rows])
        reports.append(FoldReport.from_labels(fold, labeled.labels[test_rows], predicted))
        if on_fold is not None:
            on_fold(fold)
    return reports, converged


def save_model(
    path: str | Path, model: SvmModel, config_hash: str = "", seed: int | None = None
) -> Path:
    k, d = model.weights.shape
    body = bytearray(struct.pack("<II", k, d))
    for c in range(k):
        body += struct.pack("<I", int(model.classes[c]))
        body += model.weights[c].astype("<f8").tobytes()
        body += struct.pack("<d", float(model.biases[c]))
    body += model.mean.astype("<f8").tobytes() + model.std.astype("<f8").tobytes()
    return write_artifact(
        path,
        MODEL_MAGIC,
        {
            "config_hash": config_hash,
            "classes": k,
            "dim": d,
            "seed": seed,
            "converged": [bool(flag) for flag in model.converged],
        },
        bytes(body),
    )


def load_model(path: str | Path) -> tuple[SvmModel, dict]:
    metadata, body = read_artifact(path, MODEL_MAGIC)
    try:
        k, d = struct.unpack_from("<II", body, 0)
        if (metadata.get("classes"), metadata.get("dim")) != (k, d):
            raise ValueError(
                f"Metadata ({metadata.get('classes')}, {metadata.get('dim')}) "
                f"disagrees with body ({k}, {d})"
            )
        offset = 8
        classes = np.empty(k, dtype=np.int64)
        weights = np.empty((k, d))
        biases = np.empty(k)
        for c in range(k):
            (classes[c],) = struct.unpack_from("<I", body, offset)
            offset += 4
            weights[c] = np.frombuffer(body, dtype="<f8", count=d, offset=offset)
            offset += 8 * d
            (biases[c],) = struct.unpack_from("<d", body, offset)
            offset += 8
        mean = np.frombuffer(body, dtype="<f8", count=d, offset=offset).copy()
        std = np.frombuffer(body, dtype="<f8", count=d, offset=offset + 8 * d).copy()
    except struct.error as e:
        raise ValueError(f"Truncated SVM model {path}: {e}") from e
    converged = tuple(bool(flag) for flag in metadata.get("converged", ()))
    return SvmModel(weights, biases, classes, mean, std, converged), metadata
