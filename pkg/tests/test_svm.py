import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from mvsleep.epoching import kfold, zscore_fit_apply
from mvsleep.features import FeatureMatrix
from mvsleep.svm import (
    SvmConfig,
    cross_validate,
    load_model,
    predict,
    predict_binary,
    save_model,
    train_binary,
    train_multiclass,
)

TIGHT = SvmConfig(tolerance=1e-11, max_iter=20000)


def _blobs(per_class=60, seed=0, spread=0.6):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    X = np.concatenate([c + spread * rng.normal(size=(per_class, 2)) for c in centers])
    y = np.repeat(np.arange(len(centers)), per_class)
    return X, y


def _reference_objective(X, y, C):
    def value(theta):
        w, b = theta[:-1], theta[-1]
        slack = np.maximum(0.0, 1.0 - y * (X @ w + b))
        coef = -2.0 * C * y * slack
        return C * np.sum(slack**2) + 0.5 * w @ w, np.append(w + X.T @ coef, coef.sum())

    return value


def test_symmetric_one_dimensional_problem():
    """x = -1, +1 with C = 1: minimize 2(1 - w)^2 + w^2 / 2."""
    result = train_binary(np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0]), TIGHT)

    assert result.converged
    assert result.w[0] == pytest.approx(0.8, abs=1e-9)
    assert result.b == pytest.approx(0.0, abs=1e-9)
    assert result.objective == pytest.approx(0.4, abs=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_matches_generic_optimizer(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    y = np.where(X @ rng.normal(size=3) + 0.5 * rng.normal(size=40) >= 0, 1.0, -1.0)
    C = float(rng.choice([0.1, 1.0, 10.0]))

    result = train_binary(X, y, SvmConfig(C=C, tolerance=1e-9, max_iter=50000))
    reference = minimize(
        _reference_objective(X, y, C), np.zeros(4), jac=True, method="BFGS", options={"gtol": 1e-10}
    )

    assert result.objective == pytest.approx(reference.fun, rel=1e-6, abs=1e-9)


def test_objective_is_monotone():
    X, y = _blobs(seed=1)
    result = train_binary(X, np.where(y == 0, 1.0, -1.0), SvmConfig(tolerance=1e-6, max_iter=20000))
    assert len(result.history) > 1
    assert np.all(np.diff(result.history) <= 0)


def test_restart_from_random_start_reaches_same_objective():
    X, y = _blobs(seed=2)
    labels = np.where(y == 1, 1.0, -1.0)
    config = SvmConfig(tolerance=1e-6, max_iter=20000)
    rng = np.random.default_rng(12)

    first = train_binary(X, labels, config)
    second = train_binary(X, labels, config, init=(rng.normal(size=2) * 3, float(rng.normal())))

    assert first.converged and second.converged
    assert second.n_iter > 0
    assert second.objective == pytest.approx(first.objective, rel=1e-3)


def test_restart_from_optimum_is_stable():
    X, y = _blobs(seed=2)
    labels = np.where(y == 1, 1.0, -1.0)
    config = SvmConfig(tolerance=1e-6, max_iter=20000)
    first = train_binary(X, labels, config)
    second = train_binary(X, labels, config, init=(first.w, first.b))

    assert first.converged
    assert second.n_iter == 0
    np.testing.assert_array_equal(second.w, first.w)


def test_lbfgs_agrees_with_descent():
    X, y = _blobs(seed=3)
    labels = np.where(y == 2, 1.0, -1.0)
    gd = train_binary(X, labels, SvmConfig(tolerance=1e-8, max_iter=20000))
    lbfgs = train_binary(X, labels, SvmConfig(tolerance=1e-8, max_iter=20000, solver="lbfgs"))
    assert lbfgs.objective == pytest.approx(gd.objective, rel=1e-5)


def test_multiclass_on_separable_blobs():
    X, y = _blobs(seed=4)
    (X_z,), transform = zscore_fit_apply(X)
    model = train_multiclass(X_z, y, normalization=transform)

    assert model.classes.tolist() == [0, 1, 2]
    assert np.mean(predict(model, X) == y) >= 0.98


def test_hinge_loss_on_separable_blobs():
    X, y = _blobs(seed=5, spread=0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = train_multiclass(X, y, SvmConfig(loss="hinge", max_iter=2000))
    assert np.mean(predict(model, X) == y) >= 0.95


def test_single_class_predicted_everywhere():
    X = np.random.default_rng(0).normal(size=(10, 3))
    model = train_multiclass(X, np.full(10, 2))

    assert model.classes.tolist() == [2]
    assert predict(model, np.random.default_rng(1).normal(size=(5, 3))).tolist() == [2] * 5


def test_classes_follow_training_labels():
    X, y = _blobs(seed=6)
    keep = y != 1
    model = train_multiclass(X[keep], y[keep])
    assert set(predict(model, X).tolist()) <= {0, 2}


def test_predict_binary_zero_score_is_positive():
    w = np.array([2.0])
    assert predict_binary(w, -1.0, np.array([[0.5], [0.4], [0.6]])).tolist() == [1, -1, 1]


def test_folded_model_predicts_identically():
    X, y = _blobs(seed=7)
    (X_z,), transform = zscore_fit_apply(X)
    model = train_multiclass(X_z, y, normalization=transform)
    folded = model.folded()

    np.testing.assert_allclose(folded.scores(X), model.scores(X), atol=1e-9)
    np.testing.assert_array_equal(predict(folded, X), predict(model, X))


def test_nonconvergence_warns():
    X, y = _blobs(seed=8)
    with pytest.warns(UserWarning, match="without reaching tolerance"):
        result = train_binary(X, np.where(y == 0, 1.0, -1.0), SvmConfig(max_iter=2))
    assert not result.converged


def test_input_validation():
    with pytest.raises(ValueError, match="-1 or \\+1"):
        train_binary(np.ones((2, 1)), np.array([0.0, 1.0]))
    with pytest.raises(ValueError, match="NaN"):
        train_binary(np.array([[np.nan], [1.0]]), np.array([-1.0, 1.0]))
    with pytest.raises(ValueError, match="C must be"):
        SvmConfig(C=0.0)


def test_dimension_mismatch_on_predict():
    X, y = _blobs(seed=9)
    model = train_multiclass(X, y)
    with pytest.raises(ValueError, match="Dimension mismatch"):
        predict(model, np.ones((2, 3)))


def test_model_round_trip(output_dir):
    X, y = _blobs(seed=10)
    (X_z,), transform = zscore_fit_apply(X)
    model = train_multiclass(X_z, y, normalization=transform)

    path = save_model(output_dir / "model.ssvm", model, config_hash="c0ffee", seed=4)
    restored, metadata = load_model(path)

    assert metadata["config_hash"] == "c0ffee"
    assert metadata["seed"] == 4
    np.testing.assert_array_equal(restored.weights, model.weights)
    np.testing.assert_array_equal(restored.biases, model.biases)
    np.testing.assert_array_equal(restored.std, model.std)
    np.testing.assert_array_equal(predict(restored, X), predict(model, X))


def test_model_round_trip_keeps_convergence_flags(output_dir):
    X, y = _blobs(seed=11)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = train_multiclass(X, y, SvmConfig(max_iter=2))

    restored, metadata = load_model(save_model(output_dir / "partial.ssvm", model))

    assert model.converged == (False, False, False)
    assert restored.converged == model.converged
    assert metadata["converged"] == [False, False, False]


def _subject_blobs():
    X, y = _blobs(per_class=20, seed=13)
    subjects = np.array([f"S{i % 4}" for i in range(len(y))])
    return FeatureMatrix(X.astype(np.float32), y, subjects, "concat")


def test_cross_validate_over_subject_folds():
    matrix = _subject_blobs()
    folds = kfold(sorted(set(matrix.subjects.tolist())), k=4, seed=0)
    seen = []

    reports, converged = cross_validate(matrix, folds, SvmConfig(solver="lbfgs"), on_fold=seen.append)

    assert seen == [0, 1, 2, 3]
    assert [r.fold for r in reports] == [0, 1, 2, 3]
    assert sum(r.confusion.total for r in reports) == len(matrix)
    assert len(converged) == 4 * 3
    assert np.mean([r.accuracy for r in reports]) >= 0.95


def test_cross_validate_drops_unlabeled_rows():
    matrix = _subject_blobs()
    labels = matrix.labels.copy()
    labels[::5] = -1
    partial = FeatureMatrix(matrix.values, labels, matrix.subjects, "concat")
    folds = kfold(sorted(set(matrix.subjects.tolist())), k=2, seed=0)

    reports, _ = cross_validate(partial, folds, SvmConfig(solver="lbfgs"))

    assert sum(r.confusion.total for r in reports) == int((labels >= 0).sum())
