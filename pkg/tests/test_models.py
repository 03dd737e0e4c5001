"""Classifier correctness: hand-computed values, independent oracles,
gradient checks, persistence round-trips."""
import warnings

import numpy as np
import pytest

from mortbench.errors import (
    DegenerateFold,
    EmptyChild,
    InvalidConfig,
    ShapeMismatch,
    SingleClassInput,
)
from mortbench.models import (
    FAMILIES,
    ClassifierSpec,
    TrainedModel,
    cart_split_gain,
    default_specs,
    default_threshold,
    fit,
    gini,
    grid_search_cv,
    load_model,
    make_spec,
    mlp_grid,
    save_model,
    stratified_fold_indices,
)
from mortbench.models.boosting import GradientBoostingModel, best_newton_split
from mortbench.models.logistic import lr_loss_grad
from mortbench.models.mlp import mlp_loss_grad
from mortbench.models.tree import best_gini_split


def _blob_problem(rng, n=120, p=4, shift=1.5):
    """Two shifted gaussian blobs; easy but not degenerate."""
    half = n // 2
    X = np.vstack([rng.normal(size=(half, p)) - shift / 2,
                   rng.normal(size=(n - half, p)) + shift / 2])
    y = np.r_[np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)]
    perm = rng.permutation(n)
    return X[perm], y[perm]


# --- gini / split search ------------------------------------------------------

def test_gini_hand_values():
    assert gini(np.array([0, 0, 1, 1])) == 0.5
    assert gini(np.array([0, 0, 0])) == 0.0
    assert gini(np.array([1])) == 0.0
    assert gini(np.array([])) == 0.0
    assert abs(gini(np.array([0, 1, 1, 1])) - 0.375) < 1e-15


def test_cart_split_gain_hand_values():
    node = np.array([0, 0, 1, 1])
    assert cart_split_gain(node, np.array([0, 0]), np.array([1, 1])) == 0.5
    assert cart_split_gain(node, np.array([0, 1]), np.array([0, 1])) == 0.0


def test_cart_split_gain_empty_child():
    node = np.array([0, 1])
    with pytest.raises(EmptyChild):
        cart_split_gain(node, np.array([], dtype=int), node)


def test_cart_split_gain_partition_check():
    with pytest.raises(ValueError):
        cart_split_gain(np.array([0, 1, 1]), np.array([0]), np.array([1]))


def test_best_gini_split_hand_example():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    j, thr, weighted = best_gini_split(X, y, np.arange(4), np.array([0]))
    assert j == 0
    assert thr == 2.5
    assert weighted == 0.0


def test_best_gini_split_tie_prefers_lowest_feature():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    X = np.column_stack([x, x])                 # duplicate perfect splitter
    y = np.array([0, 0, 1, 1])
    j, thr, _ = best_gini_split(X, y, np.arange(4), np.arange(2))
    assert j == 0 and thr == 2.5


def test_best_gini_split_no_boundary():
    X = np.full((5, 2), 3.0)
    y = np.array([0, 1, 0, 1, 0])
    assert best_gini_split(X, y, np.arange(5), np.arange(2)) is None


def test_tree_solves_parity_at_depth_two():
    # zero-gain root split must still happen, otherwise parity stays impure
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    model = fit(make_spec("dt"), X, y)
    assert model.metadata["depth"] == 2
    assert np.array_equal(model.predict_label(X), y)
    assert np.array_equal(model.predict_score(X), y.astype(float))


def test_tree_min_samples_leaf(rng):
    X, y = _blob_problem(rng, n=60, p=2)
    model = fit(make_spec("dt", min_samples_leaf=10), X, y)
    counts = model.impl.tree.value
    leaves = model.impl.tree.feature < 0
    assert (counts[leaves].sum(axis=1) >= 10).all()


# --- logistic regression ------------------------------------------------------

def test_lr_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(25, 4))
    y_pm = np.where(rng.random(25) < 0.5, -1.0, 1.0)
    theta = rng.normal(scale=0.5, size=5)
    _, grad = lr_loss_grad(theta, X, y_pm, C=1.3)
    h = 1e-6
    num = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        lp, _ = lr_loss_grad(theta + e, X, y_pm, 1.3)
        lm, _ = lr_loss_grad(theta - e, X, y_pm, 1.3)
        num[k] = (lp - lm) / (2 * h)
    assert np.allclose(grad, num, rtol=1e-6, atol=1e-7)


def test_lr_reaches_stationary_point(rng):
    X, y = _blob_problem(rng)
    model = fit(make_spec("lr"), X, y)
    theta = np.r_[model.impl.coef, model.impl.intercept]
    _, grad = lr_loss_grad(theta, X, 2.0 * y - 1.0, C=1.0)
    assert model.metadata["converged"]
    assert np.abs(grad).max() < 1e-3


def test_lr_warns_when_stopped_early(rng):
    X, y = _blob_problem(rng)
    with pytest.warns(RuntimeWarning):
        model = fit(make_spec("lr", max_iter=1), X, y)
    assert not model.metadata["converged"]


def test_lr_score_is_probability(rng):
    X, y = _blob_problem(rng)
    s = fit(make_spec("lr"), X, y).predict_score(X)
    assert ((s > 0) & (s < 1)).all()


# --- svm ------------------------------------------------------------------

def _rbf_kernel(A, B, gamma):
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-gamma * d2)


def test_svm_dual_feasibility_and_kkt(rng):
    X, y = _blob_problem(rng, n=80, p=3)
    model = fit(make_spec("svm"), X, y)
    impl = model.impl
    alpha = impl.alpha
    y_pm = 2.0 * y - 1.0
    assert (alpha >= -1e-12).all() and (alpha <= impl.C + 1e-12).all()
    assert abs(float(y_pm @ alpha)) < 1e-9
    K = _rbf_kernel(X, X, impl.gamma_value)
    G = (y_pm[:, None] * y_pm[None, :] * K) @ alpha - 1.0
    neg_yG = -y_pm * G
    up = ((y_pm > 0) & (alpha < impl.C)) | ((y_pm < 0) & (alpha > 0))
    low = ((y_pm < 0) & (alpha < impl.C)) | ((y_pm > 0) & (alpha > 0))
    assert neg_yG[up].max() - neg_yG[low].min() <= impl.tol + 1e-9


@pytest.mark.parametrize("C,gamma", [(1.0, 0.5), (10.0, 0.2)])
def test_svm_matches_qp_oracle(C, gamma):
    # independent solution of the same dual via a generic QP solver
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers

    rng = np.random.default_rng(11)
    n = 40
    X = rng.normal(size=(n, 3))
    y = (X[:, 0] * X[:, 1] + 0.3 * X[:, 2] > 0).astype(np.int64)
    y_pm = 2.0 * y - 1.0
    K = _rbf_kernel(X, X, gamma)
    Q = y_pm[:, None] * y_pm[None, :] * K

    solvers.options["show_progress"] = False
    sol = solvers.qp(
        matrix(Q + 1e-10 * np.eye(n)), matrix(-np.ones(n)),
        matrix(np.vstack([-np.eye(n), np.eye(n)])),
        matrix(np.r_[np.zeros(n), np.full(n, C)]),
        matrix(y_pm[None, :]), matrix(np.zeros(1)))
    a_ref = np.asarray(sol["x"]).ravel()
    obj_ref = 0.5 * a_ref @ Q @ a_ref - a_ref.sum()
    b_ref = float(np.asarray(sol["y"])[0, 0])   # equality multiplier = intercept

    model = fit(make_spec("svm", C=C, gamma=gamma, tol=1e-8), X, y)
    a = model.impl.alpha
    obj = 0.5 * a @ Q @ a - a.sum()
    # never worse than the oracle beyond its own residual, and close to it
    assert obj <= obj_ref + 1e-6
    assert abs(obj - obj_ref) < 1e-4 * max(1.0, abs(obj_ref))

    probe = rng.normal(size=(25, 3))
    f_ref = _rbf_kernel(probe, X, gamma) @ (a_ref * y_pm) + b_ref
    f_got = model.predict_score(probe)
    assert np.abs(f_got - f_ref).max() < 5e-4


def test_svm_gamma_scale_rule(rng):
    X, y = _blob_problem(rng, n=60, p=5)
    model = fit(make_spec("svm"), X, y)
    assert abs(model.metadata["gamma_value"] - 1.0 / (5 * X.var())) < 1e-12


def test_svm_warns_at_iteration_cap(rng):
    X, y = _blob_problem(rng, n=60, p=3)
    with pytest.warns(RuntimeWarning):
        model = fit(make_spec("svm", max_iter=2), X, y)
    assert not model.metadata["converged"]
    assert model.predict_score(X).shape == (60,)


# --- knn --------------------------------------------------------------------

def _knn_oracle(Xtr, ytr, Xq, k):
    out = []
    for q in Xq:
        d2 = ((Xtr - q) ** 2).sum(axis=1)
        order = sorted(range(len(Xtr)), key=lambda r: (d2[r], r))
        out.append(ytr[list(order[:k])].mean())
    return np.array(out)


def test_knn_matches_loop_oracle_with_ties(rng):
    # integer grid coordinates force exact distance ties
    Xtr = rng.integers(0, 4, size=(30, 2)).astype(float)
    ytr = rng.integers(0, 2, size=30).astype(np.int64)
    Xq = rng.integers(0, 4, size=(20, 2)).astype(float)
    model = fit(make_spec("knn"), Xtr, ytr)
    got = model.predict_score(Xq)
    assert np.array_equal(got, _knn_oracle(Xtr, ytr, Xq, 5))


def test_knn_chunked_equals_unchunked(rng):
    Xtr = rng.normal(size=(40, 3))
    ytr = rng.integers(0, 2, size=40).astype(np.int64)
    Xq = rng.normal(size=(17, 3))
    model = fit(make_spec("knn"), Xtr, ytr)
    assert np.array_equal(model.impl.kneighbors(Xq, chunk=3),
                          model.impl.kneighbors(Xq))


def test_knn_k_equals_train_size(rng):
    Xtr = rng.normal(size=(6, 2))
    ytr = np.array([0, 1, 0, 1, 0, 1])
    model = fit(make_spec("knn", k=6), Xtr, ytr)
    assert np.allclose(model.predict_score(rng.normal(size=(4, 2))), 0.5)


def test_knn_k_larger_than_train_rejected(rng):
    Xtr = rng.normal(size=(4, 2))
    with pytest.raises(ValueError):
        fit(make_spec("knn", k=5), Xtr, np.array([0, 1, 0, 1]))


# --- random forest ------------------------------------------------------------

def test_forest_deterministic_across_fits(rng):
    X, y = _blob_problem(rng, n=80, p=6)
    spec = make_spec("rf", n_estimators=10)
    a = fit(spec, X, y)
    b = fit(spec, X, y)
    for key, arr in a.impl.state_arrays().items():
        assert np.array_equal(arr, b.impl.state_arrays()[key])


def test_forest_row_permutation_invariance_with_ids(rng):
    X, y = _blob_problem(rng, n=80, p=6)
    ids = 1000 + np.arange(80)
    perm = rng.permutation(80)
    spec = make_spec("rf", n_estimators=10)
    a = fit(spec, X, y, row_ids=ids)
    b = fit(spec, X[perm], y[perm], row_ids=ids[perm])
    probe = rng.normal(size=(30, 6))
    assert np.array_equal(a.predict_score(probe), b.predict_score(probe))
    for key, arr in a.impl.state_arrays().items():
        assert np.array_equal(arr, b.impl.state_arrays()[key])


def test_forest_uses_sqrt_features(rng):
    X, y = _blob_problem(rng, n=60, p=6)
    model = fit(make_spec("rf", n_estimators=3), X, y)
    assert model.metadata["max_features"] == 2


# --- gradient boosting ----------------------------------------------------------

def test_newton_split_hand_gain():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    g = np.array([0.5, 0.5, -0.5, -0.5])
    h = np.full(4, 0.25)
    j, thr, gain = best_newton_split(X, g, h, np.arange(4), lam=1.0, gamma=0.0,
                                     min_child_weight=0.0)
    assert j == 0 and thr == 2.5
    assert abs(gain - 2.0 / 3.0) < 1e-12


def test_boosting_single_round_hand_values():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    m = GradientBoostingModel(n_rounds=1, max_depth=1, learning_rate=0.1,
                              reg_lambda=1.0, gamma=0.0, min_child_weight=0.0)
    m.fit(X, y)
    tree = m.trees[0]
    assert tree.feature[0] == 0 and tree.threshold[0] == 2.5
    assert abs(tree.value[1, 0] + 2.0 / 3.0) < 1e-12     # left leaf
    assert abs(tree.value[2, 0] - 2.0 / 3.0) < 1e-12     # right leaf
    score = m.predict_score(np.array([[4.0]]))[0]
    assert abs(score - 1.0 / (1.0 + np.exp(-1.0 / 15.0))) < 1e-12
    assert abs(m.train_loss[0] - np.logaddexp(0.0, -1.0 / 15.0)) < 1e-12


def test_boosting_zero_rounds_scores_half(rng):
    X, y = _blob_problem(rng, n=40, p=2)
    model = fit(make_spec("gbt", n_rounds=0), X, y)
    assert np.all(model.predict_score(X) == 0.5)
    assert model.impl.train_loss == []
    assert model.metadata["final_loss"] is None


def test_boosting_training_loss_never_increases(rng):
    X, y = _blob_problem(rng, n=100, p=3)
    model = fit(make_spec("gbt", n_rounds=25, max_depth=2), X, y)
    loss = np.asarray(model.impl.train_loss)
    assert len(loss) == 25
    assert (np.diff(loss) <= 1e-12).all()
    assert loss[0] < np.log(2.0)      # the first round must already help


# --- mlp ------------------------------------------------------------------

def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    layers = [3, 5, 2, 1]
    n_params = sum((a + 1) * b for a, b in zip(layers[:-1], layers[1:]))
    flat = rng.normal(scale=0.4, size=n_params)
    X = rng.normal(size=(12, 3))
    y = rng.integers(0, 2, size=12).astype(float)
    _, grad = mlp_loss_grad(flat, layers, X, y, alpha=0.3)
    h = 1e-6
    num = np.empty_like(flat)
    for k in range(n_params):
        e = np.zeros_like(flat)
        e[k] = h
        lp, _ = mlp_loss_grad(flat + e, layers, X, y, 0.3)
        lm, _ = mlp_loss_grad(flat - e, layers, X, y, 0.3)
        num[k] = (lp - lm) / (2 * h)
    assert np.allclose(grad, num, rtol=1e-5, atol=1e-8)


def test_mlp_learns_and_stops_early(rng):
    X, y = _blob_problem(rng, n=160, p=3, shift=3.0)
    model = fit(make_spec("mlp", hidden=(8,), max_epochs=200, patience=10,
                          batch_size=32, learning_rate=0.01), X, y)
    assert model.metadata["converged"]
    assert model.metadata["epochs"] < 200
    acc = float((model.predict_label(X) == y).mean())
    assert acc > 0.95


def test_mlp_deterministic_given_seed(rng):
    X, y = _blob_problem(rng, n=80, p=3)
    spec = make_spec("mlp", hidden=(6,), max_epochs=8, batch_size=32)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = fit(spec, X, y)
        b = fit(spec, X, y)
    for key, arr in a.impl.state_arrays().items():
        assert np.array_equal(arr, b.impl.state_arrays()[key])


# --- spec validation / facade ---------------------------------------------------

def test_spec_rejects_unknown_family():
    with pytest.raises(InvalidConfig):
        make_spec("boost")


def test_spec_rejects_unknown_hyperparameter():
    with pytest.raises(InvalidConfig):
        make_spec("knn", n_neighbors=5)


@pytest.mark.parametrize("family,bad", [
    ("lr", {"C": -1.0}),
    ("svm", {"gamma": 0.0}),
    ("knn", {"k": 0}),
    ("rf", {"n_estimators": 0}),
    ("gbt", {"learning_rate": 0.0}),
    ("mlp", {"hidden": ()}),
])
def test_spec_rejects_bad_values(family, bad):
    with pytest.raises(InvalidConfig):
        make_spec(family, **bad)


def test_default_specs_cover_every_family():
    specs = default_specs()
    assert [s.family for s in specs] == list(FAMILIES)
    grid = mlp_grid()
    assert [s.hyperparameters["hidden"] for s in grid] == [(100,), (50, 50)]


def test_fit_rejects_bad_inputs(rng):
    X = rng.normal(size=(10, 2))
    y = np.array([0, 1] * 5)
    with pytest.raises(SingleClassInput):
        fit(make_spec("dt"), X, np.zeros(10, dtype=int))
    with pytest.raises(ShapeMismatch):
        fit(make_spec("dt"), X, y[:5])
    Xn = X.copy()
    Xn[0, 0] = np.nan
    with pytest.raises(ValueError):
        fit(make_spec("dt"), Xn, y)
    model = fit(make_spec("dt"), X, y)
    with pytest.raises(ShapeMismatch):
        model.predict_score(rng.normal(size=(4, 3)))


class _FixedScore:
    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.float64)

    def predict_score(self, X):
        return self.scores


def test_label_threshold_probabilistic_families():
    assert default_threshold("lr") == 0.5
    spec = make_spec("lr")
    model = TrainedModel(spec, _FixedScore([0.49, 0.5, 0.51]), 2, None, {})
    X = np.zeros((3, 2))
    assert model.predict_label(X).tolist() == [0, 1, 1]
    assert model.predict_label(X, threshold=0.9).tolist() == [0, 0, 0]


def test_label_threshold_margin_family():
    # decision values: the boundary itself counts as the positive class
    assert default_threshold("svm") == 0.0
    model = TrainedModel(make_spec("svm"), _FixedScore([-0.1, 0.0, 0.2]), 2, None, {})
    assert model.predict_label(np.zeros((3, 2))).tolist() == [0, 1, 1]


# --- persistence ------------------------------------------------------------

@pytest.mark.parametrize("family", FAMILIES)
def test_save_load_round_trip_bit_exact(family, rng, tmp_path):
    X, y = _blob_problem(rng, n=60, p=3)
    overrides = {"rf": {"n_estimators": 5}, "gbt": {"n_rounds": 5},
                 "mlp": {"hidden": (6,), "max_epochs": 5, "batch_size": 32},
                 "svm": {"gamma": 0.5}}.get(family, {})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = fit(make_spec(family, **overrides), X, y,
                    feature_names=["a", "b", "c"])
    path = tmp_path / f"{family}.bin"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.spec == model.spec
    assert loaded.feature_names == ["a", "b", "c"]
    assert loaded.metadata == model.metadata
    probe = rng.normal(size=(20, 3))
    assert np.array_equal(loaded.predict_score(probe), model.predict_score(probe))


def test_load_rejects_foreign_format(tmp_path, rng):
    X, y = _blob_problem(rng, n=30, p=2)
    model = fit(make_spec("dt"), X, y)
    path = tmp_path / "m.bin"
    save_model(model, path)
    import mortbench.models.base as base
    meta, arrays = base.load_arrays(path)
    meta["format_version"] = 99
    base.save_arrays(path, meta, arrays)
    with pytest.raises(InvalidConfig):
        load_model(path)


# --- cross-validation ------------------------------------------------------------

def test_stratified_folds_partition_and_stratify(rng):
    y = np.r_[np.zeros(40, dtype=int), np.ones(20, dtype=int)]
    folds = stratified_fold_indices(y, 5, seed=42)
    allv = np.concatenate(folds)
    assert np.array_equal(np.sort(allv), np.arange(60))
    for val in folds:
        assert len(val) == 12
        assert set(y[val]) == {0, 1}
    again = stratified_fold_indices(y, 5, seed=42)
    for a, b in zip(folds, again):
        assert np.array_equal(a, b)


def test_stratified_folds_degenerate_cases():
    y = np.array([0, 0, 0, 1, 1, 1])
    with pytest.raises(DegenerateFold):
        stratified_fold_indices(y, 1, seed=42)
    y_rare = np.array([0] * 10 + [1])
    with pytest.raises(DegenerateFold):
        stratified_fold_indices(y_rare, 2, seed=42)


def test_grid_search_scores_and_refits(rng):
    X, y = _blob_problem(rng, n=60, p=3, shift=2.5)
    specs = [make_spec("knn", k=1), make_spec("knn", k=5)]
    result = grid_search_cv(specs, X, y, folds=5, seed=42)
    assert len(result.fold_accuracy) == 2
    assert all(len(f) == 5 for f in result.fold_accuracy)
    best = int(np.argmax(result.mean_accuracy))
    assert result.winner == specs[best]
    assert result.model.spec == result.winner
    assert result.model.metadata["cv_accuracy"] == max(result.mean_accuracy)


def test_grid_search_tie_keeps_first_candidate(rng):
    # both depth caps grow the identical tree here, so accuracies tie exactly
    X = rng.integers(0, 2, size=(40, 3)).astype(float)
    y = (X[:, 0] * (1 - X[:, 1]) + X[:, 1] * (1 - X[:, 0])).astype(np.int64)
    specs = [make_spec("dt"), make_spec("dt", max_depth=50)]
    result = grid_search_cv(specs, X, y, folds=4, seed=42)
    assert result.mean_accuracy[0] == result.mean_accuracy[1]
    assert result.winner.hyperparameters["max_depth"] is None
