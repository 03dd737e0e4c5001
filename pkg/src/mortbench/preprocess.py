"""Per-split preprocessing: imputation, scaling, Lasso selection, SMOTE.

Each split is fitted independently by default (the conventional
fit-on-train / transform-eval mode is available behind a flag). Every fit
routine bumps a module-level counter so tests can assert that transforming
held-out data never recomputes statistics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, SplitBundle
from .errors import (
    AllMissingColumn,
    EmptyReference,
    NonConvergence,
    TooFewMinority,
)
from .schema import FeatureSchema
from .util import derive_rng

# instrumentation: incremented whenever statistics are (re)fitted
STAT_FIT_EVENTS = 0


def _record_fit():
    global STAT_FIT_EVENTS
    STAT_FIT_EVENTS += 1


# ---------------------------------------------------------------------------
# iterative numeric imputation (chained per-feature regressions)
# ---------------------------------------------------------------------------

@dataclass
class IterativeImputerModel:
    means: np.ndarray
    # target column -> (coefficients over the other columns, intercept)
    regressors: dict[int, tuple[np.ndarray, float]]
    max_rounds: int = 10
    tol: float = 1e-3

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=np.float64)
        missing = np.isnan(X)
        if not missing.any():
            return X
        filled = np.where(missing, self.means, X)
        for _ in range(self.max_rounds):
            max_change = 0.0
            for j, (coef, intercept) in self.regressors.items():
                rows = missing[:, j]
                if not rows.any():
                    continue
                others = np.delete(filled[rows], j, axis=1)
                pred = others @ coef + intercept
                max_change = max(max_change, float(np.max(np.abs(pred - filled[rows, j]))))
                filled[rows, j] = pred
            if max_change < self.tol:
                break
        return filled


def fit_iterative_imputer(X: np.ndarray, max_rounds: int = 10,
                          tol: float = 1e-3) -> IterativeImputerModel:
    """Chained-equation style imputer: mean init, then per-feature OLS over
    the other columns, cycled until imputed values stabilise."""
    _record_fit()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need a 2-D matrix with at least 2 numeric features")
    missing = np.isnan(X)
    dead = np.flatnonzero(missing.all(axis=0))
    if dead.size:
        raise AllMissingColumn(f"columns with no observed values: {dead.tolist()}")

    means = np.nanmean(X, axis=0)
    filled = np.where(missing, means, X)
    targets = np.flatnonzero(missing.any(axis=0))
    regressors: dict[int, tuple[np.ndarray, float]] = {}
    for _ in range(max_rounds):
        max_change = 0.0
        for j in targets:
            obs = ~missing[:, j]
            others = np.delete(filled, j, axis=1)
            A = np.column_stack([others[obs], np.ones(obs.sum())])
            sol, *_ = np.linalg.lstsq(A, X[obs, j], rcond=None)
            coef, intercept = sol[:-1], float(sol[-1])
            regressors[j] = (coef, intercept)
            rows = missing[:, j]
            pred = np.delete(filled[rows], j, axis=1) @ coef + intercept
            if rows.any():
                max_change = max(max_change, float(np.max(np.abs(pred - filled[rows, j]))))
                filled[rows, j] = pred
        if max_change < tol:
            break
    return IterativeImputerModel(means, regressors, max_rounds, tol)


# ---------------------------------------------------------------------------
# KNN categorical imputation (masked Euclidean over co-observed coords)
# ---------------------------------------------------------------------------

@dataclass
class KnnImputerModel:
    reference: np.ndarray
    k: int = 5


def fit_knn_imputer(X_ref: np.ndarray, k: int = 5) -> KnnImputerModel:
    _record_fit()
    X_ref = np.asarray(X_ref, dtype=np.float64)
    if len(X_ref) == 0:
        raise EmptyReference("reference set is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    return KnnImputerModel(X_ref.copy(), k)


def _masked_sq_distances(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Squared masked Euclidean distance, scaled by p / n_co-observed.

    Pairs with no co-observed coordinate get +inf.
    """
    p = Q.shape[1]
    Qo = (~np.isnan(Q)).astype(np.float64)
    Ro = (~np.isnan(R)).astype(np.float64)
    Qm = np.nan_to_num(Q)
    Rm = np.nan_to_num(R)
    sq_q = (Qm ** 2) @ Ro.T
    sq_r = Qo @ (Rm ** 2).T
    cross = Qm @ Rm.T
    n_co = Qo @ Ro.T
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = (p / n_co) * np.maximum(sq_q - 2.0 * cross + sq_r, 0.0)
    d2[n_co == 0] = np.inf
    return d2


def _mode_smallest(values: np.ndarray) -> float:
    vals, counts = np.unique(values, return_counts=True)
    return float(vals[np.argmax(counts)])   # np.unique sorts, argmax takes first


def impute_knn(X: np.ndarray, model: KnnImputerModel, chunk: int = 512) -> np.ndarray:
    """Replace each missing cell by the mode of the k nearest donors'
    values at that coordinate (ties -> smallest category code)."""
    X = np.array(X, dtype=np.float64)
    missing = np.isnan(X)
    if not missing.any():
        return X
    query_rows = np.flatnonzero(missing.any(axis=1))
    R = model.reference
    for start in range(0, len(query_rows), chunk):
        rows = query_rows[start:start + chunk]
        d2 = _masked_sq_distances(X[rows], R)
        for qi, row in enumerate(rows):
            for c in np.flatnonzero(missing[row]):
                donors = np.flatnonzero(~np.isnan(R[:, c]) & np.isfinite(d2[qi]))
                if donors.size == 0:
                    raise EmptyReference(f"no donor observed at column {c}")
                order = np.argsort(d2[qi, donors], kind="stable")
                chosen = donors[order[: model.k]]
                X[row, c] = _mode_smallest(R[chosen, c])
    return X


# ---------------------------------------------------------------------------
# standard scaler (population standard deviation)
# ---------------------------------------------------------------------------

@dataclass
class StandardScalerModel:
    mean: np.ndarray
    std: np.ndarray            # population std, zeros kept as-is
    constant: np.ndarray       # bool mask of constant columns

    def transform(self, X: np.ndarray) -> np.ndarray:
        safe = np.where(self.constant, 1.0, self.std)
        return (X - self.mean) / safe

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        safe = np.where(self.constant, 1.0, self.std)
        return Z * safe + self.mean


def fit_scaler(X: np.ndarray) -> StandardScalerModel:
    _record_fit()
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # constant columns can carry ~1e-16 std from mean round-off; a relative
    # epsilon keeps them from exploding the transform
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return StandardScalerModel(mean, std, constant)


def apply_scaler(model: StandardScalerModel, X: np.ndarray) -> np.ndarray:
    return model.transform(np.asarray(X, dtype=np.float64))


# ---------------------------------------------------------------------------
# Lasso feature ranking (cyclic coordinate descent, soft thresholding)
# ---------------------------------------------------------------------------

@dataclass
class LassoRanking:
    alpha: float
    beta: np.ndarray
    intercept: float
    ranking: np.ndarray          # feature indices ordered by |beta| desc
    selected: list[str]          # top-k feature names
    kkt_residual: float
    sweeps: int
    feature_names: list[str] = field(default_factory=list)


def _soft_threshold(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _cd_solve(X, y, alpha, max_sweeps, kkt_tol):
    """Cyclic coordinate descent core; returns (beta, intercept, kkt,
    sweeps, converged) without raising."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    yc = y - y.mean()
    col_sq = (Xc ** 2).sum(axis=0) / n

    beta = np.zeros(p)
    r = yc.copy()
    kkt = np.inf
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            rho = Xc[:, j] @ r / n + col_sq[j] * beta[j]
            new = _soft_threshold(rho, alpha) / col_sq[j]
            delta = new - beta[j]
            if delta != 0.0:
                r -= Xc[:, j] * delta
                beta[j] = new
        g = Xc.T @ r / n
        active = beta != 0.0
        kkt = 0.0
        if active.any():
            kkt = float(np.max(np.abs(g[active] - alpha * np.sign(beta[active]))))
        if (~active).any():
            kkt = max(kkt, float(np.max(np.maximum(np.abs(g[~active]) - alpha, 0.0))))
        if kkt <= kkt_tol:
            converged = True
            break
    intercept = float(y.mean() - x_mean @ beta)
    return beta, intercept, kkt, sweeps, converged


def lasso_coordinate_descent(X: np.ndarray, y: np.ndarray, alpha: float,
                             max_sweeps: int = 30000, kkt_tol: float = 1e-6
                             ) -> tuple[np.ndarray, float, float, int]:
    """Minimise (1/2n)||y - b - X beta||^2 + alpha ||beta||_1.

    Columns are centered internally so the intercept is exact; returns
    (beta, intercept, kkt_residual, sweeps).
    """
    beta, intercept, kkt, sweeps, converged = _cd_solve(X, y, alpha, max_sweeps, kkt_tol)
    if not converged:
        raise NonConvergence(f"lasso KKT residual {kkt:.3e} after {max_sweeps} sweeps")
    return beta, intercept, kkt, sweeps


def lasso_rank(X: np.ndarray, y: np.ndarray, alpha: float, k: int,
               feature_names: list[str] | None = None) -> LassoRanking:
    """Rank features by |beta| descending (ties keep feature order) and
    select the top k."""
    _record_fit()
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    if k > p:
        raise ValueError(f"k={k} exceeds feature count {p}")
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(p)]
    beta, intercept, kkt, sweeps = lasso_coordinate_descent(X, y, alpha)
    ranking = np.argsort(-np.abs(beta), kind="stable")
    selected = [names[j] for j in ranking[:k]]
    return LassoRanking(alpha, beta, intercept, ranking, selected, kkt, sweeps, names)


def lasso_null_alpha(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty that zeroes every coefficient: max_j |x_j^T (y-mean)|/n."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    yc = np.asarray(y, dtype=np.float64) - np.mean(y)
    # per-column dots mirror the solver's update arithmetic bit for bit; a
    # matvec here can land 1 ulp higher and leave coefficient dust behind
    best = max(abs(float(Xc[:, j] @ yc)) for j in range(X.shape[1]))
    return best / len(y)


def select_lasso_alpha_cv(X: np.ndarray, y: np.ndarray, alphas, folds: int = 5,
                          seed: int = 42) -> float:
    """Pick alpha by k-fold CV squared error; ties go to the first grid entry."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    rng = derive_rng(seed, "lasso-cv")
    order = rng.permutation(n)
    fold_idx = np.array_split(order, folds)
    errors = []
    for alpha in alphas:
        sse, count = 0.0, 0
        for f in range(folds):
            val = fold_idx[f]
            tr = np.concatenate([fold_idx[g] for g in range(folds) if g != f])
            # approximate fits are fine for scoring alphas; underdetermined
            # folds (p > n) converge too slowly at the strict tolerance
            beta, b0, _, _, _ = _cd_solve(X[tr], y[tr], alpha,
                                          max_sweeps=2000, kkt_tol=1e-4)
            pred = X[val] @ beta + b0
            sse += float(((y[val] - pred) ** 2).sum())
            count += len(val)
        errors.append(sse / count)
    return float(alphas[int(np.argmin(errors))])


# ---------------------------------------------------------------------------
# SMOTE
# ---------------------------------------------------------------------------

@dataclass
class SmoteConfig:
    k_neighbors: int = 5
    seed: int = 42


@dataclass
class SmoteResult:
    X: np.ndarray
    y: np.ndarray
    # one (base_row, neighbor_row, u) triple per synthetic sample; the row
    # indices refer to the input matrix
    records: list[tuple[int, int, float]]
    minority_label: int
    before: dict[int, int]
    after: dict[int, int]


def smote(X: np.ndarray, y: np.ndarray, cfg: SmoteConfig) -> SmoteResult:
    """Balance classes by interpolating minority points toward their k
    nearest minority neighbors: s = x + u * (nn - x), u ~ U(0, 1)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) != 2:
        raise ValueError("smote expects exactly two classes")
    minority_label = int(classes[np.argmin(counts)])
    min_idx = np.flatnonzero(y == minority_label)
    m = len(min_idx)
    need = int(counts.max() - counts.min())
    before = {int(c): int(k) for c, k in zip(classes, counts)}
    if need == 0:
        return SmoteResult(X.copy(), y.copy(), [], minority_label, before, dict(before))
    if m <= cfg.k_neighbors:
        raise TooFewMinority(f"minority count {m} must exceed k_neighbors {cfg.k_neighbors}")

    Xm = X[min_idx]
    d2 = ((Xm[:, None, :] - Xm[None, :, :]) ** 2).sum(axis=2) if m <= 2048 else None
    if d2 is None:
        sq = (Xm ** 2).sum(axis=1)
        d2 = np.maximum(sq[:, None] - 2.0 * (Xm @ Xm.T) + sq[None, :], 0.0)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1, kind="stable")[:, : cfg.k_neighbors]

    rng = derive_rng(cfg.seed, "smote")
    bases = rng.integers(0, m, size=need)
    picks = rng.integers(0, cfg.k_neighbors, size=need)
    u = rng.random(need)
    neighbors = nn[bases, picks]
    synth = Xm[bases] + u[:, None] * (Xm[neighbors] - Xm[bases])

    X_out = np.vstack([X, synth])
    y_out = np.concatenate([y, np.full(need, minority_label, dtype=np.int64)])
    records = [(int(min_idx[b]), int(min_idx[nb]), float(uu))
               for b, nb, uu in zip(bases, neighbors, u)]
    after = {int(c): int((y_out == c).sum()) for c in classes}
    return SmoteResult(X_out, y_out, records, minority_label, before, after)


# ---------------------------------------------------------------------------
# split pipeline
# ---------------------------------------------------------------------------

@dataclass
class PreprocessConfig:
    per_split_independent: bool = True
    apply_smote: bool = True
    smote_eval: bool = True          # also oversample test/external sets
    top_k: int = 40
    smote_k: int = 5
    knn_k: int = 5
    imputer_max_rounds: int = 10
    imputer_tol: float = 1e-3
    lasso_alphas: tuple = (1e-4, 1e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)
    lasso_cv_folds: int = 5
    seed: int = 42


@dataclass
class PreparedSplit:
    name: str
    X: np.ndarray                  # model-ready: selected, scaled, oversampled
    y: np.ndarray
    X_eval: np.ndarray             # selected + scaled, pre-SMOTE (real rows only)
    X_unscaled: np.ndarray         # imputed + selected, original units, pre-SMOTE
    y_raw: np.ndarray
    scaler: StandardScalerModel
    report: dict
    # imputed narrative columns (selected plus age/sex), original units
    X_narrative: np.ndarray | None = None


@dataclass
class PreparedBundle:
    splits: dict[str, PreparedSplit]
    selected: list[str]
    lasso: LassoRanking
    narrative_names: list[str]     # selected plus age/sex when present
    config: PreprocessConfig
    schema: FeatureSchema


@dataclass
class _SplitModels:
    imputer: IterativeImputerModel | None
    knn: KnnImputerModel | None
    scaler: StandardScalerModel


def _fit_split_models(ds: Dataset, cfg: PreprocessConfig) -> _SplitModels:
    num_idx = [ds.schema.names.index(n) for n in ds.schema.numeric_names()]
    cat_idx = [ds.schema.names.index(n) for n in ds.schema.categorical_names()]
    imputer = None
    if len(num_idx) >= 2:
        imputer = fit_iterative_imputer(ds.X[:, num_idx], cfg.imputer_max_rounds,
                                        cfg.imputer_tol)
    knn = fit_knn_imputer(ds.X[:, cat_idx], cfg.knn_k) if cat_idx else None
    # scaler is fitted on imputed numerics below; placeholder replaced there
    return _SplitModels(imputer, knn, None)


def _impute(ds: Dataset, models: _SplitModels) -> np.ndarray:
    names = ds.schema.names
    num_idx = [names.index(n) for n in ds.schema.numeric_names()]
    cat_idx = [names.index(n) for n in ds.schema.categorical_names()]
    full = np.array(ds.X, dtype=np.float64)
    if num_idx and models.imputer is not None:
        full[:, num_idx] = models.imputer.transform(full[:, num_idx])
    if cat_idx and models.knn is not None:
        full[:, cat_idx] = impute_knn(full[:, cat_idx], models.knn)
    return full


def preprocess_bundle(bundle: SplitBundle, cfg: PreprocessConfig) -> PreparedBundle:
    """Run the full preprocessing chain over the three splits.

    Imputation and scaling are fitted per split by default: each split
    stands in for an independent site, so the external hospital must not
    borrow train statistics. Set per_split_independent=False to fit on train
    only. Lasso ranking always comes from the train split; SMOTE is
    applied per split according to the flags. SMOTE k is clamped to
    minority-1 when a small subsample would otherwise violate its
    precondition (reported in the split report).
    """
    schema = bundle.train.schema
    names = schema.names
    num_idx = [names.index(n) for n in schema.numeric_names()]
    datasets = {"train": bundle.train, "internal_test": bundle.internal_test,
                "external": bundle.external}

    train_models = _fit_split_models(bundle.train, cfg)
    imputed, scalers, reports = {}, {}, {}
    for split, ds in datasets.items():
        if ds.n == 0:
            imputed[split] = np.zeros((0, len(names)))
            scalers[split] = train_models.scaler
            reports[split] = {"rows": 0}
            continue
        models = train_models if (split == "train" or not cfg.per_split_independent) \
            else _fit_split_models(ds, cfg)
        full = _impute(ds, models)
        n_imputed = {names[j]: int(np.isnan(ds.X[:, j]).sum())
                     for j in range(len(names)) if np.isnan(ds.X[:, j]).any()}
        scaler = fit_scaler(full[:, num_idx]) if (split == "train" or cfg.per_split_independent) \
            else scalers["train"]
        if split == "train":
            train_models.scaler = scaler
        imputed[split] = full
        scalers[split] = scaler
        reports[split] = {
            "rows": ds.n,
            "imputed_cells": n_imputed,
            "constant_columns": [schema.numeric_names()[j]
                                 for j in np.flatnonzero(scaler.constant)],
        }

    # lasso ranking on the scaled train matrix over all features
    train_scaled = imputed["train"].copy()
    train_scaled[:, num_idx] = scalers["train"].transform(imputed["train"][:, num_idx])
    alpha = select_lasso_alpha_cv(train_scaled, bundle.train.y, cfg.lasso_alphas,
                                  cfg.lasso_cv_folds, cfg.seed)
    ranking = lasso_rank(train_scaled, bundle.train.y, alpha, min(cfg.top_k, len(names)),
                         feature_names=names)
    selected = ranking.selected
    sel_idx = [names.index(n) for n in selected]

    narrative_names = [n for n in names
                       if n in set(selected) or n in ("age", "sex")]

    narr_idx = [names.index(n) for n in narrative_names]

    splits = {}
    for split, ds in datasets.items():
        if ds.n == 0:
            empty = np.zeros((0, len(selected)))
            splits[split] = PreparedSplit(split, empty, np.zeros(0, dtype=np.int64),
                                          empty, empty, np.zeros(0, dtype=np.int64),
                                          scalers[split], reports[split],
                                          np.zeros((0, len(narrative_names))))
            continue
        full_scaled = imputed[split].copy()
        full_scaled[:, num_idx] = scalers[split].transform(imputed[split][:, num_idx])
        X_sel = full_scaled[:, sel_idx]
        y = ds.y.copy()
        report = dict(reports[split])
        do_smote = cfg.apply_smote and (split == "train" or cfg.smote_eval)
        X_model, y_model = X_sel, y
        if do_smote and len(np.unique(y)) == 2:
            minority = int(np.bincount(y).min())
            k = min(cfg.smote_k, minority - 1)
            if k >= 1:
                res = smote(X_sel, y, SmoteConfig(k_neighbors=k,
                                                  seed=derive_seed(cfg.seed, split)))
                X_model, y_model = res.X, res.y
                report["smote"] = {"before": res.before, "after": res.after,
                                   "k_neighbors": k, "clamped": k < cfg.smote_k}
            else:
                report["smote"] = {"skipped": "minority too small"}
        splits[split] = PreparedSplit(split, X_model, y_model, X_sel,
                                      imputed[split][:, sel_idx], y,
                                      scalers[split], report,
                                      imputed[split][:, narr_idx])

    return PreparedBundle(splits, selected, ranking, narrative_names, cfg, schema)


def derive_seed(seed: int, label: str) -> int:
    """Stable per-purpose integer seed."""
    return int(derive_rng(seed, label).integers(0, 2 ** 31 - 1))


def pipeline_artifact(prep: PreparedBundle) -> dict:
    """Versioned JSON-able summary of the fitted pipeline."""
    cfg = prep.config
    return {
        "version": 1,
        "config": {
            "per_split_independent": cfg.per_split_independent,
            "apply_smote": cfg.apply_smote,
            "smote_eval": cfg.smote_eval,
            "top_k": cfg.top_k,
            "smote_k": cfg.smote_k,
            "knn_k": cfg.knn_k,
            "seed": cfg.seed,
        },
        "lasso": {
            "alpha": prep.lasso.alpha,
            "beta": [float(b) for b in prep.lasso.beta],
            "ranking": [int(j) for j in prep.lasso.ranking],
            "kkt_residual": prep.lasso.kkt_residual,
            "feature_names": prep.lasso.feature_names,
        },
        "selected": prep.selected,
        "scalers": {
            name: {
                "mean": [float(v) for v in s.scaler.mean],
                "std": [float(v) for v in s.scaler.std],
            }
            for name, s in prep.splits.items() if s.scaler is not None
        },
        "reports": {name: s.report for name, s in prep.splits.items()},
    }
