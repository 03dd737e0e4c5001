"""Classifier specs, the fit/predict facade, and model persistence."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfig, ShapeMismatch, SingleClassInput
from ..util import load_arrays, save_arrays
from .boosting import GradientBoostingModel
from .forest import RandomForestModel
from .knn import KnnClassifier
from .logistic import LogisticRegressionModel
from .mlp import MlpClassifier
from .svm import SvmModel
from .tree import DecisionTreeModel

FAMILIES = ("lr", "svm", "dt", "knn", "rf", "gbt", "mlp")

HYPERPARAMETER_DEFAULTS: dict[str, dict] = {
    "lr": {"C": 1.0, "tol": 1e-4, "max_iter": 100},
    "svm": {"C": 1.0, "gamma": "scale", "tol": 1e-3, "max_iter": 200000,
            "cache_rows": 1024},
    "dt": {"max_depth": None, "min_samples_split": 2, "min_samples_leaf": 1},
    "knn": {"k": 5},
    "rf": {"n_estimators": 100, "max_depth": None, "min_samples_split": 2,
           "min_samples_leaf": 1},
    "gbt": {"n_rounds": 100, "max_depth": 3, "learning_rate": 0.1,
            "reg_lambda": 1.0, "gamma": 0.0, "min_child_weight": 1.0},
    "mlp": {"hidden": (100,), "alpha": 1e-4, "max_epochs": 200, "batch_size": 200,
            "learning_rate": 1e-3, "patience": 10, "tol": 1e-4,
            "validation_fraction": 0.1},
}

_IMPL = {
    "lr": LogisticRegressionModel,
    "svm": SvmModel,
    "dt": DecisionTreeModel,
    "knn": KnnClassifier,
    "rf": RandomForestModel,
    "gbt": GradientBoostingModel,
    "mlp": MlpClassifier,
}

# families whose predict_score is a probability/vote fraction in [0,1];
# svm scores are signed decision values with the boundary at 0
PROBABILISTIC = {"lr", "dt", "knn", "rf", "gbt", "mlp"}


@dataclass(frozen=True)
class ClassifierSpec:
    family: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 42

    def __post_init__(self):
        fam = self.family.lower()
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise InvalidConfig(f"unknown model family {self.family!r}")
        defaults = HYPERPARAMETER_DEFAULTS[fam]
        unknown = set(self.hyperparameters) - set(defaults)
        if unknown:
            raise InvalidConfig(f"{fam}: unknown hyperparameters {sorted(unknown)}")
        merged = {**defaults, **self.hyperparameters}
        _validate_hyperparameters(fam, merged)
        object.__setattr__(self, "hyperparameters", merged)

    @property
    def label(self) -> str:
        return self.family


def _validate_hyperparameters(family: str, hp: dict) -> None:
    def positive(key):
        if not (isinstance(hp[key], (int, float)) and hp[key] > 0):
            raise InvalidConfig(f"{family}.{key} must be positive, got {hp[key]!r}")

    if family in ("lr", "svm"):
        positive("C")
        positive("tol")
    if family == "svm" and hp["gamma"] != "scale":
        positive("gamma")
    if family == "knn":
        if not (isinstance(hp["k"], int) and hp["k"] >= 1):
            raise InvalidConfig(f"knn.k must be a positive integer, got {hp['k']!r}")
    if family == "rf" and hp["n_estimators"] < 1:
        raise InvalidConfig("rf.n_estimators must be >= 1")
    if family == "gbt":
        if hp["n_rounds"] < 0:
            raise InvalidConfig("gbt.n_rounds must be >= 0")
        positive("learning_rate")
    if family == "mlp":
        hidden = tuple(hp["hidden"])
        if not hidden or any(int(h) < 1 for h in hidden):
            raise InvalidConfig(f"mlp.hidden must be nonempty positive sizes, got {hidden}")
        hp["hidden"] = hidden


def make_spec(family: str, seed: int = 42, **overrides) -> ClassifierSpec:
    return ClassifierSpec(family, overrides, seed)


def default_specs(seed: int = 42) -> list[ClassifierSpec]:
    """One spec per family at the documented defaults (mlp at (100,))."""
    return [make_spec(f, seed=seed) for f in FAMILIES]


def mlp_grid(seed: int = 42) -> list[ClassifierSpec]:
    return [make_spec("mlp", seed=seed, hidden=(100,)),
            make_spec("mlp", seed=seed, hidden=(50, 50))]


@dataclass
class TrainedModel:
    spec: ClassifierSpec
    impl: object
    n_features: int
    feature_names: list[str] | None
    metadata: dict

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeMismatch(f"expected {self.n_features} features, "
                                f"got shape {X.shape}")
        return X

    def predict_score(self, X) -> np.ndarray:
        return np.asarray(self.impl.predict_score(self._check(X)), dtype=np.float64)

    def predict_label(self, X, threshold: float | None = None) -> np.ndarray:
        if threshold is None:
            threshold = default_threshold(self.spec.family)
        return (self.predict_score(X) >= threshold).astype(np.int64)


def default_threshold(family: str) -> float:
    return 0.5 if family in PROBABILISTIC else 0.0


def fit(spec: ClassifierSpec, X, y, feature_names: list[str] | None = None,
        row_ids: np.ndarray | None = None) -> TrainedModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeMismatch(f"X {X.shape} vs y {y.shape}")
    if np.isnan(X).any() or not np.isfinite(X).all():
        raise ValueError("X must be complete and finite (run preprocessing first)")
    if len(np.unique(y)) < 2:
        raise SingleClassInput("training labels contain a single class")
    impl = _IMPL[spec.family](**spec.hyperparameters, seed=spec.seed)
    if spec.family == "rf" and row_ids is not None:
        metadata = impl.fit(X, y, row_ids=row_ids)
    else:
        metadata = impl.fit(X, y)
    return TrainedModel(spec, impl, X.shape[1], list(feature_names)
                        if feature_names else None, metadata)


FORMAT_VERSION = 1


def save_model(model: TrainedModel, path) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "family": model.spec.family,
        "seed": model.spec.seed,
        "state": model.impl.state_meta(),
        "n_features": model.n_features,
        "feature_names": model.feature_names,
        "metadata": model.metadata,
    }
    save_arrays(path, meta, model.impl.state_arrays())


def load_model(path) -> TrainedModel:
    meta, arrays = load_arrays(path)
    if meta.get("format_version") != FORMAT_VERSION:
        raise InvalidConfig(f"{path}: unsupported model format {meta.get('format_version')}")
    family = meta["family"]
    impl = _IMPL[family].from_state(meta["state"], arrays)
    state = dict(meta["state"])
    seed = state.pop("seed", meta["seed"])
    state.pop("layers", None)
    state.pop("n_trees", None)
    if family == "mlp":
        state["hidden"] = tuple(state["hidden"])
    spec = ClassifierSpec(family, state, seed)
    return TrainedModel(spec, impl, meta["n_features"], meta["feature_names"],
                        meta["metadata"])
