"""Stratified k-fold grid search scored by accuracy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateFold
from ..util import derive_rng
from .base import ClassifierSpec, TrainedModel, default_threshold, fit


def stratified_fold_indices(y: np.ndarray, folds: int, seed: int
                            ) -> list[np.ndarray]:
    """Validation index arrays: each class permuted once, dealt round-robin."""
    y = np.asarray(y, dtype=np.int64)
    if folds < 2:
        raise DegenerateFold("need at least 2 folds")
    assignments = [[] for _ in range(folds)]
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        perm = idx[derive_rng(seed, "cv", int(c)).permutation(len(idx))]
        for f in range(folds):
            assignments[f].append(perm[f::folds])
    out = [np.sort(np.concatenate(parts)) for parts in assignments]
    classes = np.unique(y)
    for f, val in enumerate(out):
        if val.size == 0 or len(np.unique(y[val])) < len(classes):
            raise DegenerateFold(f"fold {f} does not contain every class")
        train_mask = np.ones(len(y), dtype=bool)
        train_mask[val] = False
        if len(np.unique(y[train_mask])) < len(classes):
            raise DegenerateFold(f"fold {f} leaves a single-class training side")
    return out


@dataclass
class GridSearchResult:
    candidates: list[ClassifierSpec]
    fold_accuracy: list[list[float]]
    mean_accuracy: list[float]
    winner: ClassifierSpec
    model: TrainedModel              # winner refit on the full data


def grid_search_cv(specs: list[ClassifierSpec], X, y, folds: int = 5,
                   seed: int = 42,
                   feature_names: list[str] | None = None) -> GridSearchResult:
    """Mean CV accuracy per candidate; ties go to the first in grid order."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if not specs:
        raise ValueError("empty candidate grid")
    val_folds = stratified_fold_indices(y, folds, seed)
    all_idx = np.arange(len(y))
    fold_accuracy = []
    for spec in specs:
        accs = []
        for val in val_folds:
            tr = np.setdiff1d(all_idx, val)
            model = fit(spec, X[tr], y[tr])
            pred = model.predict_label(X[val], default_threshold(spec.family))
            accs.append(float((pred == y[val]).mean()))
        fold_accuracy.append(accs)
    mean_accuracy = [float(np.mean(a)) for a in fold_accuracy]
    best = int(np.argmax(mean_accuracy))
    winner = specs[best]
    model = fit(winner, X, y, feature_names=feature_names)
    model.metadata["cv_accuracy"] = mean_accuracy[best]
    return GridSearchResult(list(specs), fold_accuracy, mean_accuracy, winner, model)
