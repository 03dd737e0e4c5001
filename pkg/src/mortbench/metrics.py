"""Binary classification metrics: confusion counts, ratio metrics, ROC/AUC.

Death (label 1) is the positive class throughout. Ratios with an empty
denominator are reported as 0.0 so degenerate predictors still produce a
full metrics row.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSubsample,
    LengthMismatch,
    SingleClass,
    SizeExceedsTrain,
)
from .util import derive_rng


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> dict[str, int]:
    """Counts with positive = 1 (death)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} labels vs {len(y_pred)} predictions")
    return {
        "tp": int(((y_true == 1) & (y_pred == 1)).sum()),
        "fp": int(((y_true == 0) & (y_pred == 1)).sum()),
        "tn": int(((y_true == 0) & (y_pred == 0)).sum()),
        "fn": int(((y_true == 1) & (y_pred == 0)).sum()),
    }


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def binary_metrics(cm: dict[str, int]) -> dict[str, float]:
    """Ratio metrics from a confusion matrix; 0/0 -> 0 by convention."""
    tp, fp, tn, fn = cm["tp"], cm["fp"], cm["tn"], cm["fn"]
    if tp + fp + tn + fn <= 0:
        raise ValueError("empty confusion matrix")
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return {
        "accuracy": _ratio(tp + tn, tp + fp + tn + fn),
        "precision": precision,
        "recall": recall,
        "specificity": _ratio(tn, tn + fp),
        "f1": _ratio(2 * precision * recall, precision + recall),
    }


def labels_report(y_true: np.ndarray, y_pred: np.ndarray) -> dict[str, float]:
    """Confusion counts and ratio metrics in one flat dict."""
    cm = confusion(y_true, y_pred)
    out = binary_metrics(cm)
    out.update({k: float(v) for k, v in cm.items()})
    return out


def roc_curve(y_true: np.ndarray, scores: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC points from the distinct-threshold sweep, highest score first.

    Returns (fpr, tpr, thresholds) starting at (0, 0) with threshold +inf
    and ending at (1, 1).
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if len(y_true) != len(scores):
        raise LengthMismatch(f"{len(y_true)} labels vs {len(scores)} scores")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    n_pos = int((y_true == 1).sum())
    n_neg = int((y_true == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    ys = y_true[order]
    ss = scores[order]
    tp_cum = np.cumsum(ys == 1)
    fp_cum = np.cumsum(ys == 0)
    # keep the last index of each distinct score
    distinct = np.r_[np.flatnonzero(np.diff(ss) != 0.0), len(ss) - 1]
    tpr = np.r_[0.0, tp_cum[distinct] / n_pos]
    fpr = np.r_[0.0, fp_cum[distinct] / n_neg]
    thresholds = np.r_[np.inf, ss[distinct]]
    return fpr, tpr, thresholds


def roc_auc(y_true: np.ndarray, scores: np.ndarray
            ) -> tuple[list[tuple[float, float]], float]:
    """ROC points and trapezoidal AUC (ties get half credit, matching the
    Mann-Whitney statistic)."""
    fpr, tpr, _ = roc_curve(y_true, scores)
    area = float(np.trapezoid(tpr, fpr))
    return list(zip(fpr.tolist(), tpr.tolist())), area


def auc_score(y_true: np.ndarray, scores: np.ndarray) -> float:
    return roc_auc(y_true, scores)[1]


def score_report(y_true: np.ndarray, y_pred: np.ndarray,
                 scores: np.ndarray | None = None) -> dict:
    """Full metrics row; AUC included when scores are given and both
    classes are present."""
    out = labels_report(y_true, y_pred)
    if scores is not None:
        try:
            points, area = roc_auc(y_true, scores)
            out["auc"] = area
            out["roc"] = points
        except SingleClass:
            pass
    return out


# ---------------------------------------------------------------------------
# stratified nested subsampling (learning-curve support)
# ---------------------------------------------------------------------------

def stratified_subsample_indices(y: np.ndarray, sizes: list[int], seed: int
                                 ) -> dict[int, np.ndarray]:
    """Nested stratified subsamples of the training labels.

    Each class is permuted once; a subsample of size s takes a prefix of
    each class permutation (per-class quota = round(s * class share), the
    largest class absorbs rounding) so smaller subsamples are subsets of
    larger ones. Returned index arrays are sorted ascending, which makes
    the full size reproduce the identity ordering.
    """
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise SingleClass("subsampling needs both classes present")
    perms = {}
    for c in classes:
        rng = derive_rng(seed, "curve", int(c))
        idx = np.flatnonzero(y == c)
        perms[int(c)] = idx[rng.permutation(len(idx))]

    shares = counts / n
    major = int(classes[np.argmax(counts)])
    out = {}
    for s in sorted(set(int(v) for v in sizes)):
        if s > n:
            raise SizeExceedsTrain(f"subsample size {s} exceeds train size {n}")
        quota = {int(c): int(round(s * sh)) for c, sh in zip(classes, shares)}
        quota[major] += s - sum(quota.values())
        for c, q in quota.items():
            have = int(counts[list(classes).index(c)])
            if q < 1:
                raise DegenerateSubsample(f"size {s} leaves class {c} empty")
            if q > have:
                raise DegenerateSubsample(f"size {s} needs {q} rows of class {c}, have {have}")
        take = np.concatenate([perms[int(c)][: quota[int(c)]] for c in classes])
        out[s] = np.sort(take)
    return out


# ---------------------------------------------------------------------------
# sample-size learning curve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LearningCurveResult:
    sizes: tuple
    model_tags: tuple
    f1: np.ndarray         # (n_sizes, n_models)
    accuracy: np.ndarray   # (n_sizes, n_models)
    seed: int

    def tidy_rows(self) -> list[dict]:
        rows = []
        for i, size in enumerate(self.sizes):
            for j, tag in enumerate(self.model_tags):
                rows.append({"model": tag, "size": size, "metric": "f1",
                             "value": float(self.f1[i, j])})
                rows.append({"model": tag, "size": size, "metric": "accuracy",
                             "value": float(self.accuracy[i, j])})
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["model", "size", "metric", "value"])
            writer.writeheader()
            writer.writerows(self.tidy_rows())


def learning_curve(models: list, bundle, sizes: list[int], seed: int = 42,
                   config=None) -> LearningCurveResult:
    """Train on nested stratified subsamples, evaluate on the fixed test set.

    Every grid point reruns the full preprocessing chain (imputation,
    scaling, selection, oversampling) on its subsample, then scores F1 and
    accuracy against the bundle's internal test rows. The test rows are
    identical for every cell; eval-split oversampling is forced off here so
    the comparison stays on real patients.
    """
    # local imports: preprocess/models sit above metrics in the layer order
    from dataclasses import replace

    from .dataset import Dataset, SplitBundle
    from .errors import InvalidConfig
    from .models import fit
    from .preprocess import PreprocessConfig, preprocess_bundle

    sizes = [int(s) for s in sizes]
    if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise InvalidConfig(f"sizes must be strictly increasing, got {sizes}")
    if not models:
        raise InvalidConfig("learning_curve needs at least one model spec")
    cfg = config if config is not None else PreprocessConfig()
    cfg = replace(cfg, smote_eval=False)

    tags = []
    for m in models:
        tag = m.family
        if tag in tags:
            tag = f"{m.family}-{sum(t.startswith(m.family) for t in tags) + 1}"
        tags.append(tag)

    schema = bundle.train.schema
    empty = Dataset(schema, np.zeros((0, bundle.train.p)),
                    np.zeros(0, dtype=np.int64), np.array([], dtype=str))
    idx_map = stratified_subsample_indices(bundle.train.y, sizes, seed)

    f1 = np.zeros((len(sizes), len(models)))
    acc = np.zeros((len(sizes), len(models)))
    for i, size in enumerate(sizes):
        idx = idx_map[size]
        mini = SplitBundle(bundle.train.take(idx), bundle.internal_test, empty,
                           empty, bundle.seed, idx, bundle.internal_test_idx,
                           None, None)
        prep = preprocess_bundle(mini, cfg)
        tr = prep.splits["train"]
        te = prep.splits["internal_test"]
        for j, spec in enumerate(models):
            model = fit(spec, tr.X, tr.y)
            rep = labels_report(te.y_raw, model.predict_label(te.X_eval))
            f1[i, j] = rep["f1"]
            acc[i, j] = rep["accuracy"]
    return LearningCurveResult(sizes=tuple(sizes), model_tags=tuple(tags),
                               f1=f1, accuracy=acc, seed=seed)
