"""Random forest: bootstrapped CART trees, sqrt-feature subsets, majority vote."""
from __future__ import annotations

import numpy as np

from ..util import derive_rng
from .tree import TreeNodes, grow_tree, tree_apply


class RandomForestModel:
    """Bagged Gini trees; score = fraction of trees voting positive.

    Bootstrap draws index the training rows in canonical row-ID order, so
    permuting the rows while carrying their IDs reproduces the same forest.
    """

    def __init__(self, n_estimators: int = 100, max_depth=None,
                 min_samples_split: int = 2, min_samples_leaf: int = 1,
                 seed: int = 42):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.seed = seed
        self.trees: list[TreeNodes] = []

    def fit(self, X, y, row_ids: np.ndarray | None = None) -> dict:
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n, p = X.shape
        if row_ids is not None:
            order = np.argsort(np.asarray(row_ids), kind="stable")
            X, y = X[order], y[order]
        max_features = max(1, int(np.sqrt(p)))
        self.trees = []
        for t in range(self.n_estimators):
            rng = derive_rng(self.seed, "tree", t)
            boot = rng.integers(0, n, size=n)
            self.trees.append(grow_tree(X[boot], y[boot], max_depth=self.max_depth,
                                        min_samples_split=self.min_samples_split,
                                        min_samples_leaf=self.min_samples_leaf,
                                        max_features=max_features, rng=rng))
        return {"n_trees": len(self.trees), "max_features": max_features,
                "converged": True}

    def predict_score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros(len(X), dtype=np.float64)
        for tree in self.trees:
            counts = tree.value[tree_apply(tree, X)]
            votes += (counts[:, 1] >= counts[:, 0]).astype(np.float64)
        return votes / len(self.trees)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for t, tree in enumerate(self.trees):
            pre = f"t{t:03d}_"
            out[pre + "feature"] = tree.feature
            out[pre + "threshold"] = tree.threshold
            out[pre + "left"] = tree.left
            out[pre + "right"] = tree.right
            out[pre + "value"] = tree.value
        return out

    def state_meta(self) -> dict:
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth,
                "min_samples_split": self.min_samples_split,
                "min_samples_leaf": self.min_samples_leaf, "seed": self.seed}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "RandomForestModel":
        m = cls(meta["n_estimators"], meta["max_depth"], meta["min_samples_split"],
                meta["min_samples_leaf"], meta["seed"])
        for t in range(m.n_estimators):
            pre = f"t{t:03d}_"
            m.trees.append(TreeNodes(arrays[pre + "feature"], arrays[pre + "threshold"],
                                     arrays[pre + "left"], arrays[pre + "right"],
                                     arrays[pre + "value"]))
        return m
