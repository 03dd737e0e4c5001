"""k-nearest-neighbors classifier: brute-force Euclidean, uniform weights."""
from __future__ import annotations

import numpy as np


class KnnClassifier:
    """Score = fraction of the k nearest training rows labeled positive.

    Distance ties are broken by training-row order (stable sort).
    """

    def __init__(self, k: int = 5, seed: int = 42):
        self.k = k
        self.seed = seed
        self.X_ref: np.ndarray | None = None
        self.y_ref: np.ndarray | None = None

    def fit(self, X, y) -> dict:
        X = np.asarray(X, dtype=np.float64)
        if self.k > len(X):
            raise ValueError(f"k={self.k} exceeds training size {len(X)}")
        self.X_ref = X.copy()
        self.y_ref = np.asarray(y, dtype=np.int64).copy()
        return {"n_reference": len(X), "converged": True}

    def kneighbors(self, X, chunk: int = 1024) -> np.ndarray:
        """Indices of the k nearest training rows per query row."""
        X = np.asarray(X, dtype=np.float64)
        R = self.X_ref
        sq_r = (R ** 2).sum(axis=1)
        out = np.empty((len(X), self.k), dtype=np.int64)
        for start in range(0, len(X), chunk):
            Q = X[start:start + chunk]
            d2 = np.maximum((Q ** 2).sum(axis=1)[:, None] - 2.0 * (Q @ R.T) + sq_r, 0.0)
            if self.k < len(R):
                part = np.argpartition(d2, self.k - 1, axis=1)[:, : self.k]
                # re-rank the partition result with a stable full sort so ties
                # resolve by training-row order
                sub = np.take_along_axis(d2, part, axis=1)
                widened = np.argsort(sub, axis=1, kind="stable")
                cand = np.take_along_axis(part, widened, axis=1)
                # argpartition does not promise tie stability across the cut;
                # verify by comparing against the stable boundary distance
                out[start:start + len(Q)] = _stable_topk(d2, self.k, cand)
            else:
                out[start:start + len(Q)] = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        return out

    def predict_score(self, X) -> np.ndarray:
        nn = self.kneighbors(X)
        return self.y_ref[nn].mean(axis=1)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"X_ref": self.X_ref, "y_ref": self.y_ref}

    def state_meta(self) -> dict:
        return {"k": self.k, "seed": self.seed}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "KnnClassifier":
        m = cls(meta["k"], meta["seed"])
        m.X_ref = arrays["X_ref"]
        m.y_ref = arrays["y_ref"]
        return m


def _stable_topk(d2: np.ndarray, k: int, cand: np.ndarray) -> np.ndarray:
    """Tie-stable top-k: where the k-th distance ties with excluded rows,
    fall back to a stable full argsort for those queries."""
    boundary = np.take_along_axis(d2, cand[:, -1:], axis=1)
    ties = (d2 <= boundary)
    needs_full = ties.sum(axis=1) > k
    if needs_full.any():
        rows = np.flatnonzero(needs_full)
        cand = cand.copy()
        cand[rows] = np.argsort(d2[rows], axis=1, kind="stable")[:, :k]
    return cand
