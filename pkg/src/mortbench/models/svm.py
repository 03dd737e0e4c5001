"""C-SVC with RBF kernel solved by SMO (maximal-violating-pair selection).

Dual: min 1/2 a'Qa - sum(a), 0 <= a <= C, y'a = 0, Q_ij = y_i y_j K_ij.
Stops when the KKT violation m(a) - M(a) drops to tol. Kernel rows are
computed on demand behind a bounded LRU cache. Scores are raw decision
values (no probability calibration).
"""
from __future__ import annotations

import warnings
from collections import OrderedDict

import numpy as np


class SvmModel:
    def __init__(self, C: float = 1.0, gamma="scale", tol: float = 1e-3,
                 max_iter: int = 200000, cache_rows: int = 1024, seed: int = 42):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter
        self.cache_rows = cache_rows
        self.seed = seed
        self.gamma_value: float = 0.0
        self.b: float = 0.0
        self.sv_X: np.ndarray | None = None
        self.sv_coef: np.ndarray | None = None   # alpha_i * y_i
        self.alpha: np.ndarray | None = None     # full dual vector (train order)

    def _resolve_gamma(self, X: np.ndarray) -> float:
        if self.gamma == "scale":
            var = float(X.var())
            return 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        return float(self.gamma)

    def fit(self, X, y) -> dict:
        X = np.ascontiguousarray(X, dtype=np.float64)
        y_pm = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
        n = len(y_pm)
        self.gamma_value = self._resolve_gamma(X)
        sq = (X ** 2).sum(axis=1)
        cache: OrderedDict[int, np.ndarray] = OrderedDict()

        def krow(i: int) -> np.ndarray:
            row = cache.get(i)
            if row is None:
                row = np.exp(-self.gamma_value * np.maximum(sq + sq[i] - 2.0 * (X @ X[i]), 0.0))
                cache[i] = row
                if len(cache) > self.cache_rows:
                    cache.popitem(last=False)
            else:
                cache.move_to_end(i)
            return row

        alpha = np.zeros(n)
        G = -np.ones(n)                   # gradient of the dual at alpha = 0
        C = self.C
        it = 0
        converged = False
        while it < self.max_iter:
            neg_yG = -y_pm * G
            up = ((y_pm > 0) & (alpha < C)) | ((y_pm < 0) & (alpha > 0))
            low = ((y_pm < 0) & (alpha < C)) | ((y_pm > 0) & (alpha > 0))
            up_idx = np.flatnonzero(up)
            low_idx = np.flatnonzero(low)
            if up_idx.size == 0 or low_idx.size == 0:
                converged = True
                break
            i = int(up_idx[np.argmax(neg_yG[up_idx])])
            j = int(low_idx[np.argmin(neg_yG[low_idx])])
            if neg_yG[i] - neg_yG[j] <= self.tol:
                converged = True
                break
            Ki, Kj = krow(i), krow(j)
            quad = Ki[i] + Kj[j] - 2.0 * Ki[j]
            if quad <= 0.0:
                quad = 1e-12
            # move along alpha_i += y_i t, alpha_j -= y_j t
            t_star = (y_pm[j] * G[j] - y_pm[i] * G[i]) / quad
            if y_pm[i] > 0:
                lo_i, hi_i = -alpha[i], C - alpha[i]
            else:
                lo_i, hi_i = alpha[i] - C, alpha[i]
            if y_pm[j] > 0:
                lo_j, hi_j = alpha[j] - C, alpha[j]
            else:
                lo_j, hi_j = -alpha[j], C - alpha[j]
            t = float(np.clip(t_star, max(lo_i, lo_j), min(hi_i, hi_j)))
            alpha[i] = float(np.clip(alpha[i] + y_pm[i] * t, 0.0, C))
            alpha[j] = float(np.clip(alpha[j] - y_pm[j] * t, 0.0, C))
            G += y_pm * t * (Ki - Kj)
            it += 1
        if not converged:
            warnings.warn(f"SMO stopped at max_iter={self.max_iter} with KKT gap "
                          f"{float(neg_yG[i] - neg_yG[j]):.3e}", RuntimeWarning,
                          stacklevel=2)

        # intercept from free vectors; fall back to the violation midpoint
        b_cand = -y_pm * G                # equals y_a - u_a
        free = (alpha > 0.0) & (alpha < C)
        if free.any():
            self.b = float(b_cand[free].mean())
        else:
            neg_yG = -y_pm * G
            up = ((y_pm > 0) & (alpha < C)) | ((y_pm < 0) & (alpha > 0))
            low = ((y_pm < 0) & (alpha < C)) | ((y_pm > 0) & (alpha > 0))
            hi = float(neg_yG[up].max()) if up.any() else 0.0
            lo = float(neg_yG[low].min()) if low.any() else 0.0
            self.b = (hi + lo) / 2.0

        sv = alpha > 0.0
        self.sv_X = X[sv].copy()
        self.sv_coef = (alpha * y_pm)[sv].copy()
        self.alpha = alpha
        return {"iterations": it, "converged": converged,
                "n_support": int(sv.sum()), "gamma_value": self.gamma_value}

    def decision_function(self, X, chunk: int = 2048) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        sv_sq = (self.sv_X ** 2).sum(axis=1)
        out = np.empty(len(X))
        for start in range(0, len(X), chunk):
            Q = X[start:start + chunk]
            d2 = np.maximum((Q ** 2).sum(axis=1)[:, None] - 2.0 * (Q @ self.sv_X.T) + sv_sq, 0.0)
            out[start:start + len(Q)] = np.exp(-self.gamma_value * d2) @ self.sv_coef + self.b
        return out

    def predict_score(self, X) -> np.ndarray:
        return self.decision_function(X)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"sv_X": self.sv_X, "sv_coef": self.sv_coef,
                "scalars": np.asarray([self.b, self.gamma_value], dtype=np.float64)}

    def state_meta(self) -> dict:
        return {"C": self.C, "gamma": self.gamma, "tol": self.tol,
                "max_iter": self.max_iter, "cache_rows": self.cache_rows,
                "seed": self.seed}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "SvmModel":
        m = cls(meta["C"], meta["gamma"], meta["tol"], meta["max_iter"],
                meta["cache_rows"], meta["seed"])
        m.sv_X = arrays["sv_X"]
        m.sv_coef = arrays["sv_coef"]
        m.b = float(arrays["scalars"][0])
        m.gamma_value = float(arrays["scalars"][1])
        return m
