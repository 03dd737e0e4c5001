"""Gradient boosted trees with second-order (Newton) splits and leaves.

Logistic loss, base score 0.5 (initial log-odds 0). Split gain
  1/2 [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)] - gamma
and leaf weight -G/(H+lam), exact greedy enumeration over sorted feature
values.
"""
from __future__ import annotations

import numpy as np

from .tree import TreeNodes, tree_apply


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def best_newton_split(X, g, h, idx, lam, gamma, min_child_weight):
    """Best (feature, threshold, gain) over all features; None if no split
    clears gain > 0 under the hessian-mass minimum."""
    n = idx.size
    Xs = X[idx]
    order = np.argsort(Xs, axis=0, kind="stable")
    xo = np.take_along_axis(Xs, order, axis=0)
    go = g[idx][order]
    ho = h[idx][order]
    cg = np.cumsum(go, axis=0)
    ch = np.cumsum(ho, axis=0)
    G, H = cg[-1, 0], ch[-1, 0]
    boundary = xo[:-1] < xo[1:]
    if not boundary.any():
        return None
    GL, HL = cg[:-1], ch[:-1]
    GR, HR = G - GL, H - HL
    ok = boundary & (HL >= min_child_weight) & (HR >= min_child_weight)
    if not ok.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam)
                      - G ** 2 / (H + lam)) - gamma
    gain[~ok] = -np.inf
    flat = gain.T.ravel()               # feature-major: ties -> lowest feature
    k = int(np.argmax(flat))
    if flat[k] <= 1e-12:
        return None
    fpos, i = divmod(k, n - 1)
    thr = (xo[i, fpos] + xo[i + 1, fpos]) / 2.0
    if thr >= xo[i + 1, fpos]:
        thr = xo[i, fpos]
    return fpos, float(thr), float(flat[k])


def grow_newton_tree(X, g, h, max_depth, lam, gamma, min_child_weight) -> TreeNodes:
    n = len(g)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append((0.0,))
        return len(feature) - 1

    stack = [(new_node(), np.arange(n, dtype=np.int64), 0)]
    while stack:
        node, idx, depth = stack.pop()
        Gs = float(g[idx].sum())
        Hs = float(h[idx].sum())
        value[node] = (-Gs / (Hs + lam),)
        if depth >= max_depth:
            continue
        best = best_newton_split(X, g, h, idx, lam, gamma, min_child_weight)
        if best is None:
            continue
        j, thr, _ = best
        mask = X[idx, j] <= thr
        feature[node] = j
        threshold[node] = thr
        lid, rid = new_node(), new_node()
        left[node], right[node] = lid, rid
        stack.append((rid, idx[~mask], depth + 1))
        stack.append((lid, idx[mask], depth + 1))

    return TreeNodes(np.array(feature, dtype=np.int64),
                     np.array(threshold, dtype=np.float64),
                     np.array(left, dtype=np.int64),
                     np.array(right, dtype=np.int64),
                     np.array(value, dtype=np.float64))


class GradientBoostingModel:
    def __init__(self, n_rounds: int = 100, max_depth: int = 3,
                 learning_rate: float = 0.1, reg_lambda: float = 1.0,
                 gamma: float = 0.0, min_child_weight: float = 1.0,
                 seed: int = 42):
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_weight = min_child_weight
        self.seed = seed
        self.trees: list[TreeNodes] = []
        self.train_loss: list[float] = []

    def fit(self, X, y) -> dict:
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        F = np.zeros(len(y))
        self.trees = []
        self.train_loss = []
        y_pm = 2.0 * y - 1.0
        for _ in range(self.n_rounds):
            p = _sigmoid(F)
            g = p - y
            h = p * (1.0 - p)
            tree = grow_newton_tree(X, g, h, self.max_depth, self.reg_lambda,
                                    self.gamma, self.min_child_weight)
            self.trees.append(tree)
            F += self.learning_rate * tree.value[tree_apply(tree, X), 0]
            self.train_loss.append(float(np.logaddexp(0.0, -y_pm * F).mean()))
        return {"n_rounds": len(self.trees), "final_loss": self.train_loss[-1]
                if self.train_loss else None, "converged": True}

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        F = np.zeros(len(X))
        for tree in self.trees:
            F += self.learning_rate * tree.value[tree_apply(tree, X), 0]
        return F

    def predict_score(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"train_loss": np.asarray(self.train_loss, dtype=np.float64)}
        for t, tree in enumerate(self.trees):
            pre = f"t{t:03d}_"
            out[pre + "feature"] = tree.feature
            out[pre + "threshold"] = tree.threshold
            out[pre + "left"] = tree.left
            out[pre + "right"] = tree.right
            out[pre + "value"] = tree.value
        return out

    def state_meta(self) -> dict:
        return {"n_rounds": self.n_rounds, "max_depth": self.max_depth,
                "learning_rate": self.learning_rate, "reg_lambda": self.reg_lambda,
                "gamma": self.gamma, "min_child_weight": self.min_child_weight,
                "seed": self.seed, "n_trees": len(self.trees)}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "GradientBoostingModel":
        m = cls(meta["n_rounds"], meta["max_depth"], meta["learning_rate"],
                meta["reg_lambda"], meta["gamma"], meta["min_child_weight"],
                meta["seed"])
        m.train_loss = arrays["train_loss"].tolist()
        for t in range(meta["n_trees"]):
            pre = f"t{t:03d}_"
            m.trees.append(TreeNodes(arrays[pre + "feature"], arrays[pre + "threshold"],
                                     arrays[pre + "left"], arrays[pre + "right"],
                                     arrays[pre + "value"]))
        return m
