"""Feed-forward neural net: ReLU hidden layers, sigmoid output, Adam.

Loss is mean binary cross-entropy plus an L2 weight penalty scaled per
batch (alpha/(2m) * sum ||W||^2, biases unpenalized). Early stopping holds
out a stratified 10% validation slice and restores the best weights.
"""
from __future__ import annotations

import warnings

import numpy as np

from ..util import derive_rng


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _init_params(layers: list[int], rng: np.random.Generator):
    params = []
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        params.append((W, b))
    return params


def _forward(params, X):
    acts = [X]
    z_list = []
    a = X
    for li, (W, b) in enumerate(params):
        z = a @ W + b
        z_list.append(z)
        a = np.maximum(z, 0.0) if li < len(params) - 1 else _sigmoid(z)
        acts.append(a)
    return acts, z_list


def _loss_and_grads(params, X, y, alpha):
    """(scalar loss, list of (dW, db)) on one batch; y is a column vector."""
    m = len(X)
    acts, z_list = _forward(params, X)
    z_out = z_list[-1]
    loss = float((np.logaddexp(0.0, z_out) - y * z_out).mean())
    loss += alpha / (2.0 * m) * sum(float((W ** 2).sum()) for W, _ in params)

    grads = [None] * len(params)
    delta = (acts[-1] - y) / m
    for li in range(len(params) - 1, -1, -1):
        W, _ = params[li]
        dW = acts[li].T @ delta + (alpha / m) * W
        db = delta.sum(axis=0)
        grads[li] = (dW, db)
        if li > 0:
            delta = (delta @ W.T) * (z_list[li - 1] > 0.0)
    return loss, grads


def flatten_params(params) -> np.ndarray:
    return np.concatenate([np.r_[W.ravel(), b] for W, b in params])


def unflatten_params(flat: np.ndarray, layers: list[int]):
    params, pos = [], 0
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        W = flat[pos: pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos: pos + fan_out]
        pos += fan_out
        params.append((W, b))
    return params


def mlp_loss_grad(flat: np.ndarray, layers: list[int], X, y,
                  alpha: float) -> tuple[float, np.ndarray]:
    """Flat-vector loss/gradient for finite-difference checking."""
    params = unflatten_params(np.asarray(flat, dtype=np.float64), layers)
    y_col = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    loss, grads = _loss_and_grads(params, np.asarray(X, dtype=np.float64), y_col, alpha)
    return loss, flatten_params(grads)


class MlpClassifier:
    def __init__(self, hidden=(100,), alpha: float = 1e-4, max_epochs: int = 200,
                 batch_size: int = 200, learning_rate: float = 1e-3,
                 patience: int = 10, tol: float = 1e-4,
                 validation_fraction: float = 0.1, seed: int = 42):
        self.hidden = tuple(hidden)
        self.alpha = alpha
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.tol = tol
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.layers: list[int] = []
        self.params = []

    def _val_split(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rng = derive_rng(self.seed, "mlp-val")
        classes = np.unique(y)
        if any((y == c).sum() < 2 for c in classes):
            return np.arange(len(y)), np.zeros(0, dtype=np.int64)
        val_parts = []
        for c in classes:
            idx = np.flatnonzero(y == c)
            perm = idx[rng.permutation(len(idx))]
            n_val = max(1, int(round(self.validation_fraction * len(idx))))
            val_parts.append(perm[:n_val])
        val = np.sort(np.concatenate(val_parts))
        train = np.setdiff1d(np.arange(len(y)), val)
        return train, val

    def fit(self, X, y) -> dict:
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.layers = [X.shape[1], *self.hidden, 1]
        self.params = _init_params(self.layers, derive_rng(self.seed, "mlp-init"))

        tr_idx, val_idx = self._val_split(y.astype(np.int64))
        X_tr, y_tr = X[tr_idx], y[tr_idx].reshape(-1, 1)
        X_val, y_val = X[val_idx], y[val_idx]

        beta1, beta2, eps = 0.9, 0.999, 1e-8
        m_state = [(np.zeros_like(W), np.zeros_like(b)) for W, b in self.params]
        v_state = [(np.zeros_like(W), np.zeros_like(b)) for W, b in self.params]
        step = 0
        best_score = -np.inf
        best_params = None
        no_improve = 0
        stopped_early = False
        epochs_run = 0
        n = len(X_tr)
        batch = min(self.batch_size, n)

        for epoch in range(self.max_epochs):
            epochs_run = epoch + 1
            order = derive_rng(self.seed, "mlp-shuffle", epoch).permutation(n)
            for start in range(0, n, batch):
                take = order[start:start + batch]
                _, grads = _loss_and_grads(self.params, X_tr[take], y_tr[take],
                                           self.alpha)
                step += 1
                new_params = []
                for li, ((W, b), (gW, gb)) in enumerate(zip(self.params, grads)):
                    mW, mb = m_state[li]
                    vW, vb = v_state[li]
                    mW = beta1 * mW + (1 - beta1) * gW
                    mb = beta1 * mb + (1 - beta1) * gb
                    vW = beta2 * vW + (1 - beta2) * gW ** 2
                    vb = beta2 * vb + (1 - beta2) * gb ** 2
                    m_state[li] = (mW, mb)
                    v_state[li] = (vW, vb)
                    c1 = 1 - beta1 ** step
                    c2 = 1 - beta2 ** step
                    W = W - self.learning_rate * (mW / c1) / (np.sqrt(vW / c2) + eps)
                    b = b - self.learning_rate * (mb / c1) / (np.sqrt(vb / c2) + eps)
                    new_params.append((W, b))
                self.params = new_params

            if len(val_idx) == 0:
                continue
            score = float(((self.predict_score(X_val) >= 0.5) == (y_val == 1)).mean())
            if score < best_score + self.tol:
                no_improve += 1
            else:
                no_improve = 0
            if score > best_score:
                best_score = score
                best_params = [(W.copy(), b.copy()) for W, b in self.params]
            if no_improve >= self.patience:
                stopped_early = True
                break

        if best_params is not None:
            self.params = best_params
        if not stopped_early:
            warnings.warn(f"MLP ran all {self.max_epochs} epochs without the "
                          f"validation score stalling", RuntimeWarning, stacklevel=2)
        return {"epochs": epochs_run, "converged": stopped_early,
                "validation_accuracy": None if best_score == -np.inf else best_score,
                "n_validation": int(len(val_idx))}

    def predict_score(self, X) -> np.ndarray:
        acts, _ = _forward(self.params, np.asarray(X, dtype=np.float64))
        return acts[-1].ravel()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for li, (W, b) in enumerate(self.params):
            out[f"W{li}"] = W
            out[f"b{li}"] = b
        return out

    def state_meta(self) -> dict:
        return {"hidden": list(self.hidden), "alpha": self.alpha,
                "max_epochs": self.max_epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "patience": self.patience,
                "tol": self.tol, "validation_fraction": self.validation_fraction,
                "seed": self.seed, "layers": self.layers}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "MlpClassifier":
        m = cls(tuple(meta["hidden"]), meta["alpha"], meta["max_epochs"],
                meta["batch_size"], meta["learning_rate"], meta["patience"],
                meta["tol"], meta["validation_fraction"], meta["seed"])
        m.layers = list(meta["layers"])
        m.params = [(arrays[f"W{li}"], arrays[f"b{li}"])
                    for li in range(len(m.layers) - 1)]
        return m
