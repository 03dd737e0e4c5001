"""Model-agnostic Shapley attributions (kernel-weighted least squares) plus
global impact-percentage aggregation.

Coalition values are averaged over a background sample; local accuracy is
enforced structurally by eliminating one coefficient from the regression, so
phi_0 + sum(phi) equals the explained score in both exhaustive and sampled
modes. Exhaustive mode (p <= 12) enumerates every coalition and is the oracle
the sampled path is tested against.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import (
    AllZeroAttribution,
    FeatureSetMismatch,
    InvalidConfig,
    MissingArtifact,
    ShapeMismatch,
    TooFewSamples,
)
from .util import derive_rng

EXHAUSTIVE_MAX_P = 12
DEFAULT_N_SAMPLES = 2048
DEFAULT_BACKGROUND = 100


@dataclass(frozen=True)
class ShapMatrix:
    values: np.ndarray          # (n, p)
    base_value: float           # mean background score
    feature_names: tuple
    model_tag: str = ""

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.feature_names):
            raise ShapeMismatch(
                f"values {self.values.shape} vs {len(self.feature_names)} names"
            )


@dataclass(frozen=True)
class ImpactSummary:
    feature_names: tuple
    mean_abs: np.ndarray        # m_j = mean_i |phi_ij|
    std_abs: np.ndarray
    impact_pct: np.ndarray
    model_tag: str = ""


@dataclass(frozen=True)
class AggregateImpact:
    feature_names: tuple
    mean_abs: np.ndarray        # cross-model average of m_j
    impact_pct: np.ndarray
    adjusted_std: np.ndarray
    group_tag: str = ""


def _batch_score(score_fn, Z: np.ndarray) -> np.ndarray:
    """Call score_fn on a matrix, tolerating row-only callables."""
    try:
        out = np.asarray(score_fn(Z), dtype=float)
        if out.shape == (len(Z),):
            return out
    except Exception:
        pass
    return np.array([float(score_fn(Z[i])) for i in range(len(Z))])


def background_sample(X: np.ndarray, size: int = DEFAULT_BACKGROUND, seed: int = 42) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if len(X) <= size:
        return X.copy()
    rng = derive_rng(seed, "shap-background")
    idx = np.sort(rng.choice(len(X), size=size, replace=False))
    return X[idx]


def _coalition_values(score_fn, x, background, Z, chunk_rows: int = 200_000) -> np.ndarray:
    """v(S) = mean_b score(x on S, b off S) for each coalition row of Z."""
    m, p = Z.shape
    nb = len(background)
    per = max(1, chunk_rows // nb)
    out = np.empty(m)
    for start in range(0, m, per):
        zc = Z[start:start + per]
        # (chunk, nb, p): background replicated, masked entries replaced by x
        synth = np.broadcast_to(background, (len(zc), nb, p)).copy()
        mask = zc[:, None, :].astype(bool)
        synth[np.broadcast_to(mask, synth.shape)] = np.broadcast_to(
            x, (len(zc), nb, p)
        )[np.broadcast_to(mask, synth.shape)]
        scores = _batch_score(score_fn, synth.reshape(-1, p))
        out[start:start + per] = scores.reshape(len(zc), nb).mean(axis=1)
    return out


def _solve_constrained_wls(Z, v, w, fx, phi0):
    """WLS with the last feature eliminated so local accuracy holds exactly."""
    p = Z.shape[1]
    target = v - phi0 - Z[:, -1] * (fx - phi0)
    design = Z[:, :-1] - Z[:, -1:]
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(design * sw[:, None], target * sw, rcond=None)
    phi = np.empty(p)
    phi[:-1] = beta
    phi[-1] = (fx - phi0) - beta.sum()
    return phi


def _kernel_weight(p: int, s: int) -> float:
    return (p - 1) / (math.comb(p, s) * s * (p - s))


def _exhaustive_coalitions(p: int):
    rows, weights = [], []
    for s in range(1, p):
        w = _kernel_weight(p, s)
        for combo in combinations(range(p), s):
            z = np.zeros(p)
            z[list(combo)] = 1.0
            rows.append(z)
            weights.append(w)
    return np.array(rows), np.array(weights)


def _sampled_coalitions(p: int, n_samples: int, rng):
    """Enumerate paired sizes fully while the budget allows, then sample.

    Sizes are processed (1, p-1), (2, p-2), ... in decreasing kernel-mass
    order. A fully enumerated size keeps the exact per-subset weight; the
    leftover budget is spread over the remaining sizes in proportion to
    their kernel mass, with each size's mass split uniformly over the drawn
    subsets.
    """
    pairs = [(s, p - s) if p - s != s else (s,) for s in range(1, p // 2 + 1)]
    rows, weights = [], []
    budget = n_samples
    idx = 0
    while idx < len(pairs):
        group = pairs[idx]
        count = sum(math.comb(p, s) for s in group)
        if count > budget:
            break
        for s in group:
            w = _kernel_weight(p, s)
            for combo in combinations(range(p), s):
                z = np.zeros(p)
                z[list(combo)] = 1.0
                rows.append(z)
                weights.append(w)
        budget -= count
        idx += 1
    if idx < len(pairs) and budget > 0:
        sizes = [s for g in pairs[idx:] for s in g]
        masses = np.array([(p - 1) / (s * (p - s)) for s in sizes])
        counts = rng.multinomial(budget, masses / masses.sum())
        for s, mass, k in zip(sizes, masses, counts):
            if k == 0:
                continue
            seen = {tuple(np.sort(rng.choice(p, size=s, replace=False))) for _ in range(int(k))}
            for combo in seen:
                z = np.zeros(p)
                z[list(combo)] = 1.0
                rows.append(z)
                weights.append(mass / len(seen))
    return np.array(rows), np.array(weights)


def kernel_shap(
    score_fn,
    x,
    background,
    n_samples: int = DEFAULT_N_SAMPLES,
    seed: int = 42,
    mode: str = "auto",
) -> tuple[np.ndarray, float]:
    """Shapley attribution of score_fn(x) against a background sample.

    mode: auto (exhaustive when p <= 12), exhaustive, or sampled. Sampled
    mode needs n_samples >= 2p+2 coalitions to keep the regression
    overdetermined near the constraint.
    """
    x = np.asarray(x, dtype=float).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=float))
    p = x.size
    if background.shape[1] != p:
        raise ShapeMismatch(f"background has {background.shape[1]} columns, x has {p}")
    if len(background) == 0:
        raise InvalidConfig("empty background")
    if mode not in ("auto", "exhaustive", "sampled"):
        raise InvalidConfig(f"unknown mode {mode!r}")
    if mode == "exhaustive" and p > EXHAUSTIVE_MAX_P:
        raise InvalidConfig(f"exhaustive mode capped at p={EXHAUSTIVE_MAX_P}, got {p}")

    phi0 = float(_batch_score(score_fn, background).mean())
    fx = float(_batch_score(score_fn, x[None, :])[0])
    if p == 1:
        return np.array([fx - phi0]), phi0

    exhaustive = mode == "exhaustive" or (mode == "auto" and p <= EXHAUSTIVE_MAX_P)
    if exhaustive:
        Z, w = _exhaustive_coalitions(p)
    else:
        if n_samples < 2 * p + 2:
            raise TooFewSamples(f"need n_samples >= {2 * p + 2} for p={p}, got {n_samples}")
        Z, w = _sampled_coalitions(p, n_samples, derive_rng(seed, "kernel-shap"))
    v = _coalition_values(score_fn, x, background, Z)
    phi = _solve_constrained_wls(Z, v, w, fx, phi0)
    return phi, phi0


def explain_matrix(
    score_fn,
    X,
    background,
    feature_names,
    n_samples: int = DEFAULT_N_SAMPLES,
    seed: int = 42,
    mode: str = "auto",
    model_tag: str = "",
) -> ShapMatrix:
    """kernel_shap per row of X; rows get independent derived seeds."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    vals = np.empty_like(X)
    base = 0.0
    for i in range(len(X)):
        row_seed = int(derive_rng(seed, "shap-row", i).integers(0, 2**31 - 1))
        vals[i], base = kernel_shap(score_fn, X[i], background, n_samples, row_seed, mode)
    return ShapMatrix(
        values=vals,
        base_value=base,
        feature_names=tuple(feature_names),
        model_tag=model_tag,
    )


def impact_percentages(shap: ShapMatrix) -> ImpactSummary:
    """Per-feature mean |phi| converted to percentages of the total."""
    a = np.abs(shap.values)
    m = a.mean(axis=0)
    s = a.std(axis=0)
    total = m.sum()
    if total == 0.0:
        warnings.warn(
            "all attributions are zero; impact percentages set uniform",
            AllZeroAttribution,
        )
        pct = np.full(m.size, 100.0 / m.size)
    else:
        pct = 100.0 * m / total
    return ImpactSummary(
        feature_names=shap.feature_names,
        mean_abs=m,
        std_abs=s,
        impact_pct=pct,
        model_tag=shap.model_tag,
    )


def aggregate_impacts(summaries: list[ImpactSummary], group_tag: str = "") -> AggregateImpact:
    """Average mean|phi| across models first, then convert to percentages.

    The adjusted spread rescales the averaged std by the ratio of a
    feature's impact percentage to its averaged mean attribution.
    """
    if not summaries:
        raise InvalidConfig("aggregate_impacts needs at least one summary")
    names = summaries[0].feature_names
    for s in summaries[1:]:
        if s.feature_names != names:
            raise FeatureSetMismatch(f"{s.model_tag or 'summary'} has different features")
    mean_abs = np.mean([s.mean_abs for s in summaries], axis=0)
    std_avg = np.mean([s.std_abs for s in summaries], axis=0)
    total = mean_abs.sum()
    if total == 0.0:
        warnings.warn(
            "all aggregated attributions are zero; impact percentages set uniform",
            AllZeroAttribution,
        )
        pct = np.full(mean_abs.size, 100.0 / mean_abs.size)
    else:
        pct = 100.0 * mean_abs / total
    with np.errstate(divide="ignore", invalid="ignore"):
        adj = np.where(mean_abs > 0, std_avg * pct / np.where(mean_abs > 0, mean_abs, 1.0), 0.0)
    return AggregateImpact(
        feature_names=names,
        mean_abs=mean_abs,
        impact_pct=pct,
        adjusted_std=adj,
        group_tag=group_tag,
    )


def violin_export(shap: ShapMatrix, X, path=None) -> list[dict]:
    """Long-format (feature, shap_value, feature_value, instance_id) rows,
    feature blocks ordered by mean |phi| descending."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape != shap.values.shape:
        raise ShapeMismatch(f"X {X.shape} vs shap values {shap.values.shape}")
    order = np.argsort(-np.abs(shap.values).mean(axis=0), kind="stable")
    rows = []
    for j in order:
        name = shap.feature_names[j]
        for i in range(len(X)):
            rows.append(
                {
                    "feature": name,
                    "shap_value": float(shap.values[i, j]),
                    "feature_value": float(X[i, j]),
                    "instance_id": i,
                }
            )
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(
                f, fieldnames=["feature", "shap_value", "feature_value", "instance_id"]
            )
            writer.writeheader()
            writer.writerows(rows)
    return rows


class LlmScorer:
    """score_fn over raw feature rows backed by a chat endpoint.

    Rows are serialized to narratives; answers are cached by narrative text
    so repeated coalitions never requery. die -> 1.0, survive -> 0.0,
    failed -> 0.5. cache_only forbids network traffic (offline replay).
    Not safe for concurrent invocation; explain rows serially.
    """

    def __init__(self, schema, feature_names, endpoint=None, policy=None,
                 cache: dict | None = None, cache_only: bool = False):
        from .narrative import render_narrative, row_mapping

        self._render = render_narrative
        self._row_mapping = row_mapping
        self.schema = schema
        self.feature_names = list(feature_names)
        self.endpoint = endpoint
        self.policy = policy
        self.cache = cache if cache is not None else {}
        self.cache_only = cache_only
        if not cache_only and endpoint is None:
            raise InvalidConfig("LlmScorer needs an endpoint unless cache_only")

    def _score_text(self, text: str) -> float:
        if text in self.cache:
            return self.cache[text]
        if self.cache_only:
            raise MissingArtifact(f"no cached response for narrative: {text[:80]}...")
        from .llm.client import classify_patient

        outcome = classify_patient(0, text, self.endpoint, self.policy)
        score = {"die": 1.0, "survive": 0.0}.get(outcome.final_label, 0.5)
        self.cache[text] = score
        return score

    def __call__(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.empty(len(Z))
        for i, row in enumerate(Z):
            text = self._render(
                self._row_mapping(row, self.feature_names), self.schema
            ).text
            out[i] = self._score_text(text)
        return out
