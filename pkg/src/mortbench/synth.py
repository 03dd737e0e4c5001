"""Deterministic synthetic cohort generator.

Produces a desk-scale stand-in for a multi-hospital admission cohort:
numeric vitals/labs with configured normal ranges, binary symptoms/history/
treatment flags, an age/sex pair, MCAR missingness, round-robin hospital IDs,
and labels drawn from a known logistic mechanism. The mechanism combines main
effects on every informative feature with pairwise interactions among them,
so tree ensembles have headroom over a purely linear fit while the exact
per-row outcome probability stays available as a Bayes-score oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import InvalidConfig
from .schema import FeatureSchema, FeatureSpec
from .util import derive_rng


@dataclass
class SynthConfig:
    n: int = 9000
    p_numeric: int = 23
    p_binary: int = 53
    informative: int = 40
    coefficient_scale: float = 0.9
    interaction_pairs: int = 10
    interaction_scale: float = 1.1
    missing_rate: float = 0.02
    minority_fraction: float = 0.2511
    hospitals: int = 4
    seed: int = 42

    def validate(self):
        if self.n < 10:
            raise InvalidConfig("n too small")
        if self.p_numeric < 2 or self.p_binary < 2:
            raise InvalidConfig("need at least 2 numeric and 2 binary features")
        if self.informative > self.p_numeric + self.p_binary:
            raise InvalidConfig("informative exceeds feature count")
        if not 0 <= self.missing_rate < 1:
            raise InvalidConfig("missing_rate must be in [0, 1)")
        if not 0 < self.minority_fraction <= 0.5:
            raise InvalidConfig("minority_fraction must be in (0, 0.5]")
        if self.hospitals < 1:
            raise InvalidConfig("need at least one hospital")


@dataclass
class SynthTruth:
    """The generating mechanism: exact coefficients and per-row probabilities."""
    feature_names: list[str]
    main_coef: dict[str, float]
    interactions: list[tuple[str, str, float]]
    intercept: float
    standardizers: dict[str, tuple[float, float]]   # name -> (center, scale)
    bayes_prob: np.ndarray = field(repr=False, default=None)

    def logits(self, Z: np.ndarray, names: list[str]) -> np.ndarray:
        """Logit of the true mechanism for standardized feature columns Z."""
        col = {n: i for i, n in enumerate(names)}
        out = np.full(len(Z), self.intercept)
        for name, beta in self.main_coef.items():
            out += beta * Z[:, col[name]]
        for a, b, gamma in self.interactions:
            out += gamma * Z[:, col[a]] * Z[:, col[b]]
        return out


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _build_schema(cfg: SynthConfig, rng: np.random.Generator) -> tuple[FeatureSchema, dict]:
    """Schema plus per-feature sampling parameters."""
    features = [FeatureSpec("age", "demographic", "numeric", display_name="age")]
    params = {"age": {"mu": 58.0, "sd": 19.0}}
    vital_kinds = ["vital", "lab"]
    for j in range(cfg.p_numeric - 1):
        mu = float(rng.uniform(20, 200))
        sd = float(mu * rng.uniform(0.1, 0.3))
        kind = vital_kinds[0] if j < 4 else vital_kinds[1]
        name = f"num{j:02d}_{kind}"
        features.append(FeatureSpec(
            name, kind, "numeric",
            normal_range=(round(mu - 0.8 * sd, 3), round(mu + 0.8 * sd, 3)),
            display_name=f"marker {j:02d}",
        ))
        params[name] = {"mu": mu, "sd": sd}

    features.append(FeatureSpec("sex", "demographic", "binary", display_name="sex"))
    params["sex"] = {"p": 0.54}
    bin_kinds = ["symptom", "history", "treatment"]
    for j in range(cfg.p_binary - 1):
        kind = bin_kinds[j % 3]
        name = f"bin{j:02d}_{kind}"
        prev = float(rng.uniform(0.05, 0.5))
        features.append(FeatureSpec(name, kind, "binary", display_name=f"{kind} {j:02d}"))
        params[name] = {"p": prev}

    schema = FeatureSchema(
        features=features,
        label_name="died",
        hospital_column="hospital",
        external_hospital=f"H{cfg.hospitals}",
        seed=cfg.seed,
    )
    return schema, params


def generate(cfg: SynthConfig) -> tuple[Dataset, FeatureSchema, SynthTruth]:
    cfg.validate()
    rng = derive_rng(cfg.seed, "synth")
    schema, params = _build_schema(cfg, rng)
    names = schema.names
    n, p = cfg.n, len(names)

    X = np.empty((n, p))
    standardizers = {}
    for j, name in enumerate(names):
        pr = params[name]
        if "mu" in pr:
            X[:, j] = rng.normal(pr["mu"], pr["sd"], size=n)
            if name == "age":
                X[:, j] = np.clip(np.round(X[:, j]), 18, 100)
            standardizers[name] = (pr["mu"], pr["sd"])
        else:
            X[:, j] = (rng.random(n) < pr["p"]).astype(float)
            q = pr["p"]
            standardizers[name] = (q, float(np.sqrt(q * (1 - q))))

    Z = np.empty_like(X)
    for j, name in enumerate(names):
        c, s = standardizers[name]
        Z[:, j] = (X[:, j] - c) / s

    informative = sorted(int(j) for j in rng.choice(p, size=cfg.informative, replace=False))

    # a concentrated strong block carries most of the signal (and all the
    # interactions) so the mechanism stays learnable at this sample size;
    # the remaining informative features get a weak linear tail. Common
    # binary features are preferred for the strong block because their
    # products are plain contingency tables.
    strong_pool = [j for j in informative
                   if "p" in params[names[j]] and names[j] != "sex"
                   and params[names[j]]["p"] >= 0.2]
    rest = [j for j in informative if j not in set(strong_pool)]
    n_strong = min(8, cfg.informative)
    strong = strong_pool[:n_strong]
    strong += rest[: n_strong - len(strong)]
    weak = [j for j in informative if j not in set(strong)]

    main_coef = {}
    for j in strong:
        beta = rng.uniform(0.6, 1.0) * (1 if rng.random() < 0.5 else -1)
        main_coef[names[j]] = float(beta * cfg.coefficient_scale)
    for j in weak:
        beta = rng.uniform(0.05, 0.15) * (1 if rng.random() < 0.5 else -1)
        main_coef[names[j]] = float(beta * cfg.coefficient_scale)

    interactions = []
    if cfg.interaction_pairs and len(strong) >= 2:
        all_pairs = [(a, b) for k, a in enumerate(strong) for b in strong[k + 1:]]
        take = rng.choice(len(all_pairs), size=min(cfg.interaction_pairs, len(all_pairs)),
                          replace=False)
        for t in sorted(int(v) for v in take):
            a, b = all_pairs[t]
            gamma = rng.uniform(0.4, 0.8) * (1 if rng.random() < 0.5 else -1)
            interactions.append((names[a], names[b],
                                 float(gamma * cfg.coefficient_scale * cfg.interaction_scale)))

    truth = SynthTruth(names, main_coef, interactions, 0.0, standardizers)
    raw_logit = truth.logits(Z, names)

    # intercept via bisection so mean outcome probability hits the target
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sigmoid(raw_logit + mid).mean() < cfg.minority_fraction:
            lo = mid
        else:
            hi = mid
    truth.intercept = 0.5 * (lo + hi)

    prob = _sigmoid(raw_logit + truth.intercept)
    truth.bayes_prob = prob
    y = (rng.random(n) < prob).astype(np.int64)

    if cfg.missing_rate > 0:
        mask = rng.random(X.shape) < cfg.missing_rate
        X[mask] = np.nan

    hospital = np.array([f"H{1 + i % cfg.hospitals}" for i in range(n)], dtype=object)
    return Dataset(schema, X, y, hospital), schema, truth
