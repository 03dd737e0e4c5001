"""Pipeline orchestration: one subcommand per stage, one manifest per run.

Every command resolves a RunConfig (YAML file + flag overrides), reads its
declared inputs, writes artifacts under the output directory, and records a
manifest with content hashes so identical configs and inputs are verifiable
byte-for-byte. Errors leave a machine-readable JSON line on stderr and a
nonzero exit code.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import json
import os
import sys
from dataclasses import dataclass, field

import click
import numpy as np
import yaml

from . import __version__
from .dataset import Dataset, SplitBundle, load_csv, make_splits, save_csv
from .errors import InvalidConfig, MissingArtifact, MortbenchError
from .explain import (
    aggregate_impacts,
    background_sample,
    explain_matrix,
    impact_percentages,
    violin_export,
)
from .llm.client import ChatEndpointConfig, PromptPolicy, ZscExperiment, run_zsc
from .metrics import learning_curve, score_report
from .models import FAMILIES, fit, grid_search_cv, load_model, make_spec, mlp_grid, save_model
from .narrative import corpus_records, read_corpus, row_mapping, write_corpus
from .preprocess import PreprocessConfig, pipeline_artifact, preprocess_bundle
from .schema import load_schema, save_schema
from .synth import SynthConfig, generate
from .util import dump_json, load_arrays, load_json, save_arrays, sha256_bytes, sha256_file

DEFAULT_CURVE_SIZES = (20, 100, 200, 400, 1000, 2476)
_SPLITS = ("train", "internal_test", "external")


@dataclass
class RunConfig:
    output_dir: str = "runs/default"
    data_csv: str = ""            # defaults to <output_dir>/data.csv
    schema_path: str = ""         # defaults to <output_dir>/schema.yaml
    seed: int = 42
    test_fraction: float = 0.2
    zsc_size: int = 590
    external_hospital: str = ""   # falls back to the schema's declared one
    per_split_independent: bool = True
    apply_smote: bool = True
    smote_eval: bool = True
    top_k: int = 40
    models: tuple = FAMILIES
    curve_models: tuple = ("rf", "gbt")
    curve_sizes: tuple = DEFAULT_CURVE_SIZES
    synth: dict = field(default_factory=dict)
    llm: dict = field(default_factory=dict)
    shap: dict = field(default_factory=dict)

    def resolve(self):
        if not self.data_csv:
            self.data_csv = os.path.join(self.output_dir, "data.csv")
        if not self.schema_path:
            self.schema_path = os.path.join(self.output_dir, "schema.yaml")
        return self

    def digest(self) -> str:
        """Config hash over everything except filesystem locations; paths
        are covered by per-file input hashes instead, so relocating a run
        does not change its identity."""
        d = dataclasses.asdict(self)
        for key in ("output_dir", "data_csv", "schema_path"):
            d.pop(key)
        for k, v in list(d.items()):
            if isinstance(v, tuple):
                d[k] = list(v)
        return sha256_bytes(json.dumps(d, sort_keys=True).encode())


def load_run_config(path: str | None, output: str | None = None,
                    seed: int | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        with open(path, encoding="utf-8") as f:
            doc = yaml.safe_load(f) or {}
        known = {f.name for f in dataclasses.fields(RunConfig)}
        for key, value in doc.items():
            if key not in known:
                raise InvalidConfig(f"unknown run-config key {key!r}")
            if isinstance(getattr(cfg, key), tuple):
                value = tuple(value)
            setattr(cfg, key, value)
    if output:
        cfg.output_dir = output
    if seed is not None:
        cfg.seed = int(seed)
    return cfg.resolve()


# ---------------------------------------------------------------------------
# manifest + error plumbing
# ---------------------------------------------------------------------------

def _rel(path: str, out_dir: str) -> str:
    return os.path.relpath(path, out_dir)


def _write_manifest(cfg: RunConfig, command: str, inputs: list[str], outputs: list[str]) -> str:
    man = {
        "command": command,
        "package_version": __version__,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "inputs": {_rel(p, cfg.output_dir): sha256_file(p) for p in sorted(inputs)},
        "outputs": {_rel(p, cfg.output_dir): sha256_file(p) for p in sorted(outputs)},
    }
    path = os.path.join(cfg.output_dir, f"{command}.manifest.json")
    dump_json(man, path)
    return path


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(f"{path} not found; run `mortbench {hint}` first")
    return path


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MortbenchError as e:
            click.echo(json.dumps({"error": type(e).__name__, "message": str(e)}), err=True)
            sys.exit(1)
        except OSError as e:
            click.echo(json.dumps({"error": "IOError", "message": str(e)}), err=True)
            sys.exit(1)
    return wrapper


def common_options(fn):
    fn = click.option("--seed", type=int, default=None, help="global seed override")(fn)
    fn = click.option("--output", default=None, help="output directory override")(fn)
    fn = click.option("--config", "config_path", default=None,
                      type=click.Path(exists=True, dir_okay=False),
                      help="run-config YAML")(fn)
    return fn


def _cfg(config_path, output, seed) -> RunConfig:
    cfg = load_run_config(config_path, output, seed)
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg


# ---------------------------------------------------------------------------
# shared artifact IO
# ---------------------------------------------------------------------------

def _load_dataset(cfg: RunConfig):
    schema = load_schema(_require(cfg.schema_path, "synth"))
    ds = load_csv(_require(cfg.data_csv, "synth"), schema)
    return ds, schema


def _split_bundle(cfg: RunConfig, ds: Dataset) -> SplitBundle:
    ext = cfg.external_hospital or ds.schema.external_hospital
    if not ext:
        raise InvalidConfig("no external hospital configured (config or schema)")
    return make_splits(ds, ext, cfg.test_fraction, cfg.zsc_size, cfg.seed)


def _prepared_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.output_dir, "prepared.bin")


def _load_prepared(cfg: RunConfig):
    meta, arrays = load_arrays(_require(_prepared_path(cfg), "preprocess"))
    return meta, arrays


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group()
@click.version_option(__version__)
def main():
    """Mortality-prediction benchmark pipeline."""


@main.command()
@common_options
@_guard
def synth(config_path, output, seed):
    """Generate the synthetic cohort (CSV + schema + generating truth)."""
    cfg = _cfg(config_path, output, seed)
    synth_kwargs = dict(cfg.synth)
    synth_kwargs.setdefault("seed", cfg.seed)
    ds, schema, truth = generate(SynthConfig(**synth_kwargs))
    save_csv(ds, cfg.data_csv)
    save_schema(schema, cfg.schema_path)
    truth_json = os.path.join(cfg.output_dir, "truth.json")
    dump_json(
        {
            "feature_names": truth.feature_names,
            "main_coef": truth.main_coef,
            "interactions": [[a, b, g] for a, b, g in truth.interactions],
            "intercept": truth.intercept,
            "standardizers": {k: list(v) for k, v in truth.standardizers.items()},
        },
        truth_json,
    )
    truth_bin = os.path.join(cfg.output_dir, "truth.bin")
    save_arrays(truth_bin, {"content": "per-row generating probabilities"},
                {"bayes_prob": truth.bayes_prob})
    man = _write_manifest(cfg, "synth", [],
                          [cfg.data_csv, cfg.schema_path, truth_json, truth_bin])
    click.echo(f"wrote {cfg.data_csv} ({ds.n} rows) and {man}")


@main.command()
@common_options
@_guard
def preprocess(config_path, output, seed):
    """Split, impute, scale, select features, and oversample."""
    cfg = _cfg(config_path, output, seed)
    ds, schema = _load_dataset(cfg)
    bundle = _split_bundle(cfg, ds)
    pcfg = PreprocessConfig(
        per_split_independent=cfg.per_split_independent,
        apply_smote=cfg.apply_smote,
        smote_eval=cfg.smote_eval,
        top_k=cfg.top_k,
        seed=cfg.seed,
    )
    prep = preprocess_bundle(bundle, pcfg)

    arrays = {}
    for name in _SPLITS:
        s = prep.splits[name]
        arrays[f"{name}_X"] = s.X
        arrays[f"{name}_y"] = s.y
        arrays[f"{name}_X_eval"] = s.X_eval
        arrays[f"{name}_X_unscaled"] = s.X_unscaled
        arrays[f"{name}_y_raw"] = s.y_raw
        arrays[f"{name}_X_narrative"] = s.X_narrative
    prepared = _prepared_path(cfg)
    save_arrays(prepared, {"selected": prep.selected,
                           "narrative_names": prep.narrative_names,
                           "seed": cfg.seed}, arrays)

    splits_bin = os.path.join(cfg.output_dir, "splits.bin")
    save_arrays(
        splits_bin,
        {"external_hospital": cfg.external_hospital or schema.external_hospital,
         "test_fraction": cfg.test_fraction, "zsc_size": cfg.zsc_size,
         "seed": cfg.seed},
        {"train_idx": bundle.train_idx, "internal_test_idx": bundle.internal_test_idx,
         "external_idx": bundle.external_idx, "zsc_idx": bundle.zsc_idx},
    )
    pipeline_json = os.path.join(cfg.output_dir, "pipeline.json")
    dump_json(pipeline_artifact(prep), pipeline_json)
    man = _write_manifest(cfg, "preprocess", [cfg.data_csv, cfg.schema_path],
                          [prepared, splits_bin, pipeline_json])
    click.echo(f"selected {len(prep.selected)} features; wrote {prepared} and {man}")


@main.command()
@common_options
@_guard
def train(config_path, output, seed):
    """Fit every configured model family on the prepared training split."""
    cfg = _cfg(config_path, output, seed)
    meta, arrays = _load_prepared(cfg)
    X, y = arrays["train_X"], arrays["train_y"]
    names = list(meta["selected"])
    model_dir = os.path.join(cfg.output_dir, "models")
    os.makedirs(model_dir, exist_ok=True)

    outputs = []
    for family in cfg.models:
        if family == "mlp":
            # width is the one tuned hyperparameter; pick it by CV accuracy
            result = grid_search_cv(mlp_grid(cfg.seed), X, y, folds=5, seed=cfg.seed,
                                    feature_names=names)
            model = result.model
            cv_json = os.path.join(model_dir, "mlp_cv.json")
            dump_json(
                {"mean_accuracy": [float(v) for v in result.mean_accuracy],
                 "candidates": [list(s.hyperparameters["hidden"]) for s in result.candidates],
                 "winner": list(result.winner.hyperparameters["hidden"])},
                cv_json,
            )
            outputs.append(cv_json)
        else:
            spec = make_spec(family, seed=cfg.seed)
            model = fit(spec, X, y, feature_names=names)
        path = os.path.join(model_dir, f"{family}.bin")
        save_model(model, path)
        outputs.append(path)
        click.echo(f"trained {family} -> {path}")
    man = _write_manifest(cfg, "train", [_prepared_path(cfg)], outputs)
    click.echo(f"wrote {man}")


@main.command()
@common_options
@_guard
def evaluate(config_path, output, seed):
    """Score every trained model on the internal and external test sets."""
    cfg = _cfg(config_path, output, seed)
    meta, arrays = _load_prepared(cfg)
    metrics_dir = os.path.join(cfg.output_dir, "metrics")
    os.makedirs(metrics_dir, exist_ok=True)

    inputs = [_prepared_path(cfg)]
    outputs = []
    summary_rows = []
    for family in cfg.models:
        mpath = _require(os.path.join(cfg.output_dir, "models", f"{family}.bin"), "train")
        inputs.append(mpath)
        model = load_model(mpath)
        per_model = {}
        for split in ("internal_test", "external"):
            Xe, yr = arrays[f"{split}_X_eval"], arrays[f"{split}_y_raw"]
            if len(Xe) == 0:
                continue
            rep = score_report(yr, model.predict_label(Xe), model.predict_score(Xe))
            per_model[split] = rep
            row = {"model": family, "split": split}
            row.update({k: round(float(rep[k]), 6) for k in
                        ("accuracy", "precision", "recall", "specificity", "f1")})
            row["auc"] = round(float(rep["auc"]), 6) if "auc" in rep else ""
            summary_rows.append(row)
        out = os.path.join(metrics_dir, f"{family}.json")
        dump_json(per_model, out)
        outputs.append(out)
    summary = os.path.join(metrics_dir, "summary.csv")
    with open(summary, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["model", "split", "accuracy", "precision",
                                               "recall", "specificity", "f1", "auc"])
        writer.writeheader()
        writer.writerows(summary_rows)
    outputs.append(summary)
    man = _write_manifest(cfg, "evaluate", inputs, outputs)
    click.echo(f"wrote {summary} and {man}")


@main.command()
@common_options
@_guard
def curve(config_path, output, seed):
    """Learning curve: accuracy/F1 vs training subsample size."""
    cfg = _cfg(config_path, output, seed)
    ds, _ = _load_dataset(cfg)
    bundle = _split_bundle(cfg, ds)
    pcfg = PreprocessConfig(
        per_split_independent=cfg.per_split_independent,
        apply_smote=cfg.apply_smote,
        smote_eval=cfg.smote_eval,
        top_k=cfg.top_k,
        seed=cfg.seed,
    )
    specs = [make_spec(f, seed=cfg.seed) for f in cfg.curve_models]
    result = learning_curve(specs, bundle, list(cfg.curve_sizes), cfg.seed, pcfg)
    curve_dir = os.path.join(cfg.output_dir, "curve")
    os.makedirs(curve_dir, exist_ok=True)
    csv_path = os.path.join(curve_dir, "curve.csv")
    result.write_csv(csv_path)
    json_path = os.path.join(curve_dir, "curve.json")
    dump_json(
        {"sizes": list(result.sizes), "model_tags": list(result.model_tags),
         "f1": [[float(v) for v in row] for row in result.f1],
         "accuracy": [[float(v) for v in row] for row in result.accuracy],
         "seed": result.seed},
        json_path,
    )
    man = _write_manifest(cfg, "curve", [cfg.data_csv, cfg.schema_path],
                          [csv_path, json_path])
    click.echo(f"wrote {csv_path} and {man}")


@main.command()
@common_options
@click.option("--variant", default="improved", show_default=True,
              type=click.Choice(["raw", "improved", "strict"]))
@_guard
def serialize(config_path, output, seed, variant):
    """Render the zero-shot subset into a narrative corpus (JSONL)."""
    cfg = _cfg(config_path, output, seed)
    meta, arrays = _load_prepared(cfg)
    _, schema = _load_dataset(cfg)
    smeta, sarrays = load_arrays(_require(os.path.join(cfg.output_dir, "splits.bin"),
                                          "preprocess"))
    zsc_idx = sarrays["zsc_idx"]
    test_idx = sarrays["internal_test_idx"]
    if len(zsc_idx) == 0:
        raise InvalidConfig("zsc_size is 0; nothing to serialize")
    pos = np.searchsorted(test_idx, zsc_idx)

    narr_names = list(meta["narrative_names"])
    narr_schema = schema.subset(narr_names)
    Xn = arrays["internal_test_X_narrative"][pos]
    yn = arrays["internal_test_y_raw"][pos]
    rows = [row_mapping(Xn[i], narr_names) for i in range(len(Xn))]
    records = corpus_records(zsc_idx, rows, yn, narr_schema, prompt_variant=variant)
    corpus_path = os.path.join(cfg.output_dir, "corpus.jsonl")
    write_corpus(records, corpus_path)
    man = _write_manifest(cfg, "serialize",
                          [_prepared_path(cfg), cfg.schema_path,
                           os.path.join(cfg.output_dir, "splits.bin")],
                          [corpus_path])
    click.echo(f"wrote {len(records)} narratives to {corpus_path} and {man}")


@main.command()
@common_options
@_guard
def zsc(config_path, output, seed):
    """Zero-shot classification of the corpus via a chat endpoint."""
    cfg = _cfg(config_path, output, seed)
    corpus_path = _require(os.path.join(cfg.output_dir, "corpus.jsonl"), "serialize")
    corpus = read_corpus(corpus_path)

    llm_cfg = dict(cfg.llm)
    if "base_url" not in llm_cfg or "model" not in llm_cfg:
        raise InvalidConfig("llm config needs base_url and model")
    policy = PromptPolicy(
        first_variant=llm_cfg.pop("prompt_variant", "improved"),
        escalate_at=int(llm_cfg.pop("escalate_at", 2)),
        max_attempts=int(llm_cfg.pop("max_attempts", 5)),
    )
    count_failed = bool(llm_cfg.pop("count_failed_as_incorrect", True))
    endpoint_fields = {f.name for f in dataclasses.fields(ChatEndpointConfig)}
    unknown = set(llm_cfg) - endpoint_fields
    if unknown:
        raise InvalidConfig(f"unknown llm config keys: {sorted(unknown)}")
    endpoint = ChatEndpointConfig(**llm_cfg)

    zsc_dir = os.path.join(cfg.output_dir, "zsc")
    os.makedirs(zsc_dir, exist_ok=True)
    log_path = os.path.join(zsc_dir, "log.jsonl")
    experiment = ZscExperiment(endpoint=endpoint, policy=policy, log_path=log_path,
                               count_failed_as_incorrect=count_failed)
    report, _ = run_zsc(experiment, corpus)
    man = _write_manifest(cfg, "zsc", [corpus_path],
                          [log_path, log_path + ".metrics.json"])
    click.echo(f"accuracy {report['accuracy']:.4f} over {report['n_evaluated']} patients "
               f"({report['n_failed']} failed); wrote {man}")


@main.command(name="shap")
@common_options
@_guard
def shap_cmd(config_path, output, seed):
    """Shapley attributions and impact percentages for trained models."""
    cfg = _cfg(config_path, output, seed)
    meta, arrays = _load_prepared(cfg)
    shap_cfg = dict(cfg.shap)
    families = list(shap_cfg.get("models", ("rf", "gbt")))
    n_samples = int(shap_cfg.get("n_samples", 2048))
    bg_size = int(shap_cfg.get("background", 100))
    n_explain = int(shap_cfg.get("n_explain", 20))

    names = list(meta["selected"])
    background = background_sample(arrays["train_X_eval"], bg_size, cfg.seed)
    X = arrays["internal_test_X_eval"][:n_explain]
    shap_dir = os.path.join(cfg.output_dir, "shap")
    os.makedirs(shap_dir, exist_ok=True)

    inputs = [_prepared_path(cfg)]
    outputs = []
    summaries = []
    for family in families:
        mpath = _require(os.path.join(cfg.output_dir, "models", f"{family}.bin"), "train")
        inputs.append(mpath)
        model = load_model(mpath)
        sm = explain_matrix(model.predict_score, X, background, names,
                            n_samples=n_samples, seed=cfg.seed, model_tag=family)
        bin_path = os.path.join(shap_dir, f"{family}.bin")
        save_arrays(bin_path, {"model": family, "base_value": sm.base_value,
                               "feature_names": names}, {"values": sm.values})
        summary = impact_percentages(sm)
        summaries.append(summary)
        impact_path = os.path.join(shap_dir, f"{family}_impact.json")
        dump_json(
            {"model": family,
             "features": names,
             "mean_abs": [float(v) for v in summary.mean_abs],
             "std_abs": [float(v) for v in summary.std_abs],
             "impact_pct": [float(v) for v in summary.impact_pct]},
            impact_path,
        )
        violin_path = os.path.join(shap_dir, f"{family}_violin.csv")
        violin_export(sm, X, violin_path)
        outputs += [bin_path, impact_path, violin_path]
        click.echo(f"explained {family} over {len(X)} rows")

    agg = aggregate_impacts(summaries, group_tag="cml-average")
    agg_path = os.path.join(shap_dir, "aggregate.json")
    dump_json(
        {"group": agg.group_tag,
         "features": names,
         "mean_abs": [float(v) for v in agg.mean_abs],
         "impact_pct": [float(v) for v in agg.impact_pct],
         "adjusted_std": [float(v) for v in agg.adjusted_std]},
        agg_path,
    )
    outputs.append(agg_path)
    man = _write_manifest(cfg, "shap", inputs, outputs)
    click.echo(f"wrote {agg_path} and {man}")


@main.command()
@common_options
@_guard
def report(config_path, output, seed):
    """Collate metrics, learning curve, and impact tables into one report."""
    cfg = _cfg(config_path, output, seed)
    metrics_dir = os.path.join(cfg.output_dir, "metrics")
    _require(os.path.join(metrics_dir, "summary.csv"), "evaluate")

    inputs = []
    collated = {"package_version": __version__, "config_sha256": cfg.digest(),
                "models": {}}
    for family in cfg.models:
        path = os.path.join(metrics_dir, f"{family}.json")
        if not os.path.exists(path):
            continue
        inputs.append(path)
        per_model = load_json(path)
        for split_rep in per_model.values():
            split_rep.pop("roc", None)  # points live in the metrics files
        collated["models"][family] = per_model

    curve_json = os.path.join(cfg.output_dir, "curve", "curve.json")
    if os.path.exists(curve_json):
        inputs.append(curve_json)
        collated["learning_curve"] = load_json(curve_json)
    agg_json = os.path.join(cfg.output_dir, "shap", "aggregate.json")
    if os.path.exists(agg_json):
        inputs.append(agg_json)
        collated["impact"] = load_json(agg_json)
    zsc_metrics_json = os.path.join(cfg.output_dir, "zsc", "log.jsonl.metrics.json")
    if os.path.exists(zsc_metrics_json):
        inputs.append(zsc_metrics_json)
        collated["zsc"] = load_json(zsc_metrics_json)

    report_dir = os.path.join(cfg.output_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    report_json = os.path.join(report_dir, "report.json")
    dump_json(collated, report_json)

    table_path = os.path.join(report_dir, "table.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "split", "accuracy", "precision", "recall",
                         "specificity", "f1", "auc"])
        for family, per_model in collated["models"].items():
            for split, rep in per_model.items():
                writer.writerow([family, split] +
                                [round(float(rep[k]), 4) for k in
                                 ("accuracy", "precision", "recall", "specificity", "f1")] +
                                [round(float(rep["auc"]), 4) if "auc" in rep else ""])
    man = _write_manifest(cfg, "report", inputs, [report_json, table_path])
    click.echo(f"wrote {table_path} and {man}")


if __name__ == "__main__":
    main()
