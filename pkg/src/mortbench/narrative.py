"""Table-to-text serialization: one patient row -> one clinical paragraph.

Sentence order is fixed (age, sex, positive symptoms, positive history,
out-of-range numerics grouped by direction) so identical rows always yield
byte-identical text. Only positive findings are verbalized; negatives,
within-range values, treatments, and missing entries are omitted and listed
in PatientNarrative.omitted_features.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import InvalidConfig, MissingAge, MissingRange, MissingSex
from .schema import FeatureSchema

BANDS = ("below", "within", "above")
PROMPT_VARIANTS = ("raw", "improved", "strict")

# Instruction texts are frozen; changing a character changes every cached
# endpoint response.
RAW_PREFIX = (
    "Does the patient survive or die based on the provided medical history? "
    "patient history is: "
)
IMPROVED_INSTRUCTION = (
    "You're tasked with analyzing the present symptoms, past medical history, "
    "laboratory data, age, and gender of COVID-19 patients to determine their "
    'outcome, which is enclosed in square brackets. Your goal is to predict '
    'whether the patient will "survive" or "die" based on this information.'
)
STRICT_SUFFIX = (
    " Predict patient mortality in JUST ONE word and DO NOT answer vaguely."
)
STRICT_INSTRUCTION = IMPROVED_INSTRUCTION + STRICT_SUFFIX

DEFAULT_SAMPLING = {"temperature": 1.0, "max_tokens": 1024, "rng_seed": 123}


@dataclass(frozen=True)
class LabClassification:
    name: str
    band: str  # below | within | above


@dataclass(frozen=True)
class PatientNarrative:
    text: str
    included_features: tuple = ()   # (name, "positive"|"above"|"below")
    omitted_features: tuple = ()


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    prompt_variant: str
    sampling: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SAMPLING))

    def messages(self) -> list[dict]:
        msgs = []
        if self.system_text:
            msgs.append({"role": "system", "content": self.system_text})
        msgs.append({"role": "user", "content": self.user_text})
        return msgs


def classify_lab(value: float, normal_range, name: str = "") -> LabClassification:
    """Band a numeric value against [lo, hi]; boundary values are within."""
    if normal_range is None:
        raise MissingRange(f"no normal range configured for {name or 'value'}")
    if not math.isfinite(value):
        raise InvalidConfig(f"non-finite value {value!r} for {name or 'value'}")
    lo, hi = normal_range
    if value < lo:
        band = "below"
    elif value > hi:
        band = "above"
    else:
        band = "within"
    return LabClassification(name=name, band=band)


def _is_missing(row: Mapping[str, float], name: str) -> bool:
    if name not in row:
        return True
    v = row[name]
    return v is None or (isinstance(v, float) and math.isnan(v))


def _positive(value) -> bool:
    return float(value) >= 0.5


def _join(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _format_age(value: float) -> str:
    if abs(value - round(value)) < 1e-9:
        return str(int(round(value)))
    return f"{value:.1f}"


def _capitalize(s: str) -> str:
    return s[0].upper() + s[1:] if s else s


def render_narrative(row: Mapping[str, float], schema: FeatureSchema) -> PatientNarrative:
    """Serialize one patient record to a deterministic paragraph.

    `row` maps feature name -> value; absent keys and NaN count as missing.
    Missing age or sex is an error, any other missing value is silently
    omitted (raw pre-imputation rows must serialize without crashing).
    """
    if _is_missing(row, "age"):
        raise MissingAge("narrative requires an age value")
    if _is_missing(row, "sex"):
        raise MissingSex("narrative requires a sex value")

    sentences = [
        f"The patient's age is {_format_age(float(row['age']))}.",
        "The patient is male." if _positive(row["sex"]) else "The patient is female.",
    ]
    included: list[tuple[str, str]] = []
    omitted: list[str] = []

    symptoms, history = [], []
    above, below = [], []
    for f in schema.features:
        if f.name in ("age", "sex"):
            continue
        if _is_missing(row, f.name):
            omitted.append(f.name)
            continue
        if f.kind == "treatment":
            # Interventions are outcomes of clinical decisions, not history;
            # they never enter the narrative.
            omitted.append(f.name)
            continue
        if f.dtype == "binary":
            if not _positive(row[f.name]):
                omitted.append(f.name)
                continue
            if f.kind == "symptom":
                symptoms.append(f)
            elif f.kind == "history":
                history.append(f)
            else:
                omitted.append(f.name)
            continue
        if f.dtype == "numeric" and f.normal_range is not None:
            band = classify_lab(float(row[f.name]), f.normal_range, f.name).band
            if band == "above":
                above.append(f)
            elif band == "below":
                below.append(f)
            else:
                omitted.append(f.name)
            continue
        omitted.append(f.name)

    if symptoms:
        sentences.append(f"The patient has {_join([f.display_name for f in symptoms])}.")
        included += [(f.name, "positive") for f in symptoms]
    if history:
        sentences.append(
            f"Past medical history includes {_join([f.display_name for f in history])}."
        )
        included += [(f.name, "positive") for f in history]
    for group, word in ((above, "higher"), (below, "lower")):
        if not group:
            continue
        names = [f.display_name for f in group]
        verb = "is" if len(names) == 1 else "are"
        sentences.append(f"{_capitalize(_join(names))} {verb} {word} than the normal range.")
        included += [(f.name, "above" if word == "higher" else "below") for f in group]

    return PatientNarrative(
        text=" ".join(sentences),
        included_features=tuple(included),
        omitted_features=tuple(omitted),
    )


def build_prompt(narrative: PatientNarrative, variant: str, sampling: dict | None = None) -> PromptBundle:
    """Wrap a narrative in one of the three frozen prompt variants."""
    if variant not in PROMPT_VARIANTS:
        raise InvalidConfig(f"unknown prompt variant {variant!r}")
    s = dict(DEFAULT_SAMPLING)
    if sampling:
        s.update(sampling)
    if variant == "raw":
        # The raw prompt concatenates the history directly, no brackets.
        return PromptBundle("", RAW_PREFIX + narrative.text, variant, s)
    system = IMPROVED_INSTRUCTION if variant == "improved" else STRICT_INSTRUCTION
    return PromptBundle(system, "[" + narrative.text + "]", variant, s)


def row_mapping(values, names: list[str]) -> dict[str, float]:
    """Pair a feature vector with its column names for render_narrative."""
    if len(values) != len(names):
        raise InvalidConfig(f"row has {len(values)} values for {len(names)} names")
    return {n: float(v) for n, v in zip(names, values)}


def corpus_records(
    patient_ids,
    rows: Iterable[Mapping[str, float]],
    labels,
    schema: FeatureSchema,
    prompt_variant: str = "improved",
) -> list[dict]:
    if prompt_variant not in PROMPT_VARIANTS:
        raise InvalidConfig(f"unknown prompt variant {prompt_variant!r}")
    out = []
    for pid, row, lab in zip(patient_ids, rows, labels):
        n = render_narrative(row, schema)
        out.append(
            {
                "patient_id": int(pid),
                "narrative": n.text,
                "label": int(lab),
                "prompt_variant": prompt_variant,
            }
        )
    return out


def write_corpus(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_corpus(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
