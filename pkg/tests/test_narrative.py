"""Serializer tests: fragment grammar, omission rules, prompt assembly."""
import math
import re

import numpy as np
import pytest

from mortbench.errors import InvalidConfig, MissingAge, MissingRange, MissingSex
from mortbench.narrative import (
    DEFAULT_SAMPLING,
    IMPROVED_INSTRUCTION,
    RAW_PREFIX,
    STRICT_INSTRUCTION,
    STRICT_SUFFIX,
    build_prompt,
    classify_lab,
    corpus_records,
    read_corpus,
    render_narrative,
    row_mapping,
    write_corpus,
)


def _base_row(**over):
    row = {"age": 63.0, "sex": 1.0, "fever": 0.0, "cough": 0.0, "dyspnea": 0.0,
           "diabetes": 0.0, "hypertension": 0.0, "o2_saturation": 97.0,
           "blood_pressure": 110.0, "crp": 5.0, "intubation": 0.0}
    row.update(over)
    return row


# --- lab banding ------------------------------------------------------------

def test_classify_lab_boundaries_are_within():
    assert classify_lab(95.0, (95, 100)).band == "within"
    assert classify_lab(100.0, (95, 100)).band == "within"
    assert classify_lab(94.999, (95, 100)).band == "below"
    assert classify_lab(100.001, (95, 100)).band == "above"


def test_classify_lab_error_cases():
    with pytest.raises(MissingRange):
        classify_lab(5.0, None, "crp")
    with pytest.raises(InvalidConfig):
        classify_lab(float("nan"), (0, 1))
    with pytest.raises(InvalidConfig):
        classify_lab(float("inf"), (0, 1))


# --- sentence grammar ---------------------------------------------------------

def test_reference_paragraph_byte_exact(clinical_schema):
    row = _base_row(fever=1.0, diabetes=1.0, o2_saturation=92.0)
    n = render_narrative(row, clinical_schema)
    assert n.text == (
        "The patient's age is 63. The patient is male. The patient has fever. "
        "Past medical history includes diabetes. "
        "Oxygen saturation is lower than the normal range."
    )


def test_full_paragraph_sentence_order(clinical_schema):
    row = _base_row(age=70.0, sex=0.0, fever=1.0, cough=1.0, diabetes=1.0,
                    hypertension=1.0, o2_saturation=90.0, blood_pressure=130.0,
                    crp=15.0, intubation=1.0)
    n = render_narrative(row, clinical_schema)
    assert n.text == (
        "The patient's age is 70. The patient is female. "
        "The patient has fever and cough. "
        "Past medical history includes diabetes and hypertension. "
        "Blood pressure and C-reactive protein are higher than the normal range. "
        "Oxygen saturation is lower than the normal range."
    )
    assert set(n.omitted_features) == {"dyspnea", "intubation"}
    assert ("crp", "above") in n.included_features
    assert ("o2_saturation", "below") in n.included_features


def test_three_item_join_has_no_comma_before_and(clinical_schema):
    row = _base_row(fever=1.0, cough=1.0, dyspnea=1.0)
    n = render_narrative(row, clinical_schema)
    assert "The patient has fever, cough and dyspnea." in n.text
    assert ", and" not in n.text


def test_age_formatting(clinical_schema):
    assert "The patient's age is 63." in render_narrative(_base_row(), clinical_schema).text
    assert "The patient's age is 63.5." in render_narrative(
        _base_row(age=63.5), clinical_schema).text
    assert "The patient's age is 45.7." in render_narrative(
        _base_row(age=45.67), clinical_schema).text


def test_binary_positive_cutoff(clinical_schema):
    # imputed binaries may be fractional; half counts as present
    assert "fever" not in render_narrative(_base_row(fever=0.49), clinical_schema).text
    assert "fever" in render_narrative(_base_row(fever=0.5), clinical_schema).text


def test_missing_core_fields_raise(clinical_schema):
    with pytest.raises(MissingAge):
        render_narrative(_base_row(age=float("nan")), clinical_schema)
    row = _base_row()
    del row["sex"]
    with pytest.raises(MissingSex):
        render_narrative(row, clinical_schema)


def test_missing_optional_fields_are_omitted(clinical_schema):
    row = _base_row(fever=1.0)
    del row["crp"]
    row["o2_saturation"] = float("nan")
    n = render_narrative(row, clinical_schema)
    assert "crp" in n.omitted_features
    assert "o2_saturation" in n.omitted_features
    assert "normal range" not in n.text


def test_treatments_never_verbalized(clinical_schema):
    n = render_narrative(_base_row(intubation=1.0), clinical_schema)
    assert "intubation" not in n.text.lower()
    assert "intubation" in n.omitted_features


def test_rendering_is_deterministic(clinical_schema):
    row = _base_row(fever=1.0, crp=20.0)
    assert render_narrative(row, clinical_schema) == render_narrative(row, clinical_schema)


# --- round-trip oracle --------------------------------------------------------

_NAME_SPLIT = re.compile(r", | and ")
_RANGE_RE = re.compile(r"^(.+) (?:is|are) (higher|lower) than the normal range$")


def _parse_paragraph(text):
    """Test-only inverse of the serializer."""
    sentences = text.split(". ")
    assert sentences[-1].endswith(".")
    sentences[-1] = sentences[-1][:-1]
    out = {"symptoms": set(), "history": set(), "above": set(), "below": set()}
    for s in sentences:
        if s.startswith("The patient's age is "):
            out["age"] = s[len("The patient's age is "):]
        elif s in ("The patient is male", "The patient is female"):
            out["sex"] = 1.0 if s.endswith("male") and not s.endswith("female") else 0.0
        elif s.startswith("The patient has "):
            names = _NAME_SPLIT.split(s[len("The patient has "):])
            out["symptoms"] = {n.lower() for n in names}
        elif s.startswith("Past medical history includes "):
            names = _NAME_SPLIT.split(s[len("Past medical history includes "):])
            out["history"] = {n.lower() for n in names}
        else:
            m = _RANGE_RE.match(s)
            assert m, f"unparseable sentence: {s!r}"
            names = {n.lower() for n in _NAME_SPLIT.split(m.group(1))}
            out["above" if m.group(2) == "higher" else "below"].update(names)
    return out


def test_random_rows_round_trip(clinical_schema, rng):
    feats = {f.name: f for f in clinical_schema.features}
    for _ in range(200):
        row = {
            "age": float(rng.integers(20, 95)) + (0.5 if rng.random() < 0.2 else 0.0),
            "sex": float(rng.integers(0, 2)),
        }
        for name in ("fever", "cough", "dyspnea", "diabetes", "hypertension",
                     "intubation"):
            if rng.random() < 0.1:
                row[name] = float("nan")
            else:
                row[name] = float(rng.integers(0, 2))
        for name, lo, hi in (("o2_saturation", 80, 101), ("blood_pressure", 70, 160),
                             ("crp", 0, 40)):
            row[name] = float("nan") if rng.random() < 0.1 else float(rng.integers(lo, hi))

        n = render_narrative(row, clinical_schema)
        got = _parse_paragraph(n.text)

        def expect(kind):
            return {feats[name].display_name.lower() for name, f in feats.items()
                    if f.kind == kind and not math.isnan(row[name]) and row[name] >= 0.5}

        assert got["sex"] == row["sex"]
        assert got["symptoms"] == expect("symptom")
        assert got["history"] == expect("history")
        exp_above, exp_below = set(), set()
        for name in ("o2_saturation", "blood_pressure", "crp"):
            if math.isnan(row[name]):
                continue
            lo, hi = feats[name].normal_range
            if row[name] > hi:
                exp_above.add(feats[name].display_name.lower())
            elif row[name] < lo:
                exp_below.add(feats[name].display_name.lower())
        assert got["above"] == exp_above
        assert got["below"] == exp_below

        # bookkeeping covers every non-core feature exactly once
        inc = {name for name, _ in n.included_features}
        assert inc | set(n.omitted_features) == set(feats) - {"age", "sex"}
        assert not inc & set(n.omitted_features)


# --- prompt assembly ------------------------------------------------------------

def test_raw_prompt_concatenates_without_brackets(clinical_schema):
    n = render_narrative(_base_row(fever=1.0), clinical_schema)
    p = build_prompt(n, "raw")
    assert p.system_text == ""
    assert p.user_text == RAW_PREFIX + n.text
    assert "[" not in p.user_text
    assert p.messages() == [{"role": "user", "content": p.user_text}]


def test_improved_prompt_brackets_and_system(clinical_schema):
    n = render_narrative(_base_row(), clinical_schema)
    p = build_prompt(n, "improved")
    assert p.system_text == IMPROVED_INSTRUCTION
    assert p.user_text == "[" + n.text + "]"
    msgs = p.messages()
    assert [m["role"] for m in msgs] == ["system", "user"]


def test_strict_prompt_appends_suffix(clinical_schema):
    n = render_narrative(_base_row(), clinical_schema)
    p = build_prompt(n, "strict")
    assert p.system_text == STRICT_INSTRUCTION == IMPROVED_INSTRUCTION + STRICT_SUFFIX
    assert STRICT_SUFFIX == (" Predict patient mortality in JUST ONE word and "
                             "DO NOT answer vaguely.")
    assert p.user_text.startswith("[") and p.user_text.endswith("]")


def test_prompt_sampling_defaults_and_overrides(clinical_schema):
    n = render_narrative(_base_row(), clinical_schema)
    p = build_prompt(n, "improved")
    assert p.sampling == {"temperature": 1.0, "max_tokens": 1024, "rng_seed": 123}
    assert p.sampling == DEFAULT_SAMPLING and p.sampling is not DEFAULT_SAMPLING
    q = build_prompt(n, "improved", sampling={"temperature": 0.2})
    assert q.sampling["temperature"] == 0.2 and q.sampling["max_tokens"] == 1024


def test_unknown_prompt_variant_rejected(clinical_schema):
    n = render_narrative(_base_row(), clinical_schema)
    with pytest.raises(InvalidConfig):
        build_prompt(n, "chain-of-thought")


# --- corpus files ------------------------------------------------------------

def test_row_mapping_pairs_and_validates():
    m = row_mapping(np.array([1.0, 2.0]), ["a", "b"])
    assert m == {"a": 1.0, "b": 2.0}
    with pytest.raises(InvalidConfig):
        row_mapping([1.0], ["a", "b"])


def test_corpus_write_read_round_trip(clinical_schema, tmp_path):
    rows = [_base_row(fever=1.0), _base_row(sex=0.0, crp=22.0)]
    recs = corpus_records([10, 11], rows, [1, 0], clinical_schema,
                          prompt_variant="strict")
    assert [r["patient_id"] for r in recs] == [10, 11]
    assert [r["label"] for r in recs] == [1, 0]
    assert all(r["prompt_variant"] == "strict" for r in recs)
    assert "C-reactive protein is higher" in recs[1]["narrative"]
    path = tmp_path / "corpus.jsonl"
    write_corpus(recs, path)
    assert read_corpus(path) == recs
    with pytest.raises(InvalidConfig):
        corpus_records([1], rows[:1], [0], clinical_schema, prompt_variant="zsc")
