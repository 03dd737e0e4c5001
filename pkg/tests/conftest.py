import re

import numpy as np
import pytest

from mortbench.dataset import make_splits
from mortbench.schema import FeatureSchema, FeatureSpec
from mortbench.synth import SynthConfig, generate

_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per numbered acceptance criterion."""
    verdicts: dict[int, bool] = {}
    for status, ok in (("passed", True), ("failed", False), ("error", False)):
        for rep in terminalreporter.stats.get(status, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if m:
                num = int(m.group(1))
                verdicts[num] = verdicts.get(num, True) and ok
    if not verdicts:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for num in sorted(verdicts):
        terminalreporter.write_line(
            f"[criterion {num:02d}] {'PASS' if verdicts[num] else 'FAIL'}")


@pytest.fixture(scope="session")
def small_cohort():
    """900-row cohort: fast enough for per-module pipeline tests."""
    ds, schema, truth = generate(SynthConfig(n=900, seed=42))
    return ds, schema, truth


@pytest.fixture(scope="session")
def small_bundle(small_cohort):
    ds, schema, _ = small_cohort
    return make_splits(ds, external_hospital="H3", test_fraction=0.25,
                       zsc_size=40, seed=42)


@pytest.fixture(scope="session")
def clinical_schema():
    """Hand-written schema exercising every kind the serializer handles."""
    return FeatureSchema(
        features=[
            FeatureSpec("age", "demographic", "numeric"),
            FeatureSpec("sex", "demographic", "binary"),
            FeatureSpec("fever", "symptom", "binary"),
            FeatureSpec("cough", "symptom", "binary"),
            FeatureSpec("dyspnea", "symptom", "binary"),
            FeatureSpec("diabetes", "history", "binary"),
            FeatureSpec("hypertension", "history", "binary"),
            FeatureSpec("o2_saturation", "vital", "numeric",
                        normal_range=(95, 100), display_name="oxygen saturation"),
            FeatureSpec("blood_pressure", "vital", "numeric",
                        normal_range=(90, 120), display_name="blood pressure"),
            FeatureSpec("crp", "lab", "numeric",
                        normal_range=(0, 10), display_name="C-reactive protein"),
            FeatureSpec("intubation", "treatment", "binary"),
        ],
        label_name="outcome",
        hospital_column="hospital",
    )


def random_confusion(rng) -> dict:
    return {k: int(rng.integers(0, 50)) for k in ("tp", "fp", "tn", "fn")}


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
