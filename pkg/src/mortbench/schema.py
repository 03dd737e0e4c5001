"""Feature schema: declarative description of every input column.

The schema drives CSV parsing, imputation routing (numeric vs categorical),
range classification, and narrative wording. It is loaded from a YAML config
so normal ranges and display names live in data, not code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

from .errors import DuplicateFeatureName, InvalidConfig

KINDS = ("symptom", "history", "demographic", "vital", "lab", "treatment")
DTYPES = ("numeric", "binary", "categorical")


@dataclass(frozen=True)
class FeatureSpec:
    """One input feature.

    normal_range is required for numeric labs/vitals (it feeds the
    higher/lower-than-normal-range classification) and disallowed elsewhere.
    """
    name: str
    kind: str
    dtype: str
    normal_range: tuple[float, float] | None = None
    display_name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.dtype not in DTYPES:
            raise InvalidConfig(f"feature {self.name!r}: unknown dtype {self.dtype!r}")
        needs_range = self.kind in ("lab", "vital") and self.dtype == "numeric"
        if needs_range and self.normal_range is None:
            raise InvalidConfig(f"feature {self.name!r}: numeric {self.kind} requires normal_range")
        if self.normal_range is not None:
            lo, hi = self.normal_range
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InvalidConfig(f"feature {self.name!r}: invalid normal_range {self.normal_range}")
        if not self.display_name:
            object.__setattr__(self, "display_name", self.name.replace("_", " "))


@dataclass
class FeatureSchema:
    features: list[FeatureSpec]
    label_name: str
    hospital_column: str
    external_hospital: str = ""
    seed: int = 42
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        seen = set()
        for f in self.features:
            if f.name in seen:
                raise DuplicateFeatureName(f.name)
            seen.add(f.name)
        if self.label_name in seen or self.hospital_column in seen:
            raise DuplicateFeatureName("label/hospital column collides with a feature name")
        self._index = {f.name: f for f in self.features}

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def __getitem__(self, name: str) -> FeatureSpec:
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def numeric_names(self) -> list[str]:
        return [f.name for f in self.features if f.dtype == "numeric"]

    def categorical_names(self) -> list[str]:
        return [f.name for f in self.features if f.dtype in ("binary", "categorical")]

    def subset(self, names: list[str]) -> "FeatureSchema":
        """Schema restricted to `names`, keeping this schema's feature order."""
        keep = set(names)
        return FeatureSchema(
            features=[f for f in self.features if f.name in keep],
            label_name=self.label_name,
            hospital_column=self.hospital_column,
            external_hospital=self.external_hospital,
            seed=self.seed,
        )


def _spec_to_dict(f: FeatureSpec) -> dict:
    d = {"name": f.name, "kind": f.kind, "dtype": f.dtype, "display": f.display_name}
    if f.normal_range is not None:
        d["normal_range"] = [float(f.normal_range[0]), float(f.normal_range[1])]
    return d


def save_schema(schema: FeatureSchema, path) -> None:
    doc = {
        "label": schema.label_name,
        "hospital_column": schema.hospital_column,
        "external_hospital": schema.external_hospital,
        "seed": schema.seed,
        "features": [_spec_to_dict(f) for f in schema.features],
    }
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as f:
        doc = yaml.safe_load(f)
    try:
        features = [
            FeatureSpec(
                name=d["name"],
                kind=d["kind"],
                dtype=d["dtype"],
                normal_range=tuple(d["normal_range"]) if d.get("normal_range") else None,
                display_name=d.get("display", ""),
            )
            for d in doc["features"]
        ]
        return FeatureSchema(
            features=features,
            label_name=doc["label"],
            hospital_column=doc["hospital_column"],
            external_hospital=str(doc.get("external_hospital", "")),
            seed=int(doc.get("seed", 42)),
        )
    except KeyError as e:
        raise InvalidConfig(f"schema config missing key: {e}") from e
