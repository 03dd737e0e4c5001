"""Exception types shared across the pipeline."""


class MortbenchError(Exception):
    """Base class for all pipeline errors."""


# --- dataset / schema ---

class UnknownColumn(MortbenchError):
    pass


class MissingColumn(MortbenchError):
    pass


class DuplicateFeatureName(MortbenchError):
    pass


class TypeMismatch(MortbenchError):
    def __init__(self, row: int, col: str, value: str):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"cannot parse {value!r} at row {row}, column {col!r}")


class HospitalNotFound(MortbenchError):
    pass


class ZscTooLarge(MortbenchError):
    pass


# --- preprocess ---

class AllMissingColumn(MortbenchError):
    pass


class EmptyReference(MortbenchError):
    pass


class NonConvergence(MortbenchError):
    pass


class TooFewMinority(MortbenchError):
    pass


# --- models ---

class SingleClassInput(MortbenchError):
    pass


class ShapeMismatch(MortbenchError):
    pass


class EmptyChild(MortbenchError):
    pass


class DegenerateFold(MortbenchError):
    pass


# --- metrics ---

class LengthMismatch(MortbenchError):
    pass


class SingleClass(MortbenchError):
    pass


class SizeExceedsTrain(MortbenchError):
    pass


class DegenerateSubsample(MortbenchError):
    pass


# --- narrative ---

class MissingRange(MortbenchError):
    pass


class MissingAge(MortbenchError):
    pass


class MissingSex(MortbenchError):
    pass


# --- llm ---

class TransportError(MortbenchError):
    pass


class AuthError(MortbenchError):
    pass


# --- explain ---

class TooFewSamples(MortbenchError):
    pass


class FeatureSetMismatch(MortbenchError):
    pass


class AllZeroAttribution(UserWarning):
    """Every feature has zero mean attribution; percentages fall back to uniform."""


# --- synth / cli ---

class InvalidConfig(MortbenchError):
    pass


class MissingArtifact(MortbenchError):
    pass
