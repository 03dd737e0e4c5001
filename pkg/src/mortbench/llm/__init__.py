from .client import (
    AttemptRecord,
    ChatEndpointConfig,
    PromptPolicy,
    ZscExperiment,
    ZscOutcome,
    classify_patient,
    extract_label,
    run_zsc,
    zsc_metrics,
)
from .mock_server import MockChatServer

__all__ = [
    "AttemptRecord",
    "ChatEndpointConfig",
    "MockChatServer",
    "PromptPolicy",
    "ZscExperiment",
    "ZscOutcome",
    "classify_patient",
    "extract_label",
    "run_zsc",
    "zsc_metrics",
]
