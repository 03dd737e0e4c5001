"""Zero-shot mortality classification against a chat-completions endpoint.

Each patient gets up to five attempts; every attempt is a fresh conversation
(no shared history across attempts or patients). Transport failures are
retried with backoff and do not consume attempts. The run appends one outcome
per patient to a JSONL audit log and can resume from it without re-issuing
any network call for already-answered patients.
"""
from __future__ import annotations

import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import requests

from ..errors import AuthError, InvalidConfig, TransportError
from ..metrics import binary_metrics, confusion
from ..narrative import PatientNarrative, build_prompt

# Label vocabularies. Exactly one family present and un-negated -> that label.
_SURVIVE_RE = re.compile(r"\b(survive|survival)\b", re.IGNORECASE)
_DIE_RE = re.compile(r"\b(die|dies|died|death)\b", re.IGNORECASE)
_NEGATORS = {
    "not", "no", "never", "cannot", "can't", "won't", "wont", "don't", "dont",
    "doesn't", "doesnt", "didn't", "didnt", "wouldn't", "wouldnt", "isn't",
    "unlikely",
}
_WORD_RE = re.compile(r"[a-z']+", re.IGNORECASE)


@dataclass(frozen=True)
class ChatEndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "CHAT_API_KEY"
    temperature: float = 1.0
    max_tokens: int = 1024
    rng_seed: int = 123
    timeout: float = 60.0
    max_parallel: int = 4
    requests_per_minute: float = 0.0  # 0 disables rate limiting
    transport_retries: int = 3

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise InvalidConfig(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise InvalidConfig("max_tokens must be >= 1")
        if self.max_parallel < 1:
            raise InvalidConfig("max_parallel must be >= 1")

    def api_key(self) -> str:
        return os.environ.get(self.api_key_env, "")


@dataclass(frozen=True)
class PromptPolicy:
    """Attempt 1 uses `first_variant`; attempts >= escalate_at use strict.

    escalate_at=2 is the default (strict can rescue within the 5-attempt
    budget); escalate_at=6 keeps the first variant for all five attempts.
    """
    first_variant: str = "improved"
    escalate_at: int = 2
    max_attempts: int = 5

    def __post_init__(self):
        if not 1 <= self.max_attempts <= 5:
            raise InvalidConfig("max_attempts must be in 1..5")
        if self.escalate_at < 2:
            raise InvalidConfig("escalate_at must be >= 2")

    def variant_for(self, attempt: int) -> str:
        return "strict" if attempt >= self.escalate_at else self.first_variant


@dataclass(frozen=True)
class AttemptRecord:
    prompt_variant: str
    response_text: str
    extracted: str  # survive | die | undefined
    latency_s: float


@dataclass(frozen=True)
class ZscOutcome:
    patient_id: int
    attempts: tuple  # of AttemptRecord
    final_label: str  # survive | die | failed

    def to_json(self, true_label: int | None = None) -> dict:
        d = {
            "patient_id": self.patient_id,
            "final_label": self.final_label,
            "attempts": [
                {
                    "prompt_variant": a.prompt_variant,
                    "response_text": a.response_text,
                    "extracted": a.extracted,
                    "latency_s": round(a.latency_s, 6),
                }
                for a in self.attempts
            ],
        }
        if true_label is not None:
            d["label"] = int(true_label)
        return d


@dataclass
class ZscExperiment:
    endpoint: ChatEndpointConfig
    policy: PromptPolicy = field(default_factory=PromptPolicy)
    log_path: str = ""
    count_failed_as_incorrect: bool = True


def extract_label(response_text: str) -> str:
    """Map free-text model output to survive/die/undefined.

    Word-boundary matches only ("died" counts, "diet" does not). A keyword
    with a negator in the three preceding tokens poisons the whole response
    to undefined, as does the presence of both families or neither.
    """
    text = response_text or ""
    has_survive = bool(_SURVIVE_RE.search(text))
    has_die = bool(_DIE_RE.search(text))
    if has_survive == has_die:
        return "undefined"
    target = _SURVIVE_RE if has_survive else _DIE_RE
    words = _WORD_RE.findall(text.lower())
    for i, w in enumerate(words):
        if target.fullmatch(w) and any(p in _NEGATORS for p in words[max(0, i - 3):i]):
            return "undefined"
    return "survive" if has_survive else "die"


class _TokenBucket:
    def __init__(self, per_minute: float):
        self.rate = per_minute / 60.0
        self.capacity = max(per_minute, 1.0)
        self.tokens = self.capacity
        self.stamp = time.monotonic()
        self.lock = threading.Lock()

    def acquire(self):
        while True:
            with self.lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.stamp) * self.rate)
                self.stamp = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            time.sleep(min(wait, 1.0))


def _post_chat(endpoint: ChatEndpointConfig, messages: list[dict], sampling: dict) -> str:
    """One HTTP round trip. Raises TransportError/AuthError; returns content."""
    body = {
        "model": endpoint.model,
        "messages": messages,
        "temperature": sampling["temperature"],
        "max_tokens": sampling["max_tokens"],
        "seed": sampling["rng_seed"],
    }
    headers = {"Content-Type": "application/json"}
    key = endpoint.api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    try:
        resp = requests.post(endpoint.base_url, json=body, headers=headers, timeout=endpoint.timeout)
    except requests.RequestException as e:
        raise TransportError(f"chat endpoint unreachable: {e}") from e
    if resp.status_code in (401, 403):
        raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
    if resp.status_code != 200:
        raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError) as e:
        raise TransportError(f"malformed completion payload: {e}") from e


def _call_with_retries(endpoint: ChatEndpointConfig, messages, sampling, bucket) -> tuple[str, float]:
    backoff = 0.5
    for trial in range(endpoint.transport_retries + 1):
        if bucket is not None:
            bucket.acquire()
        t0 = time.monotonic()
        try:
            return _post_chat(endpoint, messages, sampling), time.monotonic() - t0
        except TransportError:
            if trial == endpoint.transport_retries:
                raise
            time.sleep(backoff)
            backoff *= 2


def classify_patient(
    patient_id: int,
    narrative: PatientNarrative | str,
    endpoint: ChatEndpointConfig,
    policy: PromptPolicy | None = None,
    _bucket=None,
) -> ZscOutcome:
    """Up to five isolated attempts; stops at the first defined label."""
    policy = policy or PromptPolicy()
    if isinstance(narrative, str):
        narrative = PatientNarrative(text=narrative)
    sampling = {
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
        "rng_seed": endpoint.rng_seed,
    }
    attempts = []
    final = "failed"
    for attempt in range(1, policy.max_attempts + 1):
        bundle = build_prompt(narrative, policy.variant_for(attempt), sampling)
        # messages() holds only this attempt's system+user pair: a fresh
        # conversation per attempt, never the transcript so far.
        text, latency = _call_with_retries(endpoint, bundle.messages(), sampling, _bucket)
        label = extract_label(text)
        attempts.append(AttemptRecord(bundle.prompt_variant, text, label, latency))
        if label != "undefined":
            final = label
            break
    return ZscOutcome(patient_id=int(patient_id), attempts=tuple(attempts), final_label=final)


def _read_log(path: str) -> dict[int, dict]:
    done = {}
    if path and os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    done[int(rec["patient_id"])] = rec
    return done


def zsc_metrics(outcome_records: list[dict], count_failed_as_incorrect: bool = True) -> dict:
    """Metrics over the audit log, die as the positive class.

    Failed patients either count as wrong predictions (label flipped) or are
    dropped; either way the report carries the failure tally.
    """
    y_true, y_pred = [], []
    n_failed = 0
    for rec in sorted(outcome_records, key=lambda r: int(r["patient_id"])):
        y = int(rec["label"])
        if rec["final_label"] == "failed":
            n_failed += 1
            if not count_failed_as_incorrect:
                continue
            y_true.append(y)
            y_pred.append(1 - y)
            continue
        y_true.append(y)
        y_pred.append(1 if rec["final_label"] == "die" else 0)
    cm = confusion(y_true, y_pred)
    report = binary_metrics(cm)
    report["confusion"] = cm
    report["n_evaluated"] = len(y_true)
    report["n_failed"] = n_failed
    report["failed_counted_incorrect"] = bool(count_failed_as_incorrect)
    return report


def run_zsc(experiment: ZscExperiment, corpus: list[dict]) -> tuple[dict, list[dict]]:
    """Run (or resume) the experiment over a narrative corpus.

    corpus rows need patient_id, narrative, label. Outcomes append to
    experiment.log_path as they complete; patients already in the log are
    skipped without any network traffic. Returns (metrics report, all
    outcome records including resumed ones).
    """
    if not corpus:
        raise InvalidConfig("empty corpus")
    done = _read_log(experiment.log_path)
    pending = [row for row in corpus if int(row["patient_id"]) not in done]
    labels = {int(r["patient_id"]): int(r["label"]) for r in corpus}

    bucket = None
    if experiment.endpoint.requests_per_minute > 0:
        bucket = _TokenBucket(experiment.endpoint.requests_per_minute)

    log_f = open(experiment.log_path, "a", encoding="utf-8") if experiment.log_path else None
    write_lock = threading.Lock()
    try:
        if pending:
            with ThreadPoolExecutor(max_workers=experiment.endpoint.max_parallel) as pool:
                futs = {
                    pool.submit(
                        classify_patient,
                        int(row["patient_id"]),
                        str(row["narrative"]),
                        experiment.endpoint,
                        experiment.policy,
                        bucket,
                    ): int(row["patient_id"])
                    for row in pending
                }
                for fut in as_completed(futs):
                    outcome = fut.result()  # AuthError propagates and aborts
                    rec = outcome.to_json(true_label=labels[outcome.patient_id])
                    done[outcome.patient_id] = rec
                    if log_f is not None:
                        with write_lock:
                            log_f.write(json.dumps(rec, sort_keys=True) + "\n")
                            log_f.flush()
    finally:
        if log_f is not None:
            log_f.close()

    records = [done[int(r["patient_id"])] for r in corpus if int(r["patient_id"]) in done]
    report = zsc_metrics(records, experiment.count_failed_as_incorrect)
    if experiment.log_path:
        from ..util import dump_json

        dump_json(report, experiment.log_path + ".metrics.json")
    return report, records
