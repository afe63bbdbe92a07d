"""Prompt construction, oracle backends, and reply parsing.

The two query prompts are byte-stable templates. Backends are pluggable:
a remote chat-completion endpoint, a deterministic substring-scripted
mock, or a replay of a recorded transcript (the determinism firewall
around a live LLM).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import requests

from .records import (
    Abstract,
    AntecedentLabel,
    ClassifiedInstance,
    LabelSource,
    PipelineError,
    PronounInstance,
    ResolvedInstance,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "ORACLE_API_KEY"

RESOLUTION_SYSTEM_TEMPLATE = (
    "You are a helpful assistant with identifying the direct antecedent of a "
    "pronoun. Here is your antecedent_background knowledge: {background}"
)
RESOLUTION_USER_TEMPLATE = (
    "Identify the direct antecedent of the pronoun marked with [START] and "
    "[END] in the following abstract: {highlighted_abstract}. Only answer "
    "with the antecedent."
)
CLASSIFICATION_SYSTEM_TEMPLATE = (
    "You are a helpful assistant following these classification rules {rules}."
)
CLASSIFICATION_USER_TEMPLATE = (
    'In the following abstract, classify which label the noun "{antecedent}" '
    "in the context of the abstract {highlighted_abstract} is referring to: "
    '"patient," "occupation," "named individual," "author," "animal," or '
    '"other." Only output the label, no other text.'
)

_START = "[START]"
_END = "[END]"


class OracleTransportError(PipelineError):
    """Backend unreachable after retries."""


class ReplyError(Exception):
    """A well-formed request produced an unusable reply (never retried)."""

    def __init__(self, instance_id: str, reason: str, raw_reply: str = ""):
        super().__init__(f"{instance_id}: {reason}")
        self.instance_id = instance_id
        self.reason = reason
        self.raw_reply = raw_reply


@dataclass(frozen=True)
class InstanceFailure:
    instance_id: str
    stage: str
    reason: str
    raw_reply: str = ""

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "stage": self.stage,
            "reason": self.reason,
            "raw_reply": self.raw_reply,
        }


@dataclass(frozen=True)
class PromptPair:
    system_content: str
    user_content: str


def prompt_hash(prompt: PromptPair) -> str:
    payload = json.dumps([prompt.system_content, prompt.user_content], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class OracleBackendConfig:
    kind: str = "mock"  # remote | mock | replay
    endpoint: Optional[str] = None
    model_name: Optional[str] = None
    max_retries: int = 3
    requests_per_minute: int = 60
    timeout: float = 30.0
    script_path: Optional[str] = None      # mock rules
    transcript_path: Optional[str] = None  # replay source

    def __post_init__(self):
        if self.kind not in ("remote", "mock", "replay"):
            raise PipelineError(f"unknown backend kind: {self.kind}")
        if self.kind == "remote" and not (self.endpoint and self.model_name):
            raise PipelineError("remote backend requires endpoint and model_name")
        if self.kind == "replay" and not self.transcript_path:
            raise PipelineError("replay backend requires a transcript file")
        if self.requests_per_minute <= 0:
            raise PipelineError("requests_per_minute must be positive")


# ---------------------------------------------------------------------------
# backends

class MockBackend:
    """Pure function of the prompt: first substring rule that matches wins."""

    def __init__(self, rules: Sequence[tuple[str, str]] = (), default_reply: str = ""):
        self.rules = list(rules)
        self.default_reply = default_reply

    @classmethod
    def from_script(cls, path: str, default_reply: str = "") -> "MockBackend":
        rules = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                rules.append((obj["contains"], obj["reply"]))
        return cls(rules, default_reply)

    def complete(self, prompt: PromptPair) -> str:
        for needle, reply in self.rules:
            if needle in prompt.user_content or needle in prompt.system_content:
                return reply
        return self.default_reply


class ReplayBackend:
    """Replies keyed by prompt hash from a recorded transcript."""

    def __init__(self, transcript_path: str):
        self.replies: dict[str, str] = {}
        with open(transcript_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                self.replies[obj["prompt_hash"]] = obj["reply"]

    def complete(self, prompt: PromptPair) -> str:
        key = prompt_hash(prompt)
        if key not in self.replies:
            raise ReplyError("?", f"no transcript entry for prompt {key[:12]}")
        return self.replies[key]


class RecordingBackend:
    """Wraps a backend and appends {prompt_hash, reply} lines to a transcript."""

    def __init__(self, inner, transcript_path: str):
        self.inner = inner
        self.path = transcript_path
        self._lock = threading.Lock()

    def complete(self, prompt: PromptPair) -> str:
        reply = self.inner.complete(prompt)
        line = json.dumps(
            {"prompt_hash": prompt_hash(prompt), "reply": reply}, ensure_ascii=False
        )
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        return reply


class CachedBackend:
    """Reply cache keyed by prompt hash; safe under concurrent calls."""

    def __init__(self, inner):
        self.inner = inner
        self._cache: dict[str, str] = {}
        self._lock = threading.Lock()

    def complete(self, prompt: PromptPair) -> str:
        key = prompt_hash(prompt)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        reply = self.inner.complete(prompt)
        with self._lock:
            self._cache[key] = reply
        return reply


class _RateLimiter:
    def __init__(self, per_minute: int):
        self.interval = 60.0 / per_minute
        self._lock = threading.Lock()
        self._next_ok = 0.0

    def wait(self) -> None:
        with self._lock:
            now = time.monotonic()
            delay = self._next_ok - now
            self._next_ok = max(now, self._next_ok) + self.interval
        if delay > 0:
            time.sleep(delay)


class RemoteBackend:
    """JSON-over-HTTP chat-completion client with retry and rate limiting.

    Retries (with exponential backoff) apply to transport failures only;
    a well-formed but wrong reply is data, not a fault.
    """

    def __init__(self, config: OracleBackendConfig):
        self.config = config
        self._limiter = _RateLimiter(config.requests_per_minute)

    def complete(self, prompt: PromptPair) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_content},
                {"role": "user", "content": prompt.user_content},
            ],
        }
        last_exc: Optional[Exception] = None
        for attempt in range(self.config.max_retries + 1):
            self._limiter.wait()
            try:
                resp = requests.post(
                    self.config.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout,
                )
                resp.raise_for_status()
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < self.config.max_retries:
                    time.sleep(0.5 * 2**attempt)
        raise OracleTransportError(
            f"backend unreachable after {self.config.max_retries + 1} attempts: {last_exc}"
        )


def build_backend(config: OracleBackendConfig, record_to: Optional[str] = None):
    if config.kind == "remote":
        backend = RemoteBackend(config)
    elif config.kind == "replay":
        backend = ReplayBackend(config.transcript_path)
    else:
        backend = (
            MockBackend.from_script(config.script_path)
            if config.script_path
            else MockBackend()
        )
    if record_to:
        backend = RecordingBackend(backend, record_to)
    return CachedBackend(backend)


# ---------------------------------------------------------------------------
# prompt construction

def highlight_pronoun(abstract_text: str, instance: PronounInstance) -> str:
    """Abstract text with the instance's pronoun wrapped in [START]/[END]."""
    instance.check_against(abstract_text)
    return (
        abstract_text[: instance.offset]
        + _START
        + instance.surface
        + _END
        + abstract_text[instance.end :]
    )


def build_resolution_prompt(
    instance: PronounInstance, abstract: Abstract, background_text: str
) -> PromptPair:
    if not background_text:
        log.warning("resolution prompt built with empty background slot")
    return PromptPair(
        system_content=RESOLUTION_SYSTEM_TEMPLATE.format(background=background_text),
        user_content=RESOLUTION_USER_TEMPLATE.format(
            highlighted_abstract=highlight_pronoun(abstract.text, instance)
        ),
    )


def build_classification_prompt(
    resolved: ResolvedInstance, abstract: Abstract, rules_text: str
) -> PromptPair:
    if not rules_text:
        log.warning("classification prompt built with empty rules slot")
    return PromptPair(
        system_content=CLASSIFICATION_SYSTEM_TEMPLATE.format(rules=rules_text),
        user_content=CLASSIFICATION_USER_TEMPLATE.format(
            antecedent=resolved.antecedent_text,
            highlighted_abstract=highlight_pronoun(abstract.text, resolved.instance),
        ),
    )


# ---------------------------------------------------------------------------
# reply parsing

_QUOTES = "\"'“”‘’`"


def _trim_reply(raw: str) -> str:
    reply = raw.strip()
    while len(reply) >= 2 and reply[0] in _QUOTES and reply[-1] in _QUOTES:
        reply = reply[1:-1].strip()
    return reply


def resolve_antecedent(
    instance: PronounInstance,
    abstract: Abstract,
    backend,
    background_text: str = "",
) -> ResolvedInstance:
    """Ask the backend for the antecedent of one pronoun instance."""
    prompt = build_resolution_prompt(instance, abstract, background_text)
    try:
        raw = backend.complete(prompt)
    except ReplyError as exc:
        raise ReplyError(instance.instance_id, exc.reason, exc.raw_reply) from None
    reply = _trim_reply(raw)
    if not reply:
        raise ReplyError(instance.instance_id, "empty resolution reply", raw)
    if len(reply.split()) > 50:
        log.warning("%s: suspiciously long antecedent (%d tokens), kept",
                    instance.instance_id, len(reply.split()))
    idx = abstract.text.find(reply)
    span = (idx, idx + len(reply)) if idx >= 0 else None
    return ResolvedInstance(instance=instance, antecedent_text=reply, antecedent_span=span)


_LABEL_ALIASES = {label.value: label for label in AntecedentLabel}
_LABEL_ALIASES.update(
    {
        "trial participant": AntecedentLabel.PATIENT_TRIAL_PARTICIPANT,
        "patient/trial participant": AntecedentLabel.PATIENT_TRIAL_PARTICIPANT,
        "patient or trial participant": AntecedentLabel.PATIENT_TRIAL_PARTICIPANT,
        "author of the abstract": AntecedentLabel.AUTHOR,
    }
)


def _normalize_label_reply(raw: str) -> str:
    s = _trim_reply(raw).lower()
    s = re.sub(r"^[^a-z]+|[^a-z]+$", "", s)
    return re.sub(r"\s+", " ", s)


def classify_antecedent(
    resolved: ResolvedInstance,
    abstract: Abstract,
    backend,
    rules_text: str = "",
) -> ClassifiedInstance:
    """Ask the backend for the six-way label of a resolved antecedent."""
    prompt = build_classification_prompt(resolved, abstract, rules_text)
    try:
        raw = backend.complete(prompt)
    except ReplyError as exc:
        raise ReplyError(resolved.instance.instance_id, exc.reason, exc.raw_reply) from None
    normalized = _normalize_label_reply(raw)
    label = _LABEL_ALIASES.get(normalized)
    if label is None:
        raise ReplyError(
            resolved.instance.instance_id,
            f"unrecognized label reply {normalized!r}",
            raw,
        )
    return ClassifiedInstance(resolved=resolved, label=label, label_source=LabelSource.ORACLE)


# ---------------------------------------------------------------------------
# corpus drivers

def _run_over_instances(
    items: Sequence,
    one: Callable,
    stage: str,
    workers: int,
) -> tuple[list, list[InstanceFailure]]:
    results: list = []
    failures: list[InstanceFailure] = []

    def attempt(item):
        try:
            return one(item), None
        except ReplyError as exc:
            return None, InstanceFailure(exc.instance_id, stage, exc.reason, exc.raw_reply)

    if workers <= 1:
        outcomes = map(attempt, items)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attempt, items))
    for result, failure in outcomes:
        if failure is not None:
            failures.append(failure)
        else:
            results.append(result)
    return results, failures


def resolve_corpus(
    instances: Sequence[PronounInstance],
    abstracts_by_pmid: Mapping[str, Abstract],
    backend,
    background_text: str = "",
    workers: int = 1,
) -> tuple[list[ResolvedInstance], list[InstanceFailure]]:
    def one(inst: PronounInstance) -> ResolvedInstance:
        try:
            abstract = abstracts_by_pmid[inst.pmid]
        except KeyError:
            raise ReplyError(inst.instance_id, f"no abstract for pmid {inst.pmid}") from None
        return resolve_antecedent(inst, abstract, backend, background_text)

    return _run_over_instances(instances, one, "resolve", workers)


def classify_corpus(
    resolved: Sequence[ResolvedInstance],
    abstracts_by_pmid: Mapping[str, Abstract],
    backend,
    rules_text: str = "",
    workers: int = 1,
) -> tuple[list[ClassifiedInstance], list[InstanceFailure]]:
    def one(res: ResolvedInstance) -> ClassifiedInstance:
        try:
            abstract = abstracts_by_pmid[res.instance.pmid]
        except KeyError:
            raise ReplyError(
                res.instance.instance_id, f"no abstract for pmid {res.instance.pmid}"
            ) from None
        return classify_antecedent(res, abstract, backend, rules_text)

    return _run_over_instances(resolved, one, "classify", workers)
