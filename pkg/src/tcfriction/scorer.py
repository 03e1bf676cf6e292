"""Score unique task texts through a backend with a bounded repair loop."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol

from .errors import BackendError, CacheCorrupt, EmptyTask, ScriptExhausted, TransportError
from .ingest import task_key
from .schema import (
    CATEGORIES,
    CATEGORY_DEFINITIONS,
    DRIVERS,
    WIRE_EXAMPLE,
    CategoryCode,
    ScoreMeta,
    TaskScore,
    ValidationViolation,
    parse_candidate,
    render_violations,
    validate_candidate,
)

logger = logging.getLogger(__name__)

PERFORMED_ONCE = "Consider the task as it would typically be performed once."


@dataclass(frozen=True)
class PromptPayload:
    system_text: str
    user_text: str
    temperature: float = 0.0
    max_output_tokens: int = 400

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text},
        ]


@dataclass(frozen=True)
class ScorerPolicy:
    max_attempts: int = 3
    request_timeout: float = 60.0
    max_in_flight: int = 4
    backoff_base: float = 1.0
    backoff_multiplier: float = 2.0
    transport_retries: int = 3
    max_output_tokens: int = 400

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.transport_retries < 0:
            raise ValueError("transport_retries must be >= 0")

    def snapshot(self) -> dict:
        """Result-affecting settings only; concurrency and timeouts are excluded."""
        return {
            "max_attempts": self.max_attempts,
            "transport_retries": self.transport_retries,
            "max_output_tokens": self.max_output_tokens,
            "temperature": 0.0,
        }


@dataclass(frozen=True)
class ScoringFailure:
    task_key: str
    attempts: int
    last_violations: tuple[ValidationViolation, ...]
    raw_last_response: str

    def as_dict(self) -> dict:
        return {
            "task_key": self.task_key,
            "error": {
                "attempts": self.attempts,
                "last_violations": [v.as_dict() for v in self.last_violations],
                "raw_last_response": self.raw_last_response,
            },
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "ScoringFailure":
        err = rec["error"]
        return cls(
            rec["task_key"],
            int(err["attempts"]),
            tuple(ValidationViolation(**v) for v in err["last_violations"]),
            err["raw_last_response"],
        )


@dataclass
class ScoredCorpus:
    scores: dict[str, TaskScore]
    failures: dict[str, ScoringFailure]
    backend_id: str
    policy: dict = field(default_factory=dict)

    def dumps(self) -> str:
        """Canonical serialisation, independent of completion order."""
        doc = {
            "backend_id": self.backend_id,
            "policy": self.policy,
            "scores": [self.scores[k].as_dict() for k in sorted(self.scores)],
            "failures": [self.failures[k].as_dict() for k in sorted(self.failures)],
        }
        return json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ScoredCorpus":
        doc = json.loads(text)
        scores = {r["task_key"]: TaskScore.from_dict(r) for r in doc["scores"]}
        failures = {r["task_key"]: ScoringFailure.from_dict(r) for r in doc["failures"]}
        return cls(scores, failures, doc["backend_id"], doc.get("policy", {}))


def build_system_text() -> str:
    lines = [
        "You code healthcare task statements for transaction costs: the costs of "
        "coordinating people and information around a task, not the effort of the task itself.",
        PERFORMED_ONCE,
        "",
        "Pick the single dominant transaction-cost category:",
    ]
    for code in CATEGORIES:
        lines.append(f"- {code.value}: {CATEGORY_DEFINITIONS[code]}")
    lines += [
        "",
        "Score tc_intensity, the overall coordination burden of doing the task once, "
        "as an integer from 0 (none) to 5 (very high).",
        "Score each driver as an integer from 0 to 3: "
        "uncertainty, measurability (how hard the outcome is to measure), asset_specificity, "
        "interdependence (with other actors), opportunism (exposure to it).",
        "Optionally add short lowercase tags naming the most salient friction, "
        "e.g. information search, decision coordination, monitoring, adaptation.",
        "",
        "Return only one JSON object, no prose, with exactly these keys:",
        WIRE_EXAMPLE,
    ]
    return "\n".join(lines)


_SYSTEM_TEXT = build_system_text()


def build_prompt(task_text: str, max_output_tokens: int = 400) -> PromptPayload:
    # Only the task text reaches the backend; occupation metadata is never passed in.
    if not task_text or not task_text.strip():
        raise EmptyTask("cannot score an empty task statement")
    return PromptPayload(_SYSTEM_TEXT, task_text, 0.0, max_output_tokens)


class Backend(Protocol):
    backend_id: str
    model_id: str

    def complete(self, messages: list[dict], *, temperature: float, max_output_tokens: int) -> str:
        ...


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def score_task(
    task_text: str,
    backend: Backend,
    policy: ScorerPolicy | None = None,
    *,
    clock: Callable[[], str] = _utc_now,
    sleep: Callable[[float], None] = time.sleep,
) -> TaskScore | ScoringFailure:
    """Score one task text, repairing invalid responses up to ``policy.max_attempts``.

    Transport failures are retried with exponential backoff on a separate
    budget; if that budget runs out :class:`TransportError` propagates.
    """
    policy = policy or ScorerPolicy()
    prompt = build_prompt(task_text, policy.max_output_tokens)
    messages = prompt.messages()
    key = task_key(task_text)
    transport_retries = 0
    violations: list[ValidationViolation] = []
    raw = ""
    for attempt in range(1, policy.max_attempts + 1):
        tries = 0
        while True:
            try:
                raw = backend.complete(
                    list(messages),
                    temperature=prompt.temperature,
                    max_output_tokens=prompt.max_output_tokens,
                )
                break
            except TransportError:
                if tries >= policy.transport_retries:
                    raise
                sleep(policy.backoff_base * policy.backoff_multiplier ** tries)
                tries += 1
                transport_retries += 1
        result = validate_candidate(parse_candidate(raw))
        if not isinstance(result, list):
            meta = ScoreMeta(attempt, attempt > 1, backend.model_id, clock(), transport_retries)
            return TaskScore(key, result, meta)
        violations = result
        logger.debug("attempt %d for %s rejected: %s", attempt, key[:12], violations)
        messages += [
            {"role": "assistant", "content": raw},
            {"role": "user", "content": render_violations(violations)},
        ]
    return ScoringFailure(key, policy.max_attempts, tuple(violations), raw)


class ScoreCache:
    """Append-only JSON-lines cache of scoring outcomes keyed by task_key.

    Each line is ``{"task_key", "kind", "record", "checksum"}`` where checksum
    is the SHA-256 of the canonical JSON of ``record``. On duplicate keys the
    last valid line wins. A final line without its newline is an interrupted
    write and is dropped; any other unreadable line raises CacheCorrupt.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.scores: dict[str, TaskScore] = {}
        self.failures: dict[str, ScoringFailure] = {}
        self.writes = 0
        self._load()

    @staticmethod
    def _checksum(record: dict) -> str:
        blob = json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _load(self):
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        lines = data.split(b"\n")
        tail = lines.pop()
        if tail:
            logger.warning("%s: dropping interrupted final cache line", self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(len(data) - len(tail))
        for n, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            key = None
            try:
                entry = json.loads(line.decode("utf-8"))
                key = entry.get("task_key")
                record = entry["record"]
                if self._checksum(record) != entry["checksum"]:
                    raise ValueError("checksum mismatch")
                if record["task_key"] != key:
                    raise ValueError("record key does not match line key")
                if entry["kind"] == "score":
                    score = TaskScore.from_dict(record)
                    self.scores[key] = score
                    self.failures.pop(key, None)
                elif entry["kind"] == "failure":
                    self.failures[key] = ScoringFailure.from_dict(record)
                    self.scores.pop(key, None)
                else:
                    raise ValueError(f"unknown kind {entry['kind']!r}")
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise CacheCorrupt(self.path, n, key, str(exc)) from None

    def get(self, key: str):
        return self.scores.get(key) or self.failures.get(key)

    def put(self, outcome: TaskScore | ScoringFailure):
        kind = "score" if isinstance(outcome, TaskScore) else "failure"
        record = outcome.as_dict()
        entry = {"task_key": outcome.task_key, "kind": kind, "record": record,
                 "checksum": self._checksum(record)}
        line = json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            if kind == "score":
                self.scores[outcome.task_key] = outcome
                self.failures.pop(outcome.task_key, None)
            else:
                self.failures[outcome.task_key] = outcome
                self.scores.pop(outcome.task_key, None)
            self.writes += 1


def score_corpus(
    unique_tasks: list[tuple[str, str]],
    backend: Backend,
    cache: ScoreCache,
    policy: ScorerPolicy | None = None,
    *,
    clock: Callable[[], str] = _utc_now,
    sleep: Callable[[float], None] = time.sleep,
) -> ScoredCorpus:
    """Score every ``(task_key, task_text)`` pair, reusing cached outcomes."""
    policy = policy or ScorerPolicy()
    pending = [(k, t) for k, t in unique_tasks if cache.get(k) is None]
    logger.info("%d unique tasks, %d cached, %d to score",
                len(unique_tasks), len(unique_tasks) - len(pending), len(pending))

    def work(item):
        _, text = item
        outcome = score_task(text, backend, policy, clock=clock, sleep=sleep)
        cache.put(outcome)
        return outcome

    if policy.max_in_flight == 1:
        for item in pending:
            work(item)
    else:
        pool = ThreadPoolExecutor(max_workers=policy.max_in_flight)
        try:
            for future in [pool.submit(work, item) for item in pending]:
                future.result()
        except BaseException:
            # Stop promptly on interrupt or error; finished tasks are already cached.
            pool.shutdown(wait=True, cancel_futures=True)
            raise
        pool.shutdown()

    scores, failures = {}, {}
    for key, _ in unique_tasks:
        outcome = cache.get(key)
        if isinstance(outcome, TaskScore):
            scores[key] = outcome
        else:
            failures[key] = outcome
    return ScoredCorpus(scores, failures, backend.backend_id, policy.snapshot())


# --- backends -------------------------------------------------------------

# Keyword rules for the deterministic mock, applied by earliest match position.
DEFAULT_RULES: tuple[tuple[str, CategoryCode], ...] = (
    ("record", CategoryCode.MONITOR_ENFORCE),
    ("document", CategoryCode.MONITOR_ENFORCE),
    ("chart", CategoryCode.MONITOR_ENFORCE),
    ("monitor", CategoryCode.MONITOR_ENFORCE),
    ("inspect", CategoryCode.MONITOR_ENFORCE),
    ("audit", CategoryCode.MONITOR_ENFORCE),
    ("verify", CategoryCode.MONITOR_ENFORCE),
    ("ensure", CategoryCode.MONITOR_ENFORCE),
    ("clean", CategoryCode.MONITOR_ENFORCE),
    ("decide", CategoryCode.BARGAIN_DECIDE),
    ("determine", CategoryCode.BARGAIN_DECIDE),
    ("diagnos", CategoryCode.BARGAIN_DECIDE),
    ("prescribe", CategoryCode.BARGAIN_DECIDE),
    ("negotiat", CategoryCode.BARGAIN_DECIDE),
    ("recommend", CategoryCode.BARGAIN_DECIDE),
    ("select", CategoryCode.BARGAIN_DECIDE),
    ("review", CategoryCode.SEARCH_INFO),
    ("search", CategoryCode.SEARCH_INFO),
    ("research", CategoryCode.SEARCH_INFO),
    ("interview", CategoryCode.SEARCH_INFO),
    ("collect", CategoryCode.SEARCH_INFO),
    ("gather", CategoryCode.SEARCH_INFO),
    ("assess", CategoryCode.SEARCH_INFO),
    ("obtain", CategoryCode.SEARCH_INFO),
    ("examine", CategoryCode.SEARCH_INFO),
    ("coordinate", CategoryCode.ADAPT_COORDINATE),
    ("schedule", CategoryCode.ADAPT_COORDINATE),
    ("arrange", CategoryCode.ADAPT_COORDINATE),
    ("adjust", CategoryCode.ADAPT_COORDINATE),
    ("communicat", CategoryCode.ADAPT_COORDINATE),
    ("refer", CategoryCode.ADAPT_COORDINATE),
    ("consult", CategoryCode.ADAPT_COORDINATE),
    ("plan", CategoryCode.ADAPT_COORDINATE),
    ("transport", CategoryCode.ADAPT_COORDINATE),
)

_BASE_INTENSITY = {
    CategoryCode.SEARCH_INFO: 3,
    CategoryCode.BARGAIN_DECIDE: 4,
    CategoryCode.MONITOR_ENFORCE: 2,
    CategoryCode.ADAPT_COORDINATE: 3,
}

_TAGS = {
    CategoryCode.SEARCH_INFO: "information search",
    CategoryCode.BARGAIN_DECIDE: "decision coordination",
    CategoryCode.MONITOR_ENFORCE: "monitoring",
    CategoryCode.ADAPT_COORDINATE: "adaptation",
}


def _task_text_from(messages: list[dict]) -> str:
    return messages[1]["content"]


class MockBackend:
    """Deterministic offline backend.

    With ``script`` it replays responses: a list is consumed in order across
    all requests, a dict maps task text to its own response queue. Without a
    script it derives a record from keyword ``rules`` and a hash of the text.
    """

    model_id = "mock-rules-v1"

    def __init__(self, script=None, rules=DEFAULT_RULES):
        self.rules = tuple(rules)
        self._lock = threading.Lock()
        self.calls: list[list[dict]] = []
        if script is None:
            self._queue = None
            self.backend_id = "mock:rules"
        elif isinstance(script, dict):
            self._queue = {text: list(responses) for text, responses in script.items()}
            self.backend_id = "mock:script"
        else:
            self._queue = list(script)
            self.backend_id = "mock:script"

    def complete(self, messages, *, temperature=0.0, max_output_tokens=400) -> str:
        text = _task_text_from(messages)
        with self._lock:
            self.calls.append(messages)
            if self._queue is None:
                return self.rule_response(text)
            queue = self._queue.get(text, []) if isinstance(self._queue, dict) else self._queue
            if not queue:
                raise ScriptExhausted(f"no scripted response left for {text[:40]!r}")
            response = queue.pop(0)
        if isinstance(response, BaseException):
            raise response
        return response if isinstance(response, str) else json.dumps(response)

    def categorise(self, text: str) -> CategoryCode:
        lowered = text.lower()
        best = None
        for order, (word, category) in enumerate(self.rules):
            pos = lowered.find(word)
            if pos >= 0 and (best is None or (pos, order) < best[:2]):
                best = (pos, order, category)
        return best[2] if best else CategoryCode.ADAPT_COORDINATE

    def rule_response(self, text: str) -> str:
        category = self.categorise(text)
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        intensity = min(5, max(0, _BASE_INTENSITY[category] + digest[0] % 5 - 2))
        drivers = {name: digest[i + 1] % 4 for i, name in enumerate(DRIVERS)}
        record = {
            "tc_category": category.value,
            "tc_intensity": intensity,
            "drivers": drivers,
            "tags": [_TAGS[category]],
        }
        return json.dumps(record)


def mock_backend(script=None, rules=DEFAULT_RULES) -> MockBackend:
    return MockBackend(script=script, rules=rules)


class RemoteBackend:
    """Chat-completions endpoint in the Azure OpenAI style.

    The credential is read by the caller from the environment and never
    logged or written anywhere.
    """

    def __init__(self, endpoint: str, deployment: str, api_version: str, api_key: str,
                 timeout: float = 60.0, transport=None):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self.deployment = deployment
        self.api_version = api_version
        self.model_id = deployment
        self.backend_id = f"remote:{deployment}@{api_version}"
        self._client = httpx.Client(timeout=timeout, transport=transport,
                                    headers={"api-key": api_key})

    @property
    def url(self) -> str:
        return f"{self.endpoint}/openai/deployments/{self.deployment}/chat/completions"

    def complete(self, messages, *, temperature=0.0, max_output_tokens=400) -> str:
        import httpx

        body = {
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_output_tokens,
            "response_format": {"type": "json_object"},
        }
        try:
            resp = self._client.post(self.url, params={"api-version": self.api_version}, json=body)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from None
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code} from backend")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code} from backend: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError):
            # Malformed envelope is handled like a malformed record: repairable.
            return resp.text

    def close(self):
        self._client.close()
