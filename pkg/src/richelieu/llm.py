"""Chat-completion backends, prompt templates and structured-output extraction.

Every agent prompt asks for a fenced ```json block; :func:`extract_structured`
pulls it out and validates it against one of the schemas in :data:`SCHEMAS`.

Backends implement ``generate(messages, context) -> str``. ``messages`` is the
OpenAI-style list of ``{"role", "content"}`` dicts; ``context`` is an optional
dict of structured facts the caller already knows (phase, power, task id).
Remote backends ignore it. Scripted backends may use it to answer without
parsing prose, which keeps whole games reproducible.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Pattern, Protocol, Sequence

import httpx
import jsonschema

__all__ = [
    "PromptTemplate",
    "TemplateError",
    "BackendError",
    "ProtocolError",
    "ExtractionError",
    "BackendConfig",
    "Backend",
    "ScriptedBackend",
    "FailingBackend",
    "RemoteBackend",
    "ChatSession",
    "SCHEMAS",
    "TEMPLATE_IDS",
    "load_template",
    "render_template",
    "complete",
    "extract_structured",
    "make_backend",
    "json_block",
]

log = logging.getLogger(__name__)

TEMPLATE_IDS = (
    "init",
    "social_reasoning",
    "planner",
    "planner_reflection",
    "experience",
    "negotiation",
    "actor",
    "actor_retry",
    "memory_eval",
    "truthiness",
    "truthfulness",
)


class TemplateError(KeyError):
    """A placeholder was left unbound, or a template file is missing."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class BackendError(RuntimeError):
    """Generation failed (network, timeout, or a backend that refuses)."""


class ProtocolError(BackendError):
    """The remote endpoint answered with something that is not a chat completion."""


class ExtractionError(ValueError):
    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(message)


# ------------------------------------------------------------------ templates

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_ \-]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt text with ``{name}`` placeholders (names may contain spaces or hyphens)."""

    id: str
    text: str
    required_placeholders: frozenset[str] = frozenset()

    @classmethod
    def from_text(cls, template_id: str, raw: str) -> "PromptTemplate":
        # ``#:`` lines annotate the file; they never reach the model
        body = "\n".join(line for line in raw.splitlines() if not line.startswith("#:"))
        body = body.strip("\n") + "\n"
        names = frozenset(m.group(1) for m in _PLACEHOLDER.finditer(body))
        return cls(template_id, body, names)

    def render(self, bindings: Mapping[str, Any]) -> str:
        return render_template(self, bindings)


def render_template(template: PromptTemplate, bindings: Mapping[str, Any]) -> str:
    missing = sorted(template.required_placeholders - set(bindings))
    if missing:
        raise TemplateError(missing[0])
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template.text)


def _template_dir() -> Path:
    return Path(str(resources.files("richelieu") / "templates"))


@lru_cache(maxsize=None)
def _load_cached(template_id: str, directory: str) -> PromptTemplate:
    path = Path(directory) / f"{template_id}.txt"
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError:
        raise TemplateError(f"no template {template_id!r} in {directory}") from None
    return PromptTemplate.from_text(template_id, raw)


def load_template(template_id: str, directory: str | Path | None = None) -> PromptTemplate:
    return _load_cached(template_id, str(directory or _template_dir()))


# -------------------------------------------------------------------- schemas

_POWER_MAP = {"type": "object", "additionalProperties": {"type": "string"}}
_LABEL = {"enum": ["ally", "enemy", "neutral"]}
_COMMITMENT = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["non_aggression", "support_order", "ceasefire", "joint_attack"]},
        "provinces": {"type": "array", "items": {"type": "string"}},
        "order": {"type": "string"},
        "power": {"type": "string"},
    },
}

SCHEMAS: dict[str, dict] = {
    "belief": {
        "type": "object",
        "required": ["relationships"],
        "properties": {
            "relationships": {
                "type": "object",
                "additionalProperties": {
                    "type": "object",
                    "required": ["label"],
                    "properties": {"label": _LABEL, "rationale": {"type": "string"}},
                },
            },
            "intentions": _POWER_MAP,
            "primary_threat": {"type": ["string", "null"]},
            "candidate_ally": {"type": ["string", "null"]},
        },
    },
    "subgoal": {
        "type": "object",
        "required": ["text"],
        "properties": {
            "text": {"type": "string", "minLength": 1},
            "focus_powers": {"type": "array", "items": {"type": "string"}},
            "focus_provinces": {"type": "array", "items": {"type": "string"}},
            "horizon": {"type": "integer", "minimum": 1},
            "intentions": _POWER_MAP,
        },
    },
    "message_bundle": {
        "type": "object",
        "required": ["messages"],
        "properties": {
            "messages": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["recipient", "text"],
                    "properties": {
                        "recipient": {"type": "string"},
                        "text": {"type": "string"},
                        "commitments": {"type": "array", "items": _COMMITMENT},
                        "sincere": {"type": "boolean"},
                    },
                },
            },
            "relationships": {"type": "object", "additionalProperties": _LABEL},
        },
    },
    "orders": {
        "type": "object",
        "required": ["orders"],
        "properties": {"orders": {"type": "array", "items": {"type": "string"}}},
    },
    "evaluation": {
        "type": "object",
        "required": ["score"],
        "properties": {"score": {"type": "number", "minimum": 0, "maximum": 10}, "rationale": {"type": "string"}},
    },
    "truthiness": {
        "type": "object",
        "required": ["consistency", "experience"],
        "properties": {
            "consistency": {"type": "number", "minimum": 0, "maximum": 1},
            "experience": {"type": "number", "minimum": 0, "maximum": 1},
            "rationale": {"type": "string"},
        },
    },
    "truthfulness": {
        "type": "object",
        "required": ["honest"],
        "properties": {"honest": {"type": "boolean"}},
    },
}

# schemas whose payload is a single list: return that list instead of the wrapper
_UNWRAP = {"orders": "orders"}

_FENCE = re.compile(r"```(?:json)?[ \t]*\n(.*?)```", re.DOTALL)

CORRECTION = (
    "Your previous answer could not be read. Reply again with exactly one fenced "
    "```json block that matches the {schema} format described above."
)


def json_block(value: Any) -> str:
    """Wrap a value the way every prompt asks the model to answer."""
    return "```json\n" + json.dumps(value, sort_keys=True) + "\n```"


@lru_cache(maxsize=None)
def _validator(schema_name: str):
    schema = SCHEMAS[schema_name]
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def _parse_block(text: str, schema_name: str) -> Any:
    blocks = _FENCE.findall(text or "")
    if not blocks:
        raise ValueError("no fenced json block")
    value = json.loads(blocks[-1])
    err = jsonschema.exceptions.best_match(_validator(schema_name).iter_errors(value))
    if err is not None:
        raise err
    key = _UNWRAP.get(schema_name)
    return value[key] if key else value


def extract_structured(
    response: str,
    schema_name: str,
    session: "ChatSession | None" = None,
    context: Mapping[str, Any] | None = None,
) -> Any:
    """Parse and validate the fenced block in ``response``.

    With a session, one correction prompt is sent on failure; the second
    failure raises :class:`ExtractionError` carrying the raw text.
    """
    if schema_name not in SCHEMAS:
        raise KeyError(f"unknown schema {schema_name!r}")
    try:
        return _parse_block(response, schema_name)
    except (ValueError, jsonschema.ValidationError) as first:
        if session is None:
            raise ExtractionError(f"{schema_name}: {first}", response) from None
        log.info("reprompting after unreadable %s block: %s", schema_name, first)
    retry = session.complete(CORRECTION.format(schema=schema_name), context=context)
    try:
        return _parse_block(retry, schema_name)
    except (ValueError, jsonschema.ValidationError) as second:
        raise ExtractionError(f"{schema_name} after reprompt: {second}", response + "\n---\n" + retry) from None


# ------------------------------------------------------------------- backends

Message = Mapping[str, str]
Responder = Callable[[Sequence[Message], Mapping[str, Any]], str]


class Backend(Protocol):
    def generate(self, messages: Sequence[Message], context: Mapping[str, Any] | None = None) -> str: ...


@dataclass
class ScriptedBackend:
    """Deterministic backend.

    ``rules`` are ``(pattern, reply)`` pairs tried in order against the last
    user message; ``reply`` is a string or a responder callable. ``responder``
    handles anything no rule matched. With neither, :class:`BackendError`.
    """

    rules: Sequence[tuple[str | Pattern, str | Responder]] = ()
    responder: Responder | None = None
    calls: int = field(default=0, init=False)

    def generate(self, messages: Sequence[Message], context: Mapping[str, Any] | None = None) -> str:
        self.calls += 1
        context = context or {}
        last = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")
        for pattern, reply in self.rules:
            if re.search(pattern, last):
                return reply(messages, context) if callable(reply) else reply
        if self.responder is not None:
            return self.responder(messages, context)
        raise BackendError("no scripted rule matched")


class FailingBackend:
    """Backend that always fails; used to exercise degraded paths."""

    def __init__(self, message: str = "backend unavailable"):
        self.message = message
        self.calls = 0

    def generate(self, messages: Sequence[Message], context: Mapping[str, Any] | None = None) -> str:
        self.calls += 1
        raise BackendError(self.message)


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"
    endpoint: str | None = None
    model: str = ""
    credential_env: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    temperature: float = 0.7
    backoff: float = 0.5
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.kind not in ("remote", "scripted", "failing"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote" and not (self.endpoint and self.credential_env):
            raise ValueError("remote backend needs endpoint and credential_env")
        if self.max_retries < 0 or self.timeout <= 0 or self.max_in_flight < 1:
            raise ValueError("timeout, max_retries and max_in_flight must be positive")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "BackendConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown backend settings: {', '.join(sorted(unknown))}")
        return cls(**data)


class RemoteBackend:
    """Chat-completion client for OpenAI-compatible endpoints.

    Request: ``POST {endpoint}/chat/completions`` with ``model``, ``messages``
    and ``temperature``. Response: ``choices[0].message.content``. Transport
    errors, timeouts, 429 and 5xx are retried with exponential backoff.
    """

    _gates: dict[str, threading.BoundedSemaphore] = {}
    _gates_lock = threading.Lock()

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None, sleep=time.sleep):
        if config.kind != "remote":
            raise ValueError("RemoteBackend needs a remote config")
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        with self._gates_lock:
            self._gate = self._gates.setdefault(config.endpoint, threading.BoundedSemaphore(config.max_in_flight))

    def _key(self) -> str:
        key = os.environ.get(self.config.credential_env or "", "")
        if not key:
            raise BackendError(f"credential variable {self.config.credential_env} is not set")
        return key

    def _redact(self, text: str, key: str) -> str:
        return text.replace(key, "[REDACTED]") if key else text

    def generate(self, messages: Sequence[Message], context: Mapping[str, Any] | None = None) -> str:
        key = self._key()
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        payload = {"model": self.config.model, "messages": list(messages), "temperature": self.config.temperature}
        headers = {"Authorization": f"Bearer {key}"}
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self._client.post(url, json=payload, headers=headers, timeout=self.config.timeout)
            except httpx.HTTPError as exc:
                last_error = self._redact(f"{type(exc).__name__}: {exc}", key)
                log.warning("attempt %d to %s failed: %s", attempt + 1, url, last_error)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                log.warning("attempt %d to %s failed: %s", attempt + 1, url, last_error)
                continue
            if resp.status_code >= 400:
                raise BackendError(self._redact(f"HTTP {resp.status_code}: {resp.text[:200]}", key))
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise ProtocolError(self._redact(f"unexpected payload: {resp.text[:200]}", key)) from None
        raise BackendError(f"{url} failed after {self.config.max_retries + 1} attempts: {last_error}")

    def close(self) -> None:
        self._client.close()


def make_backend(config: BackendConfig, responder: Responder | None = None) -> Backend:
    if config.kind == "remote":
        return RemoteBackend(config)
    if config.kind == "failing":
        return FailingBackend()
    return ScriptedBackend(responder=responder)


# -------------------------------------------------------------------- session

@dataclass
class ChatSession:
    """Message history bound to one backend.

    ``budget`` caps the characters of non-system history; the oldest turns are
    evicted first. The system preamble is always kept.
    """

    backend: Backend
    system: str = ""
    budget: int = 24_000
    history: list[dict[str, str]] = field(default_factory=list)

    def _size(self) -> int:
        return sum(len(m["content"]) for m in self.history)

    def _evict(self) -> None:
        while len(self.history) > 1 and self._size() > self.budget:
            self.history.pop(0)

    def messages(self) -> list[dict[str, str]]:
        head = [{"role": "system", "content": self.system}] if self.system else []
        return head + list(self.history)

    def complete(self, prompt: str, context: Mapping[str, Any] | None = None) -> str:
        self.history.append({"role": "user", "content": prompt})
        self._evict()
        reply = self.backend.generate(self.messages(), context)
        if not isinstance(reply, str):
            raise ProtocolError(f"backend returned {type(reply).__name__}, not text")
        self.history.append({"role": "assistant", "content": reply})
        self._evict()
        return reply


def complete(session: ChatSession, prompt: str, context: Mapping[str, Any] | None = None) -> str:
    return session.complete(prompt, context)
