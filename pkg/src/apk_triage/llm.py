"""Chat-completion gateway: prompt templates, backends and finding parsing.

Two backends share one interface. ``LiveBackend`` talks to any
OpenAI-compatible ``POST /v1/chat/completions`` endpoint; ``ScriptedBackend``
replays canned responses keyed by agent and prompt digest, so whole pipeline
runs are reproducible offline.
"""

import json
import logging
import math
import re
import string
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol

import httpx
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from .errors import (
    AuthError,
    CompletionTimeout,
    GatewayError,
    MissingSlot,
    RateLimited,
    ScriptMiss,
    TableError,
    TransportError,
    Unparseable,
)
from .models import AgentFinding, AgentId, FraudCategory, TaskKind
from .utils import (
    DEFAULT_ENDPOINT,
    DEFAULT_MAX_OUTPUT_TOKENS,
    DEFAULT_MODEL,
    DEFAULT_TEMPERATURE,
    DEFAULT_TIMEOUT,
    PathLike,
    sha256_hex,
)

logger = logging.getLogger(__name__)

COMPLETIONS_PATH = "/v1/chat/completions"
MAX_ATTEMPTS = 3
BACKOFF_BASE = 1.0  # seconds
BACKOFF_FACTOR = 2.0

WILDCARD_DIGEST = "*"

# ====================
# Prompt templates
# ====================


@dataclass(frozen=True)
class PromptTemplate:
    """Role-playing prompt: preamble, task, allowed tools, then the evidence."""

    role_preamble: str
    task_description: str
    allowed_tools: tuple[str, ...] = ()
    context_slot: Optional[str] = "context"


def _substitute(text: str, slots: Mapping[str, str]) -> str:
    try:
        return string.Template(text).substitute(slots)
    except KeyError as e:
        raise MissingSlot(str(e.args[0])) from None
    except ValueError as e:
        raise GatewayError(f"invalid placeholder in template: {e}") from e


def render_prompt(template: PromptTemplate, slots: Mapping[str, str]) -> str:
    """Render a template into prompt text.

    Sections appear in a fixed order: role preamble, task description, the
    allowed tools list and finally the context slot.

    Args:
        template: The prompt template
        slots: Values for ``$name`` placeholders and the context slot

    Returns:
        The rendered prompt

    Raises:
        MissingSlot: If a referenced slot has no value
    """
    sections = [
        _substitute(template.role_preamble, slots),
        _substitute(template.task_description, slots),
    ]
    if template.allowed_tools:
        sections.append("Allowed tools: " + ", ".join(template.allowed_tools))
    if template.context_slot is not None:
        if template.context_slot not in slots:
            raise MissingSlot(template.context_slot)
        sections.append("Context:\n" + slots[template.context_slot])
    return "\n\n".join(section for section in sections if section)


# ====================
# Exchanges and backends
# ====================


@dataclass(frozen=True)
class ChatExchange:
    """One request/response pair with its generation parameters."""

    system_text: str
    user_text: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    model: str = DEFAULT_MODEL
    agent_id: Optional[AgentId] = None
    response_text: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.system_text or not self.user_text:
            raise ValueError("system_text and user_text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValueError(f"max_output_tokens must be positive, got {self.max_output_tokens}")

    def with_response(self, text: str) -> "ChatExchange":
        return replace(self, response_text=text)

    def request_body(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system_text},
                {"role": "user", "content": self.user_text},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }


class Backend(Protocol):
    def complete(self, exchange: ChatExchange) -> ChatExchange: ...


class _RetryableStatus(Exception):
    def __init__(self, status_code: int, body: str):
        super().__init__(f"HTTP {status_code}: {body[:200]}")
        self.status_code = status_code


class LiveBackend:
    """OpenAI-compatible HTTP backend with exponential backoff on 429/5xx.

    The underlying ``httpx.Client`` is thread-safe, so one backend may serve
    every agent of an iteration concurrently.
    """

    def __init__(
        self,
        endpoint_url: str = DEFAULT_ENDPOINT,
        api_key: str = "",
        timeout: float = DEFAULT_TIMEOUT,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        max_attempts: int = MAX_ATTEMPTS,
    ):
        self.url = endpoint_url.rstrip("/") + COMPLETIONS_PATH
        self.max_attempts = max_attempts
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post_once(self, body: dict[str, Any]) -> str:
        try:
            response = self._client.post(self.url, json=body)
        except httpx.TimeoutException as e:
            raise CompletionTimeout(f"completion timed out: {e}") from e
        except httpx.HTTPError as e:
            raise TransportError(f"request to {self.url} failed: {e}") from e

        status = response.status_code
        if status in (401, 403):
            raise AuthError(f"endpoint rejected the credential (HTTP {status})")
        if status == 429 or status >= 500:
            raise _RetryableStatus(status, response.text)
        if status >= 400:
            raise TransportError(f"HTTP {status}: {response.text[:200]}")

        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f"unusable completion body: {e}") from e
        if not isinstance(content, str):
            raise TransportError("completion content is not text")
        return content

    def complete(self, exchange: ChatExchange) -> ChatExchange:
        """POST the exchange and return it with the first choice's text.

        Raises:
            AuthError: On 401/403, without retrying
            RateLimited: If every attempt answered 429
            CompletionTimeout: If the request exceeded the timeout
            TransportError: On connection failures, other statuses or malformed bodies
        """
        retrying = Retrying(
            stop=stop_after_attempt(self.max_attempts),
            wait=wait_exponential(multiplier=BACKOFF_BASE, exp_base=BACKOFF_FACTOR),
            retry=retry_if_exception_type(_RetryableStatus),
            sleep=self._sleep,
            reraise=True,
            before_sleep=before_sleep_log(logger, logging.WARNING),
        )
        try:
            text = retrying(self._post_once, exchange.request_body())
        except _RetryableStatus as e:
            if e.status_code == 429:
                raise RateLimited(f"still rate limited after {self.max_attempts} attempts") from e
            raise TransportError(f"server error after {self.max_attempts} attempts: {e}") from e
        return exchange.with_response(text)


def script_key(agent_id: AgentId, user_text: str) -> str:
    """Key a scripted response by agent and SHA-256 of the prompt text."""
    return f"{agent_id.value}:{sha256_hex(user_text)}"


@dataclass(frozen=True)
class ScriptedBackend:
    """Replays canned responses; read-only after construction.

    Keys are ``"<agent_id>:<sha256 of user_text>"``. A ``"<agent_id>:*"`` key
    answers any prompt for that agent once the exact key misses.
    """

    table: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: PathLike) -> "ScriptedBackend":
        """Load a JSON object mapping keys to response text.

        Raises:
            TableError: If the file is not a JSON object of strings
        """
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise TableError(f"script file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in data.items()
        ):
            raise TableError(f"script file {path} must map strings to strings")
        return cls(table=dict(data))

    def complete(self, exchange: ChatExchange) -> ChatExchange:
        if exchange.agent_id is None:
            raise ScriptMiss("scripted completions need an agent id")
        key = script_key(exchange.agent_id, exchange.user_text)
        if key in self.table:
            return exchange.with_response(self.table[key])
        wildcard = f"{exchange.agent_id.value}:{WILDCARD_DIGEST}"
        if wildcard in self.table:
            return exchange.with_response(self.table[wildcard])
        raise ScriptMiss(f"no scripted response for {key}")


def complete(backend: Backend, exchange: ChatExchange) -> ChatExchange:
    """Run one exchange through a backend."""
    return backend.complete(exchange)


# ====================
# Output parsing
# ====================


class _SchemaMismatch(Exception):
    pass


def _coerce_risk(value: Any) -> float:
    if isinstance(value, bool):
        raise _SchemaMismatch("risk_score is a boolean")
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise _SchemaMismatch("risk_score is not numeric") from None
    if not isinstance(value, (int, float)):
        raise _SchemaMismatch("risk_score is not a number")
    try:
        value = float(value)
    except OverflowError:
        raise _SchemaMismatch("risk_score overflows a float") from None
    if not math.isfinite(value):
        raise _SchemaMismatch("risk_score is not finite")
    return min(1.0, max(0.0, value))


def _coerce_evidence(value: Any) -> tuple[tuple[str, str], ...]:
    if not isinstance(value, list):
        return ()
    items = []
    for entry in value:
        if isinstance(entry, (list, tuple)) and len(entry) >= 2:
            kind, detail = str(entry[0]).strip(), str(entry[1]).strip()
        elif isinstance(entry, dict):
            kind = str(entry.get("kind", "")).strip()
            detail = str(entry.get("detail", "")).strip()
        elif isinstance(entry, str):
            kind, detail = "note", entry.strip()
        else:
            continue
        if kind and detail:
            items.append((kind, detail))
    return tuple(items)


def _coerce_finding(agent_id: AgentId, data: dict, raw: str) -> AgentFinding:
    risk = _coerce_risk(data["risk_score"])

    hint = data.get("category_hint")
    category = None
    if isinstance(hint, str):
        try:
            category = FraudCategory(hint.strip().lower())
        except ValueError:
            category = None

    needs: list[TaskKind] = []
    dropped = 0
    raw_needs = data.get("needs", [])
    if isinstance(raw_needs, list):
        for entry in raw_needs:
            kind = TaskKind.lookup(entry) if isinstance(entry, str) else None
            if kind is None:
                dropped += 1
            elif kind not in needs:
                needs.append(kind)
    if dropped:
        logger.warning("agent=%s dropped_needs=%d", agent_id.value, dropped)

    return AgentFinding(
        agent_id=agent_id,
        risk_score=risk,
        category_hint=category,
        evidence=_coerce_evidence(data.get("evidence", [])),
        needs=tuple(needs),
        raw_response=raw,
        dropped_needs=dropped,
    )


def parse_agent_output(agent_id: AgentId, response_text: str) -> AgentFinding:
    """Extract the first JSON object carrying a ``risk_score`` from response text.

    The score is clamped into [0, 1]; unknown ``needs`` entries are dropped and
    counted.

    Args:
        agent_id: The agent that produced the response
        response_text: Free-form model output

    Returns:
        The parsed finding

    Raises:
        Unparseable: If no JSON object in the text matches the finding schema
    """
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\{", response_text):
        try:
            candidate, _ = decoder.raw_decode(response_text, match.start())
        except (ValueError, RecursionError):
            continue
        if not isinstance(candidate, dict) or "risk_score" not in candidate:
            continue
        try:
            return _coerce_finding(agent_id, candidate, response_text)
        except _SchemaMismatch:
            continue
    raise Unparseable(f"no finding object in {agent_id.value} response")


# ====================
# Gateway facade
# ====================


class Gateway:
    """Binds a backend to one model and its generation parameters."""

    def __init__(
        self,
        backend: Backend,
        system_text: str,
        model: str = DEFAULT_MODEL,
        temperature: float = DEFAULT_TEMPERATURE,
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    ):
        self.backend = backend
        self.system_text = system_text
        self.model = model
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens

    def ask(self, agent_id: AgentId, template: PromptTemplate, slots: Mapping[str, str]) -> str:
        """Render the prompt, complete it and return the response text."""
        exchange = ChatExchange(
            system_text=self.system_text,
            user_text=render_prompt(template, slots),
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
            model=self.model,
            agent_id=agent_id,
        )
        result = complete(self.backend, exchange)
        logger.debug("agent=%s response_chars=%d", agent_id.value, len(result.response_text or ""))
        return result.response_text or ""

    def consult(
        self, agent_id: AgentId, template: PromptTemplate, slots: Mapping[str, str]
    ) -> AgentFinding:
        """Ask an agent's prompt and parse its finding.

        An unparseable response becomes an abstention; backend errors propagate.
        """
        text = self.ask(agent_id, template, slots)
        try:
            return parse_agent_output(agent_id, text)
        except Unparseable:
            logger.warning("agent=%s response unparseable, abstaining", agent_id.value)
            return AgentFinding.abstention(agent_id, "unparseable", raw_response=text)
