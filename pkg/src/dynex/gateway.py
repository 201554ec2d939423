"""LLM gateway: fixed prompt catalog, shaped parsing, auditing, truncation.

All model traffic flows through one of the catalog templates. The catalog is
closed: orchestration code cannot invent prompts ad hoc, which keeps every
call auditable and replayable. A scripted gateway implementation answers from
reply tables for deterministic runs.
"""
from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Callable, Protocol, Sequence

import httpx

from .engine import Event, truncation_suffix

logger = logging.getLogger(__name__)

ENV_BASE_URL = "DYNEX_LLM_BASE_URL"
ENV_MODEL = "DYNEX_LLM_MODEL"
ENV_API_KEY = "DYNEX_LLM_API_KEY"

MAX_SHAPE_RETRIES = 2
DEFAULT_LOG_BUDGET = 4000  # tokens of rendered log lines offered to a prompt


class GatewayError(RuntimeError):
    pass


class ShapeError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class Shape(str, Enum):
    FREE_TEXT = "free_text"
    JSON_OBJECT = "json_object"
    JSON_LIST = "json_list"
    STATUS_LINE = "status_line"


TEMPLATE_SHAPES: dict[str, Shape] = {
    "matrix_cell": Shape.FREE_TEXT,
    "config_compile": Shape.JSON_OBJECT,
    "status_update": Shape.STATUS_LINE,
    "change_summary": Shape.JSON_OBJECT,
    "dynamic_summary": Shape.JSON_OBJECT,
    "nudge_reflection": Shape.FREE_TEXT,
    "holistic_reflection": Shape.JSON_LIST,
    "dynamic_list_entries": Shape.JSON_LIST,
    "config_update": Shape.JSON_OBJECT,
    "config_checker": Shape.JSON_OBJECT,
    "stop_condition_check": Shape.FREE_TEXT,
}


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    expected_shape: Shape

    def slot_names(self) -> set[str]:
        return set(_SLOT_RE.findall(self.body))


_SLOT_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


@lru_cache(maxsize=1)
def template_catalog() -> dict[str, PromptTemplate]:
    """Load the closed template set from package data."""
    catalog: dict[str, PromptTemplate] = {}
    root = resources.files("dynex").joinpath("prompts")
    for template_id, shape in TEMPLATE_SHAPES.items():
        body = root.joinpath(f"{template_id}.txt").read_text(encoding="utf-8")
        catalog[template_id] = PromptTemplate(id=template_id, body=body, expected_shape=shape)
    return catalog


def render_template(template_id: str, slots: dict[str, str]) -> str:
    """Substitute {slot} markers. Every marker in the body must be provided."""
    catalog = template_catalog()
    if template_id not in catalog:
        raise GatewayError(f"unknown template '{template_id}'")
    template = catalog[template_id]
    needed = template.slot_names()
    missing = needed - set(slots)
    if missing:
        raise GatewayError(f"template '{template_id}' missing slots: {sorted(missing)}")
    rendered = template.body
    for name in needed:
        rendered = rendered.replace("{" + name + "}", str(slots[name]))
    return rendered


# -------------------------------------------------------------- tokenizing


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...


class ApproxTokenizer:
    """Length-based token estimate: about one token per 4 characters."""

    def __init__(self, chars_per_token: int = 4):
        self.chars_per_token = chars_per_token

    def count(self, text: str) -> int:
        if not text:
            return 0
        return math.ceil(len(text) / self.chars_per_token)


DEFAULT_TOKENIZER = ApproxTokenizer()


def truncate_logs(events: Sequence[Event], budget: int,
                  tokenizer: Tokenizer | None = None) -> str:
    """Render the longest suffix of events that fits the token budget."""
    tok = tokenizer or DEFAULT_TOKENIZER
    return truncation_suffix(events, tok.count, budget)


# ------------------------------------------------------------------ parsing

_GREEN = ("\U0001f7e2", "green circle")
_YELLOW = ("\U0001f7e1", "yellow circle")
_RED = ("\U0001f534", "red circle")


def _cap_words(text: str, limit: int) -> str:
    words = text.split()
    return " ".join(words[:limit])


def parse_status_line(text: str) -> tuple[str, str]:
    """Extract (level, reason) from a status reply. Level is green|yellow|red."""
    line = text.strip().splitlines()[0] if text.strip() else ""
    lowered = line.lower()
    for level, markers in (("green", _GREEN), ("yellow", _YELLOW), ("red", _RED)):
        for marker in markers:
            idx = lowered.find(marker)
            if idx != -1:
                reason = (line[:idx] + line[idx + len(marker):]).strip(" .,:;-")
                return level, _cap_words(reason, 20)
    raise ShapeError(f"no status marker in reply: {line!r}", text)


def parse_shaped(text: str, shape: Shape, required_fields: Sequence[str] | None = None):
    """Strictly parse gateway output according to the expected shape.

    JSON shapes must be the entire reply: a prose preamble is an error, not
    something to be salvaged.
    """
    if shape is Shape.FREE_TEXT:
        return text.strip()
    if shape is Shape.STATUS_LINE:
        return parse_status_line(text)
    stripped = text.strip()
    try:
        data = json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise ShapeError(f"not valid JSON: {exc}", text) from exc
    if shape is Shape.JSON_OBJECT:
        if not isinstance(data, dict):
            raise ShapeError(f"expected a JSON object, got {type(data).__name__}", text)
        for name in required_fields or ():
            if name not in data:
                raise ShapeError(f"missing required field '{name}'", text)
        return data
    if shape is Shape.JSON_LIST:
        if not isinstance(data, list):
            raise ShapeError(f"expected a JSON list, got {type(data).__name__}", text)
        if required_fields:
            for i, item in enumerate(data):
                if not isinstance(item, dict):
                    raise ShapeError(f"item {i} is not an object", text)
                for name in required_fields:
                    if name not in item:
                        raise ShapeError(f"item {i} missing field '{name}'", text)
        return data
    raise ShapeError(f"unsupported shape {shape}", text)


_CORRECTIVE = {
    Shape.JSON_OBJECT: "Your previous reply could not be parsed. "
                       "Reply with a single valid JSON object and nothing else.",
    Shape.JSON_LIST: "Your previous reply could not be parsed. "
                     "Reply with a single valid JSON list and nothing else.",
    Shape.STATUS_LINE: "Your previous reply could not be parsed. Reply with one line: "
                       "a green circle or yellow circle or red circle emoji followed by "
                       "a reason of at most 20 words.",
    Shape.FREE_TEXT: "Reply in plain text.",
}


# -------------------------------------------------------------------- audit


@dataclass
class AuditRecord:
    index: int
    template_id: str
    prompt: str
    output: str | None = None
    error: str | None = None


class LlmGateway:
    """Base gateway: rendering, auditing, and the dispatch seam."""

    def __init__(self, audit_path: str | None = None):
        self.audit: list[AuditRecord] = []
        self.audit_path = audit_path

    def _persist(self, payload: dict) -> None:
        if self.audit_path is None:
            return
        with open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, ensure_ascii=False) + "\n")
            fh.flush()

    def _dispatch(self, prompt: str, budget: int | None) -> str:
        raise NotImplementedError

    def complete(self, template_id: str, slots: dict[str, str],
                 budget: int | None = None, corrective: str | None = None) -> str:
        prompt = render_template(template_id, slots)
        if corrective:
            prompt = f"{prompt}\n\n{corrective}"
        record = AuditRecord(index=len(self.audit), template_id=template_id, prompt=prompt)
        self.audit.append(record)
        # The rendered prompt is persisted before dispatch so a hung or failed
        # call still leaves a diagnosable trace.
        self._persist({"index": record.index, "template_id": template_id,
                       "prompt": prompt, "output": None})
        try:
            record.output = self._dispatch(prompt, budget)
        except Exception as exc:
            record.error = str(exc)
            self._persist({"index": record.index, "template_id": template_id,
                           "error": record.error})
            raise
        self._persist({"index": record.index, "template_id": template_id,
                       "output": record.output})
        return record.output

    def raw_complete(self, prompt: str, budget: int | None = None) -> str:
        """Escape hatch for cognition backends; audited like catalog calls."""
        record = AuditRecord(index=len(self.audit), template_id="(raw)", prompt=prompt)
        self.audit.append(record)
        self._persist({"index": record.index, "template_id": "(raw)",
                       "prompt": prompt, "output": None})
        record.output = self._dispatch(prompt, budget)
        self._persist({"index": record.index, "template_id": "(raw)",
                       "output": record.output})
        return record.output


def complete_shaped(gateway: LlmGateway, template_id: str, slots: dict[str, str],
                    required_fields: Sequence[str] | None = None,
                    budget: int | None = None):
    """complete() + parse_shaped() with up to two corrective retries."""
    shape = TEMPLATE_SHAPES[template_id]
    corrective = None
    last: ShapeError | None = None
    for _ in range(1 + MAX_SHAPE_RETRIES):
        text = gateway.complete(template_id, slots, budget=budget, corrective=corrective)
        try:
            return parse_shaped(text, shape, required_fields)
        except ShapeError as exc:
            last = exc
            corrective = _CORRECTIVE[shape]
            logger.info("shape mismatch from %s, retrying: %s", template_id, exc)
    assert last is not None
    raise last


# --------------------------------------------------------------- providers


class LiveGateway(LlmGateway):
    """OpenAI-compatible chat-completions provider configured from the environment."""

    def __init__(self, base_url: str | None = None, model: str | None = None,
                 api_key: str | None = None, audit_path: str | None = None,
                 timeout: float = 60.0):
        super().__init__(audit_path=audit_path)
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout
        if not self.base_url or not self.model:
            raise GatewayError(
                f"live gateway needs {ENV_BASE_URL} and {ENV_MODEL} set")

    def _dispatch(self, prompt: str, budget: int | None) -> str:
        payload: dict = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        if budget is not None:
            payload["max_tokens"] = budget
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = httpx.post(
                f"{self.base_url}/chat/completions",
                json=payload, headers=headers, timeout=self.timeout,
            )
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"live completion failed: {exc}") from exc


@dataclass
class GatewayRule:
    """Conditional scripted reply: fires when the rendered prompt contains a marker."""
    template_id: str
    reply: str
    when_contains: str | None = None
    once: bool = True
    used: bool = field(default=False, compare=False)


# Replies that keep a pipeline moving when a scripted run has nothing special
# to say for a template.
SHAPE_SAFE_DEFAULTS: dict[str, str] = {
    "matrix_cell": "[]",
    "config_compile": "{}",
    "status_update": "\U0001f7e2 Simulation progressing normally",
    "change_summary": '{"where": {}, "what": {}, "change": ""}',
    "dynamic_summary": '{"milestone_id": 0, "milestone": "", "dynamic": ""}',
    "nudge_reflection": "Simulation is running smoothly.",
    "holistic_reflection": "[]",
    "dynamic_list_entries": "[]",
    "config_update": "{}",
    "config_checker": "{}",
    "stop_condition_check": "NOT MET",
}


class ScriptedGateway(LlmGateway):
    """Deterministic gateway answering from rules and reply tables.

    `replies` maps template ids to a fixed string, a list consumed in order
    (the last entry repeats), or a callable of (slots, prompt). Rules are
    checked first, in order.
    """

    def __init__(self, replies: dict[str, object] | None = None,
                 rules: Sequence[GatewayRule] | None = None,
                 audit_path: str | None = None):
        super().__init__(audit_path=audit_path)
        self.replies = dict(replies or {})
        self.rules = list(rules or [])
        self._cursors: dict[str, int] = {}
        self._current: tuple[str, dict] | None = None

    def complete(self, template_id: str, slots: dict[str, str],
                 budget: int | None = None, corrective: str | None = None) -> str:
        self._current = (template_id, slots)
        try:
            return super().complete(template_id, slots, budget=budget, corrective=corrective)
        finally:
            self._current = None

    def _dispatch(self, prompt: str, budget: int | None) -> str:
        template_id, slots = self._current if self._current else ("(raw)", {})
        for rule in self.rules:
            if rule.template_id != template_id:
                continue
            if rule.once and rule.used:
                continue
            if rule.when_contains is None or rule.when_contains in prompt:
                rule.used = True
                return rule.reply
        source = self.replies.get(template_id)
        if callable(source):
            return str(source(slots, prompt))
        if isinstance(source, str):
            return source
        if isinstance(source, list):
            cursor = self._cursors.get(template_id, 0)
            self._cursors[template_id] = cursor + 1
            return str(source[min(cursor, len(source) - 1)])
        if template_id in SHAPE_SAFE_DEFAULTS:
            return SHAPE_SAFE_DEFAULTS[template_id]
        raise GatewayError(f"scripted gateway has no reply for '{template_id}'")
