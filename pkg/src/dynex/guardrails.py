"""Milestones, stop condition, and failure conditions for a simulation run."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .engine import Event, describe_event

MILESTONE_WORD_LIMIT = 10
DEFAULT_MILESTONE_COUNT = 5


class GuardrailError(ValueError):
    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Milestone:
    """A chronological checkpoint. `criteria` elaborates how to judge it.

    `predicate` is an optional machine-checkable judge (see eval_log_predicate);
    when absent the milestone is judged by the language model instead.
    """

    id: int
    description: str
    criteria: str = ""
    predicate: dict | None = None


@dataclass(frozen=True)
class GuardrailSet:
    milestones: tuple[Milestone, ...]
    stop_condition: str
    failure_conditions: tuple[str, ...] = ()
    # parallel to failure_conditions; None entries are judged by the model
    failure_predicates: tuple[dict | None, ...] = ()

    def __post_init__(self):
        if not self.failure_predicates and self.failure_conditions:
            object.__setattr__(
                self, "failure_predicates", (None,) * len(self.failure_conditions)
            )
        if len(self.failure_predicates) != len(self.failure_conditions):
            raise GuardrailError(
                ["failure_predicates must match failure_conditions in length"]
            )


def _milestone_problems(index: int, m: Milestone) -> list[str]:
    at = f"milestones[{index}]"
    problems = []
    if m.id != index + 1:
        problems.append(f"{at}.id must be {index + 1}, got {m.id}")
    if not m.description.strip():
        problems.append(f"{at}.description must be non-empty")
    elif len(m.description.split()) > MILESTONE_WORD_LIMIT:
        problems.append(
            f"{at}.description exceeds {MILESTONE_WORD_LIMIT} words"
        )
    return problems


def check_guardrails(g: GuardrailSet) -> list[str]:
    """All invariant violations in `g`, as human-readable strings."""
    problems = []
    for i, m in enumerate(g.milestones):
        problems.extend(_milestone_problems(i, m))
    if not g.stop_condition.strip():
        problems.append("stop_condition must be non-empty")
    for i, text in enumerate(g.failure_conditions):
        if not text.strip():
            problems.append(f"failure_conditions[{i}] must be non-empty")
    return problems


def normalize_milestones(
    milestones: Sequence[Milestone], target: int = DEFAULT_MILESTONE_COUNT
) -> tuple[Milestone, ...]:
    """Trim or pad to exactly `target` milestones, renumbering ids 1..target."""
    kept = list(milestones)[:target]
    while len(kept) < target:
        kept.append(Milestone(id=0, description="Additional progress checkpoint"))
    return tuple(
        Milestone(
            id=i + 1,
            description=m.description,
            criteria=m.criteria,
            predicate=m.predicate,
        )
        for i, m in enumerate(kept)
    )


@dataclass(frozen=True)
class PredicateResult:
    met: bool
    evidence: tuple[int, int] | None = None


def eval_log_predicate(
    pred: dict, events: Sequence[Event], tick: int
) -> PredicateResult:
    """Evaluate a guardrail predicate against the event log at `tick`.

    Supported forms:
      {"contains": text, "count": n, "kind": ..., "agent": ...}
          at least n events whose rendered description contains `text`
          (kind/agent narrow which events are considered); evidence spans
          the first through the nth match.
      {"quiet_ticks": n}   no events at all in the last n ticks
      {"all_of": [...]}    every sub-predicate holds
      {"any_of": [...]}    some sub-predicate holds
    """
    if not isinstance(pred, dict) or not pred:
        raise GuardrailError(["predicate must be a non-empty object"])
    if "contains" in pred:
        needle = pred["contains"]
        count = int(pred.get("count", 1))
        if count < 1:
            raise GuardrailError(["contains: count must be >= 1"])
        matches: list[Event] = []
        for e in events:
            if "kind" in pred and e.kind != pred["kind"]:
                continue
            if "agent" in pred and e.agent != pred["agent"]:
                continue
            if needle in describe_event(e):
                matches.append(e)
                if len(matches) == count:
                    break
        if len(matches) < count:
            return PredicateResult(False)
        return PredicateResult(True, (matches[0].seq, matches[-1].seq))
    if "quiet_ticks" in pred:
        span = int(pred["quiet_ticks"])
        if span < 1:
            raise GuardrailError(["quiet_ticks must be >= 1"])
        if tick < span:
            return PredicateResult(False)
        if any(e.sim_time > tick - span for e in events):
            return PredicateResult(False)
        if not events:
            return PredicateResult(True, None)
        last = events[-1].seq
        return PredicateResult(True, (last, last))
    if "all_of" in pred:
        subs = pred["all_of"]
        if not subs:
            raise GuardrailError(["all_of: needs at least one predicate"])
        results = [eval_log_predicate(p, events, tick) for p in subs]
        if not all(r.met for r in results):
            return PredicateResult(False)
        spans = [r.evidence for r in results if r.evidence is not None]
        if not spans:
            return PredicateResult(True, None)
        return PredicateResult(
            True, (min(s[0] for s in spans), max(s[1] for s in spans))
        )
    if "any_of" in pred:
        subs = pred["any_of"]
        if not subs:
            raise GuardrailError(["any_of: needs at least one predicate"])
        for p in subs:
            result = eval_log_predicate(p, events, tick)
            if result.met:
                return result
        return PredicateResult(False)
    raise GuardrailError(["unknown predicate form: " + ", ".join(sorted(pred))])


def guardrails_from_dict(data: dict) -> GuardrailSet:
    if not isinstance(data, dict):
        raise GuardrailError(["guardrail document must be an object"])
    problems = []
    allowed = {
        "milestones",
        "stop_condition",
        "failure_conditions",
        "failure_predicates",
    }
    for key in data:
        if key not in allowed:
            problems.append(f"unknown field: {key}")
    milestones = []
    for i, raw in enumerate(data.get("milestones", [])):
        if not isinstance(raw, dict):
            problems.append(f"milestones[{i}] must be an object")
            continue
        for key in raw:
            if key not in ("id", "description", "criteria", "predicate"):
                problems.append(f"milestones[{i}]: unknown field {key}")
        milestones.append(
            Milestone(
                id=raw.get("id", i + 1),
                description=raw.get("description", ""),
                criteria=raw.get("criteria", ""),
                predicate=raw.get("predicate"),
            )
        )
    stop_condition = data.get("stop_condition", "")
    if not isinstance(stop_condition, str):
        problems.append("stop_condition must be a string")
        stop_condition = ""
    failures = tuple(data.get("failure_conditions", []))
    for i, text in enumerate(failures):
        if not isinstance(text, str):
            problems.append(f"failure_conditions[{i}] must be a string")
    predicates = tuple(data.get("failure_predicates", ())) or (None,) * len(failures)
    if len(predicates) != len(failures):
        problems.append("failure_predicates must match failure_conditions in length")
        predicates = (None,) * len(failures)
    if problems:
        raise GuardrailError(problems)
    g = GuardrailSet(
        milestones=tuple(milestones),
        stop_condition=stop_condition,
        failure_conditions=tuple(str(t) for t in failures),
        failure_predicates=predicates,
    )
    problems = check_guardrails(g)
    if problems:
        raise GuardrailError(problems)
    return g


def guardrails_to_dict(g: GuardrailSet) -> dict:
    milestones = []
    for m in g.milestones:
        entry = {"id": m.id, "description": m.description, "criteria": m.criteria}
        if m.predicate is not None:
            entry["predicate"] = m.predicate
        milestones.append(entry)
    out = {
        "milestones": milestones,
        "stop_condition": g.stop_condition,
        "failure_conditions": list(g.failure_conditions),
    }
    if any(p is not None for p in g.failure_predicates):
        out["failure_predicates"] = list(g.failure_predicates)
    return out


def load_guardrails(path: str | Path) -> GuardrailSet:
    with open(path, encoding="utf-8") as fh:
        return guardrails_from_dict(json.load(fh))


def save_guardrails(g: GuardrailSet, path: str | Path) -> None:
    text = json.dumps(guardrails_to_dict(g), indent=2, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")
