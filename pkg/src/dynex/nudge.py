"""Nudges: minimal interventions that put a drifting run back on track.

Automatic nudges come from a dynamic-reflection prompt over recent logs and
change summaries; manual nudges come from the user. Both reduce to the same
two primitives (Relocate, ForceSpeak) and the same audit trail.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .engine import (
    AppliedIntervention,
    EngineError,
    InterventionStep,
    RunState,
    SimulationRun,
)
from .gateway import DEFAULT_LOG_BUDGET, GatewayError, LlmGateway, truncate_logs
from .guardrails import GuardrailSet
from .monitor import ChangeSummary
from .worldconfig import SimConfig

ON_TRACK_REPLY = "Simulation is running smoothly."

NUDGING_MODES = ("off", "auto", "manual")


class NudgeError(ValueError):
    pass


class ProposalError(ValueError):
    """The model proposed something that cannot be turned into steps."""


class NudgeOrigin(str, Enum):
    AUTOMATIC = "automatic"
    MANUAL = "manual"


class NudgeStatus(str, Enum):
    PROPOSED = "proposed"
    APPROVED = "approved"
    APPLIED = "applied"
    REJECTED = "rejected"


@dataclass
class Nudge:
    id: str
    origin: NudgeOrigin
    problem: str
    steps: tuple[InterventionStep, ...]
    status: NudgeStatus
    created_at: int
    applied_events: tuple[int, int] | None = None
    error: str | None = None   # applied-with-errors, or why a proposal died


def nudge_to_dict(nudge: Nudge) -> dict:
    return {
        "id": nudge.id,
        "origin": nudge.origin.value,
        "problem": nudge.problem,
        "steps": [s.to_dict() for s in nudge.steps],
        "status": nudge.status.value,
        "created_at": nudge.created_at,
        "applied_events": list(nudge.applied_events) if nudge.applied_events else None,
        "error": nudge.error,
    }


def nudge_from_dict(data: dict) -> Nudge:
    steps = tuple(
        InterventionStep(kind=s["kind"], agent=s["agent"], target=s["target"])
        for s in data["steps"]
    )
    span = data.get("applied_events")
    return Nudge(
        id=data["id"],
        origin=NudgeOrigin(data["origin"]),
        problem=data.get("problem", ""),
        steps=steps,
        status=NudgeStatus(data["status"]),
        created_at=data.get("created_at", 0),
        applied_events=tuple(span) if span else None,
        error=data.get("error"),
    )


def validate_steps(steps, config: SimConfig) -> list[str]:
    problems = []
    agent_names = set(config.agent_names())
    location_names = set(config.location_names())
    for i, step in enumerate(steps):
        at = f"steps[{i}]"
        if step.kind not in ("relocate", "force_speak"):
            problems.append(f"{at}: unknown kind '{step.kind}'")
            continue
        if step.agent not in agent_names:
            problems.append(f"{at}: unknown agent '{step.agent}'")
        if step.kind == "relocate" and step.target not in location_names:
            problems.append(f"{at}: unknown location '{step.target}'")
        if step.kind == "force_speak" and not step.target.strip():
            problems.append(f"{at}: empty utterance")
    return problems


# ----------------------------------------------------------------- parsing

_PROBLEM_SOLUTION = re.compile(
    r"problem\s*:\s*(.*?)\s*solution\s*:\s*(.*)", re.IGNORECASE | re.DOTALL
)
_STEP_SPLIT = re.compile(r"\s*\d+[.)]\s+")
_FORCE_SPEAK = re.compile(
    r'(?:have|tell|make)\s+(.+?)\s+say\s*[:,]?\s*"(.+?)"', re.IGNORECASE | re.DOTALL
)
_RELOCATE = re.compile(r"(?:move|relocate)\s+(.+?)\s+to\s+(.+)", re.IGNORECASE)


def _resolve_agent(name: str, config: SimConfig) -> str:
    wanted = name.strip().strip(".,").lower()
    for agent in config.agent_names():
        if agent.lower() == wanted:
            return agent
    raise ProposalError(f"unknown agent '{name.strip()}'")


def _resolve_location(name: str, config: SimConfig) -> str:
    cleaned = name.strip().strip(".,")
    candidates = {cleaned.lower()}
    if cleaned.lower().startswith("the "):
        candidates.add(cleaned[4:].lower())
    for location in config.location_names():
        if location.lower() in candidates:
            return location
    raise ProposalError(f"unknown location '{cleaned}'")


def parse_proposal(reply: str, config: SimConfig) -> tuple[str, tuple[InterventionStep, ...]]:
    """Turn a reflection reply into (problem, steps).

    Expected shape: 'Problem: ... Solution: 1. Move X to LOC 2. Have Y say
    "..."'. Step targets must resolve against the config or the whole
    proposal is rejected.
    """
    text = reply.strip()
    match = _PROBLEM_SOLUTION.search(text)
    if match:
        problem, solution = match.group(1).strip(), match.group(2)
    else:
        problem, solution = "", text
    parts = [p.strip() for p in _STEP_SPLIT.split(solution) if p.strip()]
    steps: list[InterventionStep] = []
    for part in parts:
        speak = _FORCE_SPEAK.search(part)
        if speak:
            agent = _resolve_agent(speak.group(1), config)
            steps.append(InterventionStep.force_speak(agent, speak.group(2).strip()))
            continue
        relocate = _RELOCATE.search(part)
        if relocate:
            agent = _resolve_agent(relocate.group(1), config)
            location = _resolve_location(relocate.group(2), config)
            steps.append(InterventionStep.relocate(agent, location))
            continue
        raise ProposalError(f"unparseable step: {part[:80]!r}")
    if not steps:
        raise ProposalError("proposal contained no steps")
    return problem, tuple(steps)


def _render_changes(changes) -> str:
    if not changes:
        return "(none)"
    lines = []
    for c in changes[-5:]:
        lines.append(json.dumps(
            {"at": c.at, "where": c.where, "what": c.what, "change": c.change},
            ensure_ascii=False,
        ))
    return "\n".join(lines)


def _numbered(items) -> str:
    if not items:
        return "(none)"
    return "\n".join(f"{i + 1}. {text}" for i, text in enumerate(items))


def reflect_and_propose(
    run: SimulationRun,
    guardrails: GuardrailSet,
    change_summaries: list[ChangeSummary],
    gateway: LlmGateway,
    simulation_idea: str = "",
    budget: int = DEFAULT_LOG_BUDGET,
) -> tuple[str, tuple[InterventionStep, ...]] | None:
    """One dynamic-reflection pass. None means the run is on track.

    Raises ProposalError on an unusable proposal and GatewayError on
    transport failure; the caller records those as reflection misses.
    """
    slots = {
        "simulation_idea": simulation_idea or run.config.world_name,
        "milestones": _numbered([m.description for m in guardrails.milestones]),
        "failures": _numbered(guardrails.failure_conditions),
        "locations": ", ".join(run.config.location_names()),
        "agents": ", ".join(run.config.agent_names()),
        "logs": truncate_logs(run.events, budget),
        "change_logs": _render_changes(change_summaries),
    }
    reply = gateway.complete("nudge_reflection", slots)
    if reply.strip() == ON_TRACK_REPLY:
        return None
    return parse_proposal(reply, run.config)


# ------------------------------------------------------------ state machine


def approve(nudge: Nudge) -> Nudge:
    if nudge.status is not NudgeStatus.PROPOSED:
        raise NudgeError(f"cannot approve a {nudge.status.value} nudge")
    nudge.status = NudgeStatus.APPROVED
    return nudge


def reject(nudge: Nudge) -> Nudge:
    if nudge.status is not NudgeStatus.PROPOSED:
        raise NudgeError(f"cannot reject a {nudge.status.value} nudge")
    nudge.status = NudgeStatus.REJECTED
    return nudge


def apply_nudge(run: SimulationRun, nudge: Nudge) -> Nudge:
    """Apply an Approved nudge immediately. Call only at a tick boundary.

    An invalid step aborts the remaining steps; the nudge still transitions
    to Applied, with the error recorded.
    """
    if nudge.status is not NudgeStatus.APPROVED:
        raise NudgeError(f"cannot apply a {nudge.status.value} nudge")
    if run.state is not RunState.RUNNING:
        raise NudgeError(f"run is {run.state.value}")
    first = last = None
    error = None
    for i, step in enumerate(nudge.steps):
        try:
            event = run.apply_intervention(step, nudge.id)
        except EngineError as exc:
            error = f"step {i + 1}: {exc}"
            break
        first = first if first is not None else event.seq
        last = event.seq
    nudge.status = NudgeStatus.APPLIED
    nudge.applied_events = (first, last) if first is not None else None
    nudge.error = error
    return nudge


class NudgeController:
    """Owns one run's nudges: proposals, approvals, queueing, settlement.

    Approval queues the steps into the engine; they land at the start of the
    next tick and settle() records the outcome from the tick report. Nudge
    ids are run-local (n1, n2, ...) so event logs stay comparable across
    runs; the service namespaces them per run.
    """

    def __init__(self, run: SimulationRun, guardrails: GuardrailSet,
                 gateway: LlmGateway, mode: str = "off",
                 simulation_idea: str = "", budget: int = DEFAULT_LOG_BUDGET):
        if mode not in NUDGING_MODES:
            raise NudgeError(f"nudging mode must be one of {NUDGING_MODES}")
        self.run = run
        self.guardrails = guardrails
        self.gateway = gateway
        self.mode = mode
        self.simulation_idea = simulation_idea
        self.budget = budget
        self.nudges: list[Nudge] = []
        self.misses: list[dict] = []   # {"at": tick, "reason": ...}

    def _new_id(self) -> str:
        return f"n{len(self.nudges) + 1}"

    def get(self, nudge_id: str) -> Nudge:
        for nudge in self.nudges:
            if nudge.id == nudge_id:
                return nudge
        raise NudgeError(f"unknown nudge '{nudge_id}'")

    def pending(self) -> Nudge | None:
        for nudge in self.nudges:
            if nudge.status is NudgeStatus.PROPOSED:
                return nudge
        return None

    def reflect(self, change_summaries: list[ChangeSummary]) -> Nudge | None:
        """Run automatic reflection once; returns the new proposal, if any."""
        if self.mode == "off":
            return None
        try:
            outcome = reflect_and_propose(
                self.run, self.guardrails, change_summaries, self.gateway,
                self.simulation_idea, self.budget,
            )
        except ProposalError as exc:
            self.misses.append({"at": self.run.tick, "reason": str(exc)})
            return None
        except GatewayError as exc:
            self.misses.append({"at": self.run.tick, "reason": f"gateway: {exc}"})
            return None
        if outcome is None:
            return None
        problem, steps = outcome
        for old in self.nudges:
            if old.status is NudgeStatus.PROPOSED:
                old.status = NudgeStatus.REJECTED
                old.error = "superseded by a newer proposal"
        nudge = Nudge(
            id=self._new_id(),
            origin=NudgeOrigin.AUTOMATIC,
            problem=problem,
            steps=steps,
            status=NudgeStatus.PROPOSED,
            created_at=self.run.tick,
        )
        self.nudges.append(nudge)
        if self.mode == "auto":
            self.approve(nudge.id)
        return nudge

    def approve(self, nudge_id: str) -> Nudge:
        nudge = approve(self.get(nudge_id))
        self.run.queue_intervention(nudge.id, nudge.steps)
        return nudge

    def reject(self, nudge_id: str) -> Nudge:
        return reject(self.get(nudge_id))

    def manual(self, steps, note: str = "") -> Nudge:
        """Create and queue an already-Approved manual nudge."""
        steps = tuple(steps)
        if not steps:
            raise NudgeError("a nudge needs at least one step")
        problems = validate_steps(steps, self.run.config)
        if problems:
            raise NudgeError("; ".join(problems))
        nudge = Nudge(
            id=self._new_id(),
            origin=NudgeOrigin.MANUAL,
            problem=note,
            steps=steps,
            status=NudgeStatus.APPROVED,
            created_at=self.run.tick,
        )
        self.nudges.append(nudge)
        self.run.queue_intervention(nudge.id, nudge.steps)
        return nudge

    def settle(self, applied: list[AppliedIntervention]) -> list[Nudge]:
        """Mark queued nudges Applied using a tick report's drain results."""
        settled = []
        for item in applied:
            if item.nudge_id is None:
                continue
            nudge = self.get(item.nudge_id)
            if nudge.status is not NudgeStatus.APPROVED:
                continue
            nudge.status = NudgeStatus.APPLIED
            nudge.applied_events = item.span
            nudge.error = item.error
            settled.append(nudge)
        return settled
