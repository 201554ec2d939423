"""Run monitoring: status lights, summaries, milestone and failure tracking.

The monitor only reads engine state. It is driven once per tick and does its
cadenced work on status periods (default every 3 ticks, 30 s at a nominal
10 s tick) and summary periods (every 6 ticks, 60 s).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .engine import SimulationRun
from .gateway import (
    DEFAULT_LOG_BUDGET,
    GatewayError,
    LlmGateway,
    ShapeError,
    complete_shaped,
    truncate_logs,
)
from .guardrails import GuardrailSet, Milestone, eval_log_predicate
from .worldconfig import SimConfig

DEFAULT_TARGETS = "Any qualitatively interesting or unexpected social dynamics."

LEVELS = ("green", "yellow", "red")


def _cap_words(text: str, limit: int) -> str:
    words = text.split()
    return " ".join(words[:limit])


def _numbered(items) -> str:
    if not items:
        return "(none)"
    return "\n".join(f"{i + 1}. {text}" for i, text in enumerate(items))


@dataclass(frozen=True)
class StatusUpdate:
    at: int
    level: str                 # green | yellow | red
    reason: str
    trigger: str | None = None  # red must cite one; see status_tick

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"bad status level {self.level!r}")
        if self.level == "red" and not self.trigger:
            raise ValueError("red status requires a cited trigger")


@dataclass(frozen=True)
class ChangeSummary:
    at: int
    milestone_label: str
    where: dict[str, str]
    what: dict[str, str]
    change: str = ""


@dataclass(frozen=True)
class DynamicSummary:
    at: int
    milestone_id: int
    milestone: str
    dynamic: str = ""


@dataclass(frozen=True)
class SummaryGap:
    """A summary cycle that produced nothing parseable."""
    at: int
    kind: str        # change | dynamic
    reason: str = "parse failure"


@dataclass(frozen=True)
class FailureHit:
    index: int
    at: int
    evidence: tuple[int, int] | None
    description: str


@dataclass
class MilestoneTrack:
    milestones: tuple[Milestone, ...]
    # id -> (tick reached, evidence seq range)
    reached: dict[int, tuple[int, tuple[int, int] | None]] = field(default_factory=dict)

    @property
    def frontier(self) -> int:
        """Lowest unreached milestone id; one past the end when all reached."""
        for m in self.milestones:
            if m.id not in self.reached:
                return m.id
        return len(self.milestones) + 1

    def reached_count(self) -> int:
        return len(self.reached)

    def copy(self) -> MilestoneTrack:
        return MilestoneTrack(milestones=self.milestones, reached=dict(self.reached))


def _judge_met(run: SimulationRun, condition: str, subject: str,
               gateway: LlmGateway, budget: int) -> bool:
    """Ask the model whether a natural-language condition holds in the logs."""
    reply = gateway.complete("stop_condition_check", {
        "condition": condition,
        "subject": subject,
        "evidence": truncate_logs(run.events, budget),
    })
    first = reply.strip().upper().split()
    if first[:1] == ["MET"]:
        return True
    if first[:2] == ["NOT", "MET"]:
        return False
    raise ShapeError(f"judge reply was neither MET nor NOT MET: {reply!r}", reply)


def _window_evidence(run: SimulationRun) -> tuple[int, int] | None:
    events = run.events
    if not events:
        return None
    return (events[0].seq, events[-1].seq)


def advance_milestones(run: SimulationRun, track: MilestoneTrack,
                       gateway: LlmGateway | None = None,
                       budget: int = DEFAULT_LOG_BUDGET) -> MilestoneTrack:
    """Advance the frontier while its milestone is satisfied. Never unmarks.

    Predicate-carrying milestones are judged mechanically; the rest ask the
    model. A judge failure leaves the track exactly as passed in.
    """
    work = track.copy()
    while True:
        frontier = work.frontier
        if frontier > len(work.milestones):
            return work
        milestone = work.milestones[frontier - 1]
        if milestone.predicate is not None:
            result = eval_log_predicate(milestone.predicate, run.events, run.tick)
            if not result.met:
                return work
            work.reached[milestone.id] = (run.tick, result.evidence)
            continue
        if gateway is None:
            return work
        condition = milestone.description
        if milestone.criteria:
            condition = f"{milestone.description}: {milestone.criteria}"
        try:
            met = _judge_met(run, condition, "milestone", gateway, budget)
        except (GatewayError, ShapeError):
            return track
        if not met:
            return work
        work.reached[milestone.id] = (run.tick, _window_evidence(run))


def detect_failures(run: SimulationRun, guardrails: GuardrailSet,
                    gateway: LlmGateway | None = None,
                    budget: int = DEFAULT_LOG_BUDGET) -> list[FailureHit]:
    """All failure conditions currently met, with evidence."""
    hits: list[FailureHit] = []
    pairs = zip(guardrails.failure_conditions, guardrails.failure_predicates)
    for index, (description, predicate) in enumerate(pairs):
        if predicate is not None:
            result = eval_log_predicate(predicate, run.events, run.tick)
            if result.met:
                hits.append(FailureHit(index, run.tick, result.evidence, description))
            continue
        if gateway is None:
            continue
        try:
            met = _judge_met(run, description, "failure condition", gateway, budget)
        except (GatewayError, ShapeError):
            return []
        if met:
            hits.append(FailureHit(index, run.tick, _window_evidence(run), description))
    return hits


def status_tick(run: SimulationRun, guardrails: GuardrailSet, gateway: LlmGateway,
                fault_agents: tuple[str, ...] = (),
                failure_hits: tuple[FailureHit, ...] = (),
                warmup_until: int = 0,
                budget: int = DEFAULT_LOG_BUDGET) -> StatusUpdate:
    """One status light. Engine faults and failure hits short-circuit the model."""
    at = run.tick
    if fault_agents:
        agent = fault_agents[0]
        update = StatusUpdate(at, "red", f"cognition backend for {agent} failing repeatedly",
                              trigger=f"engine_fault:{agent}")
    elif failure_hits:
        hit = failure_hits[0]
        update = StatusUpdate(at, "red", _cap_words(hit.description, 20),
                              trigger=f"failure_condition:{hit.index}")
    else:
        slots = {
            "failures": _numbered(guardrails.failure_conditions),
            "logs": truncate_logs(run.events, budget),
        }
        try:
            level, reason = complete_shaped(gateway, "status_update", slots)
        except ShapeError:
            return StatusUpdate(at, "yellow", "monitor parse failure")
        except GatewayError:
            return StatusUpdate(at, "yellow", "monitor backend unavailable")
        trigger = "backend_report" if level == "red" else None
        update = StatusUpdate(at, level, reason, trigger)
    if update.level == "red" and at <= warmup_until:
        # too early to declare the run dead; keep the reason for the record
        update = StatusUpdate(at, "yellow", update.reason, update.trigger)
    return update


def initial_change_summary(config: SimConfig) -> ChangeSummary:
    """Seed 'previous' state: everyone at their starting location."""
    return ChangeSummary(
        at=0,
        milestone_label="",
        where={a.first_name: a.initial_plan.location for a in config.agents},
        what={a.first_name: "" for a in config.agents},
        change="",
    )


_PAIR_SPLIT = re.compile(r"[,\n]")


def _as_agent_map(value) -> dict[str, str]:
    """Accept either a JSON map or the prompt's 'Name - value' line format."""
    if isinstance(value, dict):
        return {str(k): str(v) for k, v in value.items()}
    entries: dict[str, str] = {}
    if isinstance(value, str):
        for part in _PAIR_SPLIT.split(value):
            name, sep, val = part.partition(" - ")
            if sep and name.strip() and val.strip():
                entries[name.strip()] = val.strip()
    return entries


def summarize_changes(run: SimulationRun, config: SimConfig,
                      previous: ChangeSummary, milestone_label: str,
                      gateway: LlmGateway,
                      budget: int = DEFAULT_LOG_BUDGET) -> ChangeSummary | None:
    """Change summary for the current period; None means a recorded gap."""
    slots = {
        "logs": truncate_logs(run.events, budget),
        "previous": json.dumps(
            {"where": previous.where, "what": previous.what, "change": previous.change},
            ensure_ascii=False,
        ),
    }
    try:
        data = complete_shaped(gateway, "change_summary", slots,
                               required_fields=("where", "what", "change"))
    except (ShapeError, GatewayError):
        return None
    parsed_where = _as_agent_map(data["where"])
    parsed_what = _as_agent_map(data["what"])
    names = config.agent_names()
    where = {n: parsed_where.get(n) or previous.where.get(n, "") for n in names}
    what = {n: _cap_words(parsed_what.get(n) or previous.what.get(n, ""), 5)
            for n in names}
    return ChangeSummary(
        at=run.tick,
        milestone_label=milestone_label,
        where=where,
        what=what,
        change=str(data.get("change", "")),
    )


def summarize_dynamics(run: SimulationRun, previous: DynamicSummary | None,
                       track: MilestoneTrack, gateway: LlmGateway,
                       targets: str = DEFAULT_TARGETS,
                       budget: int = DEFAULT_LOG_BUDGET) -> DynamicSummary | None:
    """Dynamic summary for the current period; None means a recorded gap.

    The milestone fields always reflect the track's frontier, whatever the
    model claims.
    """
    frontier = track.frontier
    if track.milestones:
        current = track.milestones[min(frontier, len(track.milestones)) - 1]
        label = current.description
    else:
        label = ""
    slots = {
        "logs": truncate_logs(run.events, budget),
        "current_milestone_id": str(frontier),
        "current_milestone": label,
        "milestones": _numbered([m.description for m in track.milestones]),
        "previous": previous.dynamic if previous and previous.dynamic else "(none)",
        "targets": targets,
    }
    try:
        data = complete_shaped(gateway, "dynamic_summary", slots,
                               required_fields=("milestone_id", "milestone", "dynamic"))
    except (ShapeError, GatewayError):
        return None
    return DynamicSummary(
        at=run.tick,
        milestone_id=frontier,
        milestone=label,
        dynamic=_cap_words(str(data.get("dynamic", "")), 20),
    )


@dataclass(frozen=True)
class MonitorCadence:
    status_every: int = 3    # ticks; 30 s at the nominal 10 s tick
    summary_every: int = 6   # 60 s
    warmup_periods: int = 3  # summary periods during which red is withheld

    @property
    def warmup_until(self) -> int:
        return self.warmup_periods * self.summary_every


class Monitor:
    """Per-run monitor state, driven by the orchestrator once per tick."""

    def __init__(self, run: SimulationRun, guardrails: GuardrailSet,
                 gateway: LlmGateway, cadence: MonitorCadence | None = None,
                 targets: str = DEFAULT_TARGETS, budget: int = DEFAULT_LOG_BUDGET):
        self.run = run
        self.guardrails = guardrails
        self.gateway = gateway
        self.cadence = cadence or MonitorCadence()
        self.targets = targets
        self.budget = budget
        self.track = MilestoneTrack(milestones=guardrails.milestones)
        self.statuses: list[StatusUpdate] = []
        self.changes: list[ChangeSummary] = []
        self.dynamics: list[DynamicSummary] = []
        self.gaps: list[SummaryGap] = []
        self.failures: list[FailureHit] = []   # first hit per condition index
        self._hit_indexes: set[int] = set()
        self._pending_faults: list[str] = []

    def note_fault(self, agent: str) -> None:
        self._pending_faults.append(agent)

    def _milestone_label(self) -> str:
        frontier = self.track.frontier
        if frontier > len(self.track.milestones):
            return "all milestones reached"
        return self.track.milestones[frontier - 1].description

    def _status_cycle(self) -> list[object]:
        new: list[object] = []
        self.track = advance_milestones(self.run, self.track, self.gateway, self.budget)
        current_hits = detect_failures(self.run, self.guardrails, self.gateway, self.budget)
        for hit in current_hits:
            if hit.index not in self._hit_indexes:
                self._hit_indexes.add(hit.index)
                self.failures.append(hit)
                new.append(hit)
        status = status_tick(
            self.run, self.guardrails, self.gateway,
            fault_agents=tuple(self._pending_faults),
            failure_hits=tuple(current_hits),
            warmup_until=self.cadence.warmup_until,
            budget=self.budget,
        )
        del self._pending_faults[:]
        self.statuses.append(status)
        new.append(status)
        return new

    def _summary_cycle(self) -> list[object]:
        new: list[object] = []
        previous_change = self.changes[-1] if self.changes else \
            initial_change_summary(self.run.config)
        change = summarize_changes(self.run, self.run.config, previous_change,
                                   self._milestone_label(), self.gateway, self.budget)
        if change is None:
            gap = SummaryGap(at=self.run.tick, kind="change")
            self.gaps.append(gap)
            new.append(gap)
        else:
            self.changes.append(change)
            new.append(change)
        previous_dynamic = self.dynamics[-1] if self.dynamics else None
        dynamic = summarize_dynamics(self.run, previous_dynamic, self.track,
                                     self.gateway, self.targets, self.budget)
        if dynamic is None:
            gap = SummaryGap(at=self.run.tick, kind="dynamic")
            self.gaps.append(gap)
            new.append(gap)
        else:
            self.dynamics.append(dynamic)
            new.append(dynamic)
        return new

    def on_tick(self) -> list[object]:
        """Cadenced monitor work for the engine's current tick; new records."""
        tick = self.run.tick
        new: list[object] = []
        if tick % self.cadence.status_every == 0:
            new.extend(self._status_cycle())
        if tick % self.cadence.summary_every == 0:
            new.extend(self._summary_cycle())
        return new

    def finalize(self) -> list[object]:
        """Catch-up pass after the run stops, off-cadence ticks included."""
        new: list[object] = []
        self.track = advance_milestones(self.run, self.track, self.gateway, self.budget)
        for hit in detect_failures(self.run, self.guardrails, self.gateway, self.budget):
            if hit.index not in self._hit_indexes:
                self._hit_indexes.add(hit.index)
                self.failures.append(hit)
                new.append(hit)
        return new
