"""Room-scoped multi-agent simulation engine.

The world is a set of named locations plus agents that move between them. All
state changes are recorded in an append-only event log; an agent only ever
observes events from the room it is in. Each tick every active agent runs one
observe / remember / decide / act cycle against a pluggable cognition backend.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Protocol, Sequence

from .worldconfig import SimConfig, validate_config

logger = logging.getLogger(__name__)

ENGINE_FAULT_THRESHOLD = 3  # consecutive backend faults before the monitor is signaled


class EngineError(RuntimeError):
    pass


class BackendFault(RuntimeError):
    """A cognition backend failed to produce a decision (transport error etc.)."""


class EventKind(str, Enum):
    MOVE = "move"
    SPEAK = "speak"
    ACT = "act"
    PLAN_UPDATE = "plan_update"
    OBSERVE = "observe"
    INTERVENTION = "intervention"


@dataclass(frozen=True)
class Event:
    seq: int
    sim_time: int
    agent: str
    location: str
    kind: EventKind
    payload: str
    nudge_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "sim_time": self.sim_time,
            "agent": self.agent,
            "location": self.location,
            "kind": self.kind.value,
            "payload": self.payload,
            "nudge_id": self.nudge_id,
        }


def event_from_dict(data: dict) -> Event:
    return Event(
        seq=data["seq"],
        sim_time=data["sim_time"],
        agent=data["agent"],
        location=data["location"],
        kind=EventKind(data["kind"]),
        payload=data["payload"],
        nudge_id=data.get("nudge_id"),
    )


def event_to_json(event: Event) -> str:
    """One NDJSON line, stable field order, no trailing newline."""
    return json.dumps(event.to_dict(), ensure_ascii=False)


def describe_event(event: Event) -> str:
    """Human-readable one-liner, shared by memories and prompt log renderings."""
    if event.kind is EventKind.MOVE:
        body = f"{event.agent} moved to {event.payload}"
    elif event.kind is EventKind.SPEAK:
        body = f"{event.agent} said {event.payload}"
    elif event.kind is EventKind.PLAN_UPDATE:
        body = f"{event.agent} now plans to {event.payload}"
    else:
        body = f"{event.agent} {event.payload}"
    return f"At {event.location}, {body}"


def render_event_line(event: Event) -> str:
    return f"[{event.sim_time}] {describe_event(event)}"


class MemorySource(str, Enum):
    OBSERVED = "observed"
    INJECTED = "injected"


@dataclass(frozen=True)
class MemoryEntry:
    origin_seq: int
    content: str
    source: MemorySource
    nudge_id: str | None = None


@dataclass
class AgentState:
    name: str
    location: str
    plan: str
    halted: bool = False
    memories: list[MemoryEntry] = field(default_factory=list)
    seen_through: int = 0          # highest event seq already observed
    fault_streak: int = 0          # consecutive backend faults
    _remembered: set[int] = field(default_factory=set, repr=False)

    def remember(self, entry: MemoryEntry) -> bool:
        # One memory per origin event: a ForceSpeak injection must not be
        # duplicated when the same event is observed on the next step.
        if entry.origin_seq in self._remembered:
            return False
        self._remembered.add(entry.origin_seq)
        self.memories.append(entry)
        return True

    def memory_texts(self) -> list[str]:
        return [m.content for m in self.memories]


class ActionKind(str, Enum):
    SPEAK = "speak"
    MOVE = "move"
    ACT = "act"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    text: str  # utterance, destination name, or deed description


@dataclass(frozen=True)
class Decision:
    """One cycle's outcome for an agent: optionally a revised plan, then actions."""
    actions: tuple[Action, ...] = ()
    plan: str | None = None


@dataclass(frozen=True)
class AgentView:
    """Everything a backend may see when deciding for an agent."""
    name: str
    tick: int
    location: str
    plan: str
    new_memories: tuple[MemoryEntry, ...]
    memories: tuple[MemoryEntry, ...]
    directives: tuple[str, ...]
    stop_condition: str


class CognitionBackend(Protocol):
    def attach(self, config: SimConfig) -> None:
        """Bind to a config before the run starts; raise if incompatible or unavailable."""

    def decide(self, view: AgentView) -> Decision:
        """Produce the agent's next decision. May raise BackendFault."""

    def stop_met(self, view: AgentView) -> bool:
        """Whether the agent's stop condition holds after this step."""


class RunState(str, Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    TERMINATED = "terminated"


@dataclass
class RunLimits:
    max_ticks: int = 200
    max_wall_seconds: float | None = None
    nudging_mode: str = "off"          # off | auto | manual
    backend: str = "scripted"          # scripted | live
    seed: int = 0
    tick_wall_seconds: float = 0.0     # pacing for interactive runs; 0 = as fast as possible


@dataclass(frozen=True)
class InterventionStep:
    """One primitive world intervention. Exactly two primitives exist."""
    kind: str                  # "relocate" | "force_speak"
    agent: str
    target: str                # destination location, or the utterance

    @staticmethod
    def relocate(agent: str, location: str) -> "InterventionStep":
        return InterventionStep("relocate", agent, location)

    @staticmethod
    def force_speak(agent: str, utterance: str) -> "InterventionStep":
        return InterventionStep("force_speak", agent, utterance)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "agent": self.agent, "target": self.target}


@dataclass(frozen=True)
class AppliedIntervention:
    """Outcome of draining one queued step list at a tick boundary."""
    nudge_id: str | None
    span: tuple[int, int] | None       # seq range of emitted events, if any
    error: str | None = None           # set when a step aborted the rest


@dataclass
class TickReport:
    tick: int
    new_events: int
    state: RunState
    fault_signals: list[str] = field(default_factory=list)
    applied: list[AppliedIntervention] = field(default_factory=list)


class SimulationRun:
    """Mutable state of one running simulation."""

    def __init__(self, config: SimConfig, backend: CognitionBackend, limits: RunLimits):
        self.config = config
        self.backend = backend
        self.limits = limits
        self.state = RunState.RUNNING
        self.reason: str | None = None
        self.tick = 0
        self._events: list[Event] = []
        self._moves: dict[str, list[tuple[int, str]]] = {}  # agent -> [(seq, location)]
        self.agents: dict[str, AgentState] = {}
        self._pending: list[tuple[str | None, list[InterventionStep]]] = []
        self._started_at = time.monotonic()
        self._fault_signals: list[str] = []

        for spec in config.agents:
            self.agents[spec.first_name] = AgentState(
                name=spec.first_name,
                location=spec.initial_plan.location,
                plan=spec.initial_plan.description,
            )
        for spec in config.agents:
            self._append(
                EventKind.MOVE,
                agent=spec.first_name,
                location=spec.initial_plan.location,
                payload=spec.initial_plan.location,
            )

    # ------------------------------------------------------------- event log

    @property
    def events(self) -> tuple[Event, ...]:
        return tuple(self._events)

    @property
    def max_seq(self) -> int:
        return len(self._events)

    def events_since(self, since: int) -> list[Event]:
        return [e for e in self._events if e.seq > since]

    def _append(self, kind: EventKind, agent: str, location: str, payload: str,
                nudge_id: str | None = None) -> Event:
        event = Event(
            seq=len(self._events) + 1,
            sim_time=self.tick,
            agent=agent,
            location=location,
            kind=kind,
            payload=payload,
            nudge_id=nudge_id,
        )
        self._events.append(event)
        if kind is EventKind.MOVE:
            self._moves.setdefault(agent, []).append((event.seq, event.payload))
        return event

    def location_at(self, agent: str, seq: int) -> str | None:
        """The room the agent was in when event `seq` was emitted (None before placement)."""
        current = None
        for move_seq, location in self._moves.get(agent, []):
            if move_seq > seq:
                break
            current = location
        return current

    # ----------------------------------------------------------- visibility

    def visible_events(self, agent: str, since: int = 0) -> list[Event]:
        """Events after `since` that the agent witnessed: its own, plus any
        emitted in the room it occupied at that moment."""
        if agent not in self.agents:
            raise EngineError(f"unknown agent '{agent}'")
        if since > self.max_seq:
            raise EngineError(f"since={since} is beyond the log (max seq {self.max_seq})")
        out = []
        for event in self._events[since:]:
            if event.agent == agent or self.location_at(agent, event.seq) == event.location:
                out.append(event)
        return out

    # ------------------------------------------------------------ agent step

    def _view(self, state: AgentState, new: tuple[MemoryEntry, ...] = ()) -> AgentView:
        spec = self.config.agent(state.name)
        return AgentView(
            name=state.name,
            tick=self.tick,
            location=state.location,
            plan=state.plan,
            new_memories=new,
            memories=tuple(state.memories),
            directives=spec.directives,
            stop_condition=spec.initial_plan.stop_condition,
        )

    def agent_step(self, name: str) -> list[Event]:
        """Run one observe/remember/decide/act cycle. Halted agents no-op."""
        if self.state is not RunState.RUNNING:
            raise EngineError(f"run is {self.state.value}, not running")
        state = self.agents.get(name)
        if state is None:
            raise EngineError(f"unknown agent '{name}'")
        if state.halted:
            return []

        fresh = self.visible_events(name, since=state.seen_through)
        new_memories = []
        for event in fresh:
            entry = MemoryEntry(
                origin_seq=event.seq,
                content=describe_event(event),
                source=MemorySource.OBSERVED,
                nudge_id=event.nudge_id,
            )
            if state.remember(entry):
                new_memories.append(entry)
        state.seen_through = self.max_seq

        try:
            decision = self.backend.decide(self._view(state, tuple(new_memories)))
        except BackendFault as exc:
            state.fault_streak += 1
            logger.warning("backend fault for %s (streak %d): %s", name, state.fault_streak, exc)
            if state.fault_streak == ENGINE_FAULT_THRESHOLD:
                self._fault_signals.append(name)
            return []
        state.fault_streak = 0

        emitted: list[Event] = []
        if decision.plan is not None and decision.plan != state.plan:
            state.plan = decision.plan
            emitted.append(self._append(EventKind.PLAN_UPDATE, name, state.location, decision.plan))
        for action in decision.actions:
            if action.kind is ActionKind.MOVE:
                if action.text not in self.config.location_names():
                    # Keep the invariant that move payloads name real rooms:
                    # a bad destination becomes a visible failed attempt.
                    emitted.append(self._append(
                        EventKind.ACT, name, state.location,
                        f"tried to move to '{action.text}', but no such location exists",
                    ))
                    continue
                state.location = action.text
                emitted.append(self._append(EventKind.MOVE, name, action.text, action.text))
            elif action.kind is ActionKind.SPEAK:
                emitted.append(self._append(EventKind.SPEAK, name, state.location, action.text))
            else:
                emitted.append(self._append(EventKind.ACT, name, state.location, action.text))
        # The agent witnesses its own actions immediately.
        for event in emitted:
            state.remember(MemoryEntry(
                origin_seq=event.seq,
                content=describe_event(event),
                source=MemorySource.OBSERVED,
                nudge_id=event.nudge_id,
            ))
        state.seen_through = self.max_seq
        return emitted

    # ---------------------------------------------------------- intervention

    def queue_intervention(self, nudge_id: str | None, steps: Sequence[InterventionStep]) -> None:
        """Schedule steps to apply atomically at the next tick boundary."""
        self._pending.append((nudge_id, list(steps)))

    def apply_intervention(self, step: InterventionStep, nudge_id: str | None = None) -> Event:
        """Apply one primitive immediately. Only valid at a tick boundary.

        Relocate moves the agent and emits a Move event at the destination;
        ForceSpeak emits a Speak event and injects the utterance into every
        co-located agent's memory.
        """
        if self.state is not RunState.RUNNING:
            raise EngineError(f"run is {self.state.value}, not running")
        state = self.agents.get(step.agent)
        if state is None:
            raise EngineError(f"unknown agent '{step.agent}'")
        if step.kind == "relocate":
            if step.target not in self.config.location_names():
                raise EngineError(f"unknown location '{step.target}'")
            state.location = step.target
            return self._append(EventKind.MOVE, step.agent, step.target, step.target, nudge_id)
        if step.kind == "force_speak":
            event = self._append(EventKind.SPEAK, step.agent, state.location, step.target, nudge_id)
            for other in self.agents.values():
                if other.name != step.agent and other.location == state.location:
                    other.remember(MemoryEntry(
                        origin_seq=event.seq,
                        content=describe_event(event),
                        source=MemorySource.INJECTED,
                        nudge_id=nudge_id,
                    ))
            return event
        raise EngineError(f"unknown intervention kind '{step.kind}'")

    def drain_interventions(self) -> list[AppliedIntervention]:
        """Apply queued interventions in queue order.

        An invalid step aborts the remaining steps of its own nudge only; the
        error is reported in the result instead of raised, so one bad nudge
        cannot take the tick down with it.
        """
        results: list[AppliedIntervention] = []
        pending, self._pending = self._pending, []
        for nudge_id, steps in pending:
            first = last = None
            error = None
            for i, step in enumerate(steps):
                try:
                    event = self.apply_intervention(step, nudge_id)
                except EngineError as exc:
                    error = f"step {i + 1}: {exc}"
                    break
                first = first if first is not None else event.seq
                last = event.seq
            span = (first, last) if first is not None else None
            results.append(AppliedIntervention(nudge_id=nudge_id, span=span, error=error))
        return results

    # ------------------------------------------------------------- tick loop

    def take_fault_signals(self) -> list[str]:
        signals, self._fault_signals = self._fault_signals, []
        return signals

    def run_tick(self) -> TickReport:
        """Advance the world one tick: drain interventions, step every active
        agent in config order, evaluate stop conditions, settle run state."""
        if self.state is not RunState.RUNNING:
            raise EngineError(f"run is {self.state.value}, not running")
        self.tick += 1
        before = self.max_seq
        applied = self.drain_interventions()
        for spec in self.config.agents:
            state = self.agents[spec.first_name]
            if state.halted:
                continue
            self.agent_step(state.name)
            if self.backend.stop_met(self._view(state)):
                state.halted = True
        if all(state.halted for state in self.agents.values()):
            self.state = RunState.COMPLETED
            self.reason = "all stop conditions met"
        elif self.tick >= self.limits.max_ticks:
            self.state = RunState.TERMINATED
            self.reason = "tick budget exhausted"
        elif (self.limits.max_wall_seconds is not None
              and time.monotonic() - self._started_at > self.limits.max_wall_seconds):
            self.state = RunState.TERMINATED
            self.reason = "wall clock budget exhausted"
        return TickReport(
            tick=self.tick,
            new_events=self.max_seq - before,
            state=self.state,
            fault_signals=self.take_fault_signals(),
            applied=applied,
        )

    def terminate(self, reason: str) -> None:
        if self.state is not RunState.RUNNING:
            raise EngineError(f"run already {self.state.value}")
        self.state = RunState.TERMINATED
        self.reason = reason


def start_run(config: SimConfig, backend: CognitionBackend, limits: RunLimits) -> SimulationRun:
    """Validate the config, bind the backend, and place agents.

    The initial placement emits one Move event per agent in config order, so a
    fresh run's log always starts with seq 1..n placements at sim_time 0.
    """
    report = validate_config(config)
    if not report.ok:
        raise EngineError(f"invalid config: {report}")
    backend.attach(config)
    return SimulationRun(config, backend, limits)


def truncation_suffix(events: Sequence[Event], count_tokens: Callable[[str], int],
                      budget: int) -> str:
    """Longest suffix of `events`, rendered one line each, fitting the budget.

    Newer events always win over older ones; the result is contiguous.
    """
    lines = [render_event_line(e) for e in events]
    best = ""
    for start in range(len(lines), -1, -1):
        rendered = "\n".join(lines[start:])
        if count_tokens(rendered) <= budget:
            best = rendered
        else:
            break
    return best
