"""Deterministic scripted cognition: timelines, reactive triggers, fault modes.

A ScenarioScript drives agents without any model calls, so seeded runs replay
byte-identically. Scripts also carry the deterministic harness fixtures that
belong to the same scenario: scripted reflection replies, manual nudge
schedules, and the ground-truth list of milestones with notable dynamics.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .engine import Action, ActionKind, AgentView, Decision
from .worldconfig import SimConfig

FAULT_MODES = ("stall", "wrong_room_attempt", "off_topic", "impossible_action")


class ScriptError(ValueError):
    pass


# --------------------------------------------------------------- predicates
#
# Memory predicates gate triggers and stop conditions. They see the agent's
# accumulated memory texts plus the current tick:
#   {"contains": "...", "count": n}   n matching memories exist (default 1)
#   {"tick_at_least": t}
#   {"never": true}
#   {"all_of": [...]} / {"any_of": [...]}


def eval_memory_predicate(pred: dict, memories: list[str], tick: int) -> bool:
    if not isinstance(pred, dict) or not pred:
        raise ScriptError(f"malformed predicate: {pred!r}")
    if "never" in pred:
        return False
    if "all_of" in pred:
        return all(eval_memory_predicate(p, memories, tick) for p in pred["all_of"])
    if "any_of" in pred:
        return any(eval_memory_predicate(p, memories, tick) for p in pred["any_of"])
    if "tick_at_least" in pred:
        return tick >= pred["tick_at_least"]
    if "contains" in pred:
        needed = pred.get("count", 1)
        hits = sum(1 for m in memories if pred["contains"] in m)
        return hits >= needed
    raise ScriptError(f"unknown predicate keys: {sorted(pred)}")


def _validate_predicate(pred: dict, where: str) -> None:
    try:
        eval_memory_predicate(pred, [], 0)
    except ScriptError:
        raise
    except Exception as exc:  # malformed operand types
        raise ScriptError(f"{where}: bad predicate {pred!r} ({exc})") from exc


# ------------------------------------------------------------------ actions

_ACTION_KEYS = ("say", "move_to", "do", "plan")


def _parse_action_dict(raw: dict, where: str) -> tuple[list[Action], str | None]:
    """One script action object -> engine actions (and/or a plan update)."""
    actions: list[Action] = []
    plan: str | None = None
    keys = [k for k in _ACTION_KEYS if k in raw]
    if not keys:
        raise ScriptError(f"{where}: needs one of {_ACTION_KEYS}")
    for key in keys:
        value = raw[key]
        if not isinstance(value, str):
            raise ScriptError(f"{where}: '{key}' must be a string")
        if key == "say":
            actions.append(Action(ActionKind.SPEAK, value))
        elif key == "move_to":
            actions.append(Action(ActionKind.MOVE, value))
        elif key == "do":
            actions.append(Action(ActionKind.ACT, value))
        else:
            plan = value
    return actions, plan


@dataclass
class TimelineEntry:
    tick: int
    actions: list[Action]
    plan: str | None


@dataclass
class Trigger:
    when: dict
    actions: list[Action]
    plan: str | None
    fired: bool = False


@dataclass
class Fault:
    mode: str
    tick: int | None = None          # one-shot modes
    from_tick: int | None = None     # sustained modes
    every: int = 2
    text: str = ""
    location: str = ""
    until: dict | None = None
    active: bool = False


@dataclass
class AgentProgram:
    name: str
    timeline: list[TimelineEntry] = field(default_factory=list)
    triggers: list[Trigger] = field(default_factory=list)
    faults: list[Fault] = field(default_factory=list)
    stop_when: dict = field(default_factory=lambda: {"never": True})


@dataclass
class ManualNudgeSpec:
    """A human steering action the harness replays on schedule."""
    at_tick: int
    steps: list[dict]            # engine InterventionStep dicts
    note: str = ""


@dataclass
class ReflectionReply:
    """Scripted gateway rule for the dynamic-reflection template."""
    when_log_contains: str
    reply: str
    once: bool = True


@dataclass
class ScenarioScript:
    agents: dict[str, AgentProgram]
    notable_milestones: list[int] = field(default_factory=list)
    reflection_replies: list[ReflectionReply] = field(default_factory=list)
    manual_nudges: list[ManualNudgeSpec] = field(default_factory=list)


def script_from_dict(data: dict) -> ScenarioScript:
    if not isinstance(data, dict) or "agents" not in data:
        raise ScriptError("script must be an object with an 'agents' map")
    agents: dict[str, AgentProgram] = {}
    for name, raw in data["agents"].items():
        program = AgentProgram(name=name)
        for i, entry in enumerate(raw.get("timeline", [])):
            where = f"{name}.timeline[{i}]"
            if "tick" not in entry:
                raise ScriptError(f"{where}: missing 'tick'")
            actions, plan = _parse_action_dict(entry, where)
            program.timeline.append(TimelineEntry(entry["tick"], actions, plan))
        for i, entry in enumerate(raw.get("triggers", [])):
            where = f"{name}.triggers[{i}]"
            when = entry.get("when")
            if not isinstance(when, dict):
                raise ScriptError(f"{where}: missing 'when' predicate")
            _validate_predicate(when, where)
            if "actions" in entry:
                actions, plan = [], None
                for j, sub in enumerate(entry["actions"]):
                    sub_actions, sub_plan = _parse_action_dict(sub, f"{where}.actions[{j}]")
                    actions.extend(sub_actions)
                    plan = sub_plan if sub_plan is not None else plan
            else:
                actions, plan = _parse_action_dict(entry, where)
            program.triggers.append(Trigger(when, actions, plan))
        for i, entry in enumerate(raw.get("faults", [])):
            where = f"{name}.faults[{i}]"
            mode = entry.get("mode")
            if mode not in FAULT_MODES:
                raise ScriptError(f"{where}: mode must be one of {FAULT_MODES}")
            fault = Fault(
                mode=mode,
                tick=entry.get("tick"),
                from_tick=entry.get("from_tick"),
                every=entry.get("every", 2),
                text=entry.get("text", ""),
                location=entry.get("location", ""),
                until=entry.get("until"),
            )
            if fault.until is not None:
                _validate_predicate(fault.until, where)
            if mode in ("stall", "off_topic") and fault.from_tick is None:
                raise ScriptError(f"{where}: '{mode}' needs 'from_tick'")
            if mode in ("wrong_room_attempt", "impossible_action") and fault.tick is None:
                raise ScriptError(f"{where}: '{mode}' needs 'tick'")
            program.faults.append(fault)
        if "stop_when" in raw:
            _validate_predicate(raw["stop_when"], f"{name}.stop_when")
            program.stop_when = raw["stop_when"]
        agents[name] = program

    nudges = [
        ManualNudgeSpec(at_tick=n["at_tick"], steps=list(n["steps"]), note=n.get("note", ""))
        for n in data.get("manual_nudges", [])
    ]
    replies = [
        ReflectionReply(
            when_log_contains=r["when_log_contains"],
            reply=r["reply"],
            once=r.get("once", True),
        )
        for r in data.get("reflection_replies", [])
    ]
    return ScenarioScript(
        agents=agents,
        notable_milestones=list(data.get("notable_milestones", [])),
        reflection_replies=replies,
        manual_nudges=nudges,
    )


def load_script(path: str) -> ScenarioScript:
    with open(path, encoding="utf-8") as fh:
        return script_from_dict(json.load(fh))


class ScriptedBackend:
    """CognitionBackend that replays a ScenarioScript.

    Unscripted agents (present in the config but not the script) halt on their
    first step so they never block run completion.
    """

    def __init__(self, script: ScenarioScript):
        # Private copy: replaying mutates trigger/fault state, and one script
        # object routinely drives many runs (eval conditions, replays, forks).
        self.script = copy.deepcopy(script)
        self._config: SimConfig | None = None

    def attach(self, config: SimConfig) -> None:
        agent_names = set(config.agent_names())
        location_names = set(config.location_names())
        for name, program in self.script.agents.items():
            if name not in agent_names:
                raise ScriptError(f"script agent '{name}' is not in the config")
            for entry in program.timeline:
                for action in entry.actions:
                    if action.kind is ActionKind.MOVE and action.text not in location_names:
                        raise ScriptError(
                            f"{name}: timeline move to unknown location '{action.text}'")
            for trigger in program.triggers:
                for action in trigger.actions:
                    if action.kind is ActionKind.MOVE and action.text not in location_names:
                        raise ScriptError(
                            f"{name}: trigger move to unknown location '{action.text}'")
        self._config = config

    def _stall_active(self, program: AgentProgram, view: AgentView, memories: list[str]) -> bool:
        stalled = False
        for fault in program.faults:
            if fault.mode != "stall":
                continue
            if view.tick < (fault.from_tick or 0):
                continue
            if fault.until is not None and eval_memory_predicate(fault.until, memories, view.tick):
                continue
            stalled = True
        return stalled

    def decide(self, view: AgentView) -> Decision:
        program = self.script.agents.get(view.name)
        if program is None:
            return Decision()
        memories = [m.content for m in view.memories]
        actions: list[Action] = []
        plan: str | None = None

        if not self._stall_active(program, view, memories):
            for entry in program.timeline:
                if entry.tick == view.tick:
                    actions.extend(entry.actions)
                    plan = entry.plan if entry.plan is not None else plan

        for fault in program.faults:
            if fault.mode == "wrong_room_attempt" and fault.tick == view.tick:
                actions.append(Action(ActionKind.MOVE, fault.location or "Nowhere"))
            elif fault.mode == "impossible_action" and fault.tick == view.tick:
                actions.append(Action(ActionKind.ACT, fault.text))
            elif fault.mode == "off_topic":
                start = fault.from_tick or 0
                done = fault.until is not None and eval_memory_predicate(
                    fault.until, memories, view.tick)
                if view.tick >= start and not done and (view.tick - start) % fault.every == 0:
                    actions.append(Action(ActionKind.SPEAK, fault.text))

        for trigger in program.triggers:
            if trigger.fired:
                continue
            if eval_memory_predicate(trigger.when, memories, view.tick):
                trigger.fired = True
                actions.extend(trigger.actions)
                plan = trigger.plan if trigger.plan is not None else plan
        return Decision(actions=tuple(actions), plan=plan)

    def stop_met(self, view: AgentView) -> bool:
        program = self.script.agents.get(view.name)
        if program is None:
            return view.tick >= 1
        memories = [m.content for m in view.memories]
        return eval_memory_predicate(program.stop_when, memories, view.tick)
