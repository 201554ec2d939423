"""Run lifecycles: wire the engine, monitor, nudge controller, stores, and
run tree together, and drive ticks to completion.

A RunSession owns one live run. Reopened (finished, on-disk) runs are read
back as ReopenedRun for status, reflection, and forking after a restart.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

from .cognition import LiveCognitionBackend
from .engine import (
    InterventionStep,
    RunLimits,
    RunState,
    SimulationRun,
    start_run,
)
from .gateway import (
    GatewayRule,
    LiveGateway,
    LlmGateway,
    ScriptedGateway,
)
from .guardrails import GuardrailSet, check_guardrails, guardrails_to_dict
from .monitor import Monitor, StatusUpdate, DEFAULT_TARGETS
from .nudge import NUDGING_MODES, NudgeController
from .reflection import (
    ReflectionFix,
    RunNode,
    holistic_reflect,
    load_static_list,
    repair_config,
)
from .scripting import ScenarioScript, ScriptedBackend
from .store import Store, record_to_dict, scenario_slug
from .worldconfig import SimConfig, config_to_dict, validate_config

BACKENDS = ("scripted", "live")


class OrchestratorError(RuntimeError):
    pass


@dataclass
class RunSettings:
    """Knobs for one run, beyond the engine's own limits."""

    max_ticks: int = 40
    max_wall_seconds: float | None = None
    nudging: str = "off"
    backend: str = "scripted"
    seed: int = 0
    condition: str = ""
    targets: str = DEFAULT_TARGETS
    simulation_idea: str = ""

    def __post_init__(self):
        if self.max_ticks <= 0:
            raise OrchestratorError("max_ticks must be positive")
        if self.nudging not in NUDGING_MODES:
            raise OrchestratorError(f"nudging must be one of {NUDGING_MODES}")
        if self.backend not in BACKENDS:
            raise OrchestratorError(f"backend must be one of {BACKENDS}")

    def limits(self) -> RunLimits:
        return RunLimits(max_ticks=self.max_ticks,
                         max_wall_seconds=self.max_wall_seconds)

    def to_dict(self) -> dict:
        return {
            "max_ticks": self.max_ticks,
            "max_wall_seconds": self.max_wall_seconds,
            "nudging": self.nudging,
            "backend": self.backend,
            "seed": self.seed,
            "condition": self.condition,
        }


def scripted_gateway_for(script: ScenarioScript | None,
                         replies: dict | None = None) -> ScriptedGateway:
    """Deterministic gateway: reflection replies from the script, optional
    extra reply tables, shape-safe defaults for everything else."""
    rules = []
    for reply in (script.reflection_replies if script else []):
        rules.append(GatewayRule(
            template_id="nudge_reflection",
            reply=reply.reply,
            when_contains=reply.when_log_contains,
            once=reply.once,
        ))
    return ScriptedGateway(replies=replies, rules=rules)


class RunSession:
    """One live run and everything attached to it."""

    def __init__(self, run_id: str, run: SimulationRun, guardrails: GuardrailSet,
                 monitor: Monitor, controller: NudgeController,
                 settings: RunSettings, store: Store | None = None,
                 script: ScenarioScript | None = None,
                 parent_id: str | None = None):
        self.run_id = run_id
        self.run = run
        self.guardrails = guardrails
        self.monitor = monitor
        self.controller = controller
        self.settings = settings
        self.store = store
        self.run_store = None
        self.script = script
        self.parent_id = parent_id
        self.fixes: list[ReflectionFix] = []
        self.created_at = time.time()
        self.finished_at: float | None = None
        self._nudge_written: dict[str, tuple] = {}
        self._finalized = False

    # ------------------------------------------------------------ plumbing

    def _persist_nudge_changes(self) -> None:
        if self.run_store is None:
            return
        for nudge in self.controller.nudges:
            fingerprint = (nudge.status, nudge.error, nudge.applied_events)
            if self._nudge_written.get(nudge.id) != fingerprint:
                self._nudge_written[nudge.id] = fingerprint
                self.run_store.append_nudge(nudge)

    def _persist_records(self, records) -> None:
        if self.run_store is None:
            return
        for record in records:
            self.run_store.append_record(record)

    def meta_dict(self) -> dict:
        reached = {
            str(mid): {"tick": tick, "evidence": list(evidence) if evidence else None}
            for mid, (tick, evidence) in self.monitor.track.reached.items()
        }
        return {
            "run_id": self.run_id,
            "parent_id": self.parent_id,
            "state": self.run.state.value,
            "reason": self.run.reason,
            "tick": self.run.tick,
            "settings": self.settings.to_dict(),
            "scenario": scenario_slug(self.run.config.world_name),
            "frontier": self.monitor.track.frontier,
            "milestones_reached": reached,
            "failure_hits": [record_to_dict(h) for h in self.monitor.failures],
            "reflection_misses": list(self.controller.misses),
            "created_at": self.created_at,
            "finished_at": self.finished_at,
        }

    def _write_meta(self) -> None:
        if self.run_store is not None:
            self.run_store.write_meta(self.meta_dict())

    # ------------------------------------------------------------ stepping

    def step(self) -> bool:
        """Advance one tick; returns False once the run has settled."""
        if self.run.state is not RunState.RUNNING:
            return False
        upcoming = self.run.tick + 1
        if self.script and self.controller.mode == "manual":
            for spec in self.script.manual_nudges:
                if spec.at_tick == upcoming:
                    steps = [_step_from_dict(s) for s in spec.steps]
                    self.controller.manual(steps, note=spec.note)
        before = self.run.max_seq
        report = self.run.run_tick()
        if self.run_store is not None:
            self.run_store.append_events(self.run.events_since(before))
        self.controller.settle(report.applied)
        for agent in report.fault_signals:
            self.monitor.note_fault(agent)
        records = self.monitor.on_tick()
        self._persist_records(records)
        went_red = any(isinstance(r, StatusUpdate) and r.level == "red"
                       for r in records)
        if self.controller.mode != "off" and (
                self.run.tick % self.monitor.cadence.summary_every == 0 or went_red):
            self.controller.reflect(self.monitor.changes)
        self._persist_nudge_changes()
        if self.run.state is not RunState.RUNNING:
            self.finish()
        else:
            self._write_meta()
        return self.run.state is RunState.RUNNING

    def run_to_completion(self) -> None:
        while self.step():
            pass

    def finish(self) -> None:
        """Final catch-up monitor pass and meta flush; idempotent."""
        if self._finalized:
            return
        self._finalized = True
        self.finished_at = time.time()
        records = self.monitor.finalize()
        self._persist_records(records)
        self._persist_nudge_changes()
        self._write_meta()
        if self.run_store is not None:
            self.run_store.close()

    def stop(self, reason: str = "stopped by user") -> None:
        if self.run.state is not RunState.RUNNING:
            raise OrchestratorError(f"run is already {self.run.state.value}")
        self.run.terminate(reason)
        self.finish()

    # ------------------------------------------------------------- queries

    @property
    def state(self) -> RunState:
        return self.run.state

    def status_view(self) -> dict:
        latest = self.monitor.statuses[-1] if self.monitor.statuses else None
        return {
            "run_id": self.run_id,
            "state": self.run.state.value,
            "reason": self.run.reason,
            "tick": self.run.tick,
            "condition": self.settings.condition,
            "latest_status": record_to_dict(latest) if latest else None,
            "frontier": self.monitor.track.frontier,
            "milestones_reached": self.monitor.track.reached_count(),
            "agent_locations": {name: state.location
                                for name, state in self.run.agents.items()},
            "counts": {
                "events": self.run.max_seq,
                "statuses": len(self.monitor.statuses),
                "changes": len(self.monitor.changes),
                "dynamics": len(self.monitor.dynamics),
                "nudges": len(self.controller.nudges),
            },
        }


def _step_from_dict(data: dict) -> InterventionStep:
    return InterventionStep(kind=data["kind"], agent=data["agent"],
                            target=data["target"])


def create_run(
    config: SimConfig,
    guardrails: GuardrailSet,
    settings: RunSettings | None = None,
    store: Store | None = None,
    gateway: LlmGateway | None = None,
    script: ScenarioScript | None = None,
    run_id: str | None = None,
    parent_id: str | None = None,
) -> RunSession:
    """Validate, start the engine, attach monitor and nudging, open stores.

    Validation failures happen before any directory is touched, so a bad
    config never leaves a half-made run behind.
    """
    settings = settings or RunSettings()
    report = validate_config(config)
    if not report.ok:
        raise OrchestratorError(f"invalid config: {report}")
    problems = check_guardrails(guardrails)
    if problems:
        raise OrchestratorError("invalid guardrails: " + "; ".join(problems))

    if gateway is None:
        gateway = (LiveGateway() if settings.backend == "live"
                   else scripted_gateway_for(script))
    if settings.backend == "live":
        backend = LiveCognitionBackend(gateway)
    else:
        backend = ScriptedBackend(script or ScenarioScript(agents={}))

    run = start_run(config, backend, settings.limits())
    monitor = Monitor(run, guardrails, gateway,
                      targets=settings.targets)
    controller = NudgeController(run, guardrails, gateway,
                                 mode=settings.nudging,
                                 simulation_idea=settings.simulation_idea)

    tree = store.load_tree() if store is not None else None
    if run_id is None:
        run_id = tree.next_id() if tree is not None else "run-0001"

    session = RunSession(run_id, run, guardrails, monitor, controller,
                         settings, store=store, script=script,
                         parent_id=parent_id)
    if store is not None:
        session.run_store = store.create_run(run_id, config, guardrails)
        session.run_store.append_events(run.events)
        session._write_meta()
        node = RunNode(
            run_id=run_id,
            parent_id=parent_id,
            condition=settings.condition,
            config=config_to_dict(config),
            guardrails=guardrails_to_dict(guardrails),
            paths={name: f"runs/{run_id}/{name}"
                   for name in ("events.ndjson", "summaries.ndjson", "nudges.ndjson")},
        )
        tree.add(node)
    return session


# ------------------------------------------------------------ reopened runs


@dataclass
class ReopenedRun:
    """Just enough of a finished run to reflect on it: state + log + config."""

    config: SimConfig
    state: RunState
    events: tuple = ()
    reason: str | None = None
    tick: int = 0


def reopen_run(store: Store, run_id: str) -> tuple[ReopenedRun, dict]:
    """Read a persisted run back; returns (run-like, meta)."""
    run_store = store.open_run(run_id)
    meta = run_store.read_meta()
    state = RunState(meta.get("state", RunState.TERMINATED.value))
    run = ReopenedRun(
        config=run_store.read_config(),
        state=state,
        events=tuple(run_store.read_events()),
        reason=meta.get("reason"),
        tick=meta.get("tick", 0),
    )
    return run, meta


def summaries_text(records: list[dict]) -> str:
    """Render persisted summary records for the holistic-reflection prompt."""
    lines = [json.dumps(r, ensure_ascii=False) for r in records
             if r.get("type") in ("change", "dynamic")]
    return "\n".join(lines) if lines else "(none)"


def reflect_run(store: Store, run_id: str, gateway: LlmGateway,
                run=None) -> list[ReflectionFix]:
    """Holistic reflection over a finished run, using both debugging lists."""
    if run is None:
        run, _ = reopen_run(store, run_id)
    if run.state is RunState.RUNNING:
        raise OrchestratorError("run is still running")
    scenario = scenario_slug(run.config.world_name)
    static = load_static_list()
    dynamic = store.load_debug_list(scenario)
    records = store.open_run(run_id).read_summaries()
    return holistic_reflect(run, static, dynamic, gateway,
                            summaries=summaries_text(records))


def fork_session(
    store: Store,
    parent_run_id: str,
    fixes: list[ReflectionFix],
    gateway: LlmGateway,
    settings: RunSettings | None = None,
    script: ScenarioScript | None = None,
    new_config: SimConfig | None = None,
) -> RunSession:
    """Repair the parent's config with the selected fixes and start a child.

    Guardrails carry over from the parent untouched. Pass new_config to skip
    regeneration (the eval harness supplies pre-reflected configs).
    """
    run_store = store.open_run(parent_run_id)
    parent_config = run_store.read_config()
    guardrails = run_store.read_guardrails()
    meta = run_store.read_meta()
    if meta.get("state") == RunState.RUNNING.value:
        raise OrchestratorError("cannot fork a running run")
    if new_config is None:
        new_config = repair_config(parent_config, fixes, gateway)
    if settings is None:
        raw = dict(meta.get("settings", {}))
        raw.pop("condition", None)
        settings = RunSettings(condition="", **raw) if raw else RunSettings()
    return create_run(new_config, guardrails, settings=settings, store=store,
                      gateway=gateway, script=script, parent_id=parent_run_id)
