from __future__ import annotations

import json
import os

import pytest

from dynex.engine import RunState
from dynex.gateway import ScriptedGateway
from dynex.guardrails import GuardrailSet, guardrails_from_dict
from dynex.nudge import NudgeStatus
from dynex.orchestrator import (
    OrchestratorError,
    RunSettings,
    create_run,
    fork_session,
    reflect_run,
    reopen_run,
    scripted_gateway_for,
    summaries_text,
)
from dynex.scripting import script_from_dict
from dynex.store import Store
from dynex.worldconfig import config_from_dict

from conftest import BASE_GUARDRAILS, config_dict, make_config, phases_script

NEVER_STOP = {"agents": {"Ann": {"stop_when": {"never": True}}}}

STATUS_VIEW_KEYS = {
    "run_id", "state", "reason", "tick", "condition", "latest_status",
    "frontier", "milestones_reached", "agent_locations", "counts",
}


@pytest.fixture
def store(tmp_path):
    return Store(str(tmp_path / "store"))


def _guardrails():
    import copy
    return guardrails_from_dict(copy.deepcopy(BASE_GUARDRAILS))


def _session(script_data=None, settings=None, store=None, config=None):
    script = script_from_dict(script_data or phases_script())
    return create_run(config or make_config(), _guardrails(),
                      settings=settings, store=store, script=script)


# ---------------------------------------------------------------- settings


def test_settings_validation_and_shape():
    with pytest.raises(OrchestratorError, match="max_ticks must be positive"):
        RunSettings(max_ticks=0)
    with pytest.raises(OrchestratorError, match="nudging must be one of"):
        RunSettings(nudging="sometimes")
    with pytest.raises(OrchestratorError, match="backend must be one of"):
        RunSettings(backend="psychic")

    settings = RunSettings(max_ticks=12, nudging="auto", seed=3, condition="Auto")
    assert settings.to_dict() == {
        "max_ticks": 12, "max_wall_seconds": None, "nudging": "auto",
        "backend": "scripted", "seed": 3, "condition": "Auto",
    }
    limits = settings.limits()
    assert limits.max_ticks == 12 and limits.max_wall_seconds is None


def test_scripted_gateway_for_wires_reflection_replies():
    script = script_from_dict({
        "agents": {},
        "reflection_replies": [
            {"when_log_contains": "stuck in Hall",
             "reply": "Problem: stall Solution: 1. Move Ben to Lab"},
        ],
    })
    gateway = scripted_gateway_for(script)
    needed = {"simulation_idea", "milestones", "failures", "locations",
              "agents", "logs", "change_logs"}
    slots = {name: "x" for name in needed}
    slots["logs"] = "[4] At Hall, Ben is stuck in Hall"
    assert gateway.complete("nudge_reflection", slots).startswith("Problem: stall")
    # once spent, the shape-safe default takes over
    assert gateway.complete("nudge_reflection", slots) == \
        "Simulation is running smoothly."


# -------------------------------------------------------------- create_run


def test_create_run_validates_before_touching_disk(store):
    bad = config_dict()
    bad["agents"][0]["initial_plan"]["location"] = "Moon"
    with pytest.raises(OrchestratorError, match="invalid config"):
        create_run(config_from_dict(bad), _guardrails(), store=store)
    assert store.run_ids() == []
    assert store.load_tree().nodes == {}

    wrong = _guardrails()
    renumbered = wrong.milestones[1:] + wrong.milestones[:1]
    broken = GuardrailSet(milestones=renumbered,
                          stop_condition=wrong.stop_condition,
                          failure_conditions=wrong.failure_conditions)
    with pytest.raises(OrchestratorError, match="invalid guardrails"):
        create_run(make_config(), broken, store=store)
    assert store.run_ids() == []


def test_create_run_persists_and_sequences_ids(store):
    first = _session(store=store)
    assert first.run_id == "run-0001"
    second = _session(store=store)
    assert second.run_id == "run-0002"
    assert store.run_ids() == ["run-0001", "run-0002"]

    run_dir = store.run_dir("run-0001")
    for name in ("config.json", "guardrails.json", "events.ndjson", "meta.json"):
        assert os.path.exists(os.path.join(run_dir, name)), name
    placements = store.open_run("run-0001").read_events()
    assert [e.kind.value for e in placements] == ["move", "move"]

    node = store.load_tree().get("run-0001")
    assert node.parent_id is None
    assert set(node.paths) == {"events.ndjson", "summaries.ndjson", "nudges.ndjson"}
    assert node.paths["events.ndjson"] == "runs/run-0001/events.ndjson"
    meta = store.open_run("run-0001").read_meta()
    assert meta["state"] == "running" and meta["tick"] == 0
    first.stop()
    second.stop()


# ----------------------------------------------------------------- stepping


def test_run_to_completion_persists_every_event(store):
    session = _session(store=store)
    session.run_to_completion()
    assert session.state is RunState.COMPLETED
    stored = store.open_run(session.run_id).read_events()
    assert stored == list(session.run.events)
    meta = store.open_run(session.run_id).read_meta()
    assert meta["state"] == "completed"
    assert meta["reason"] == "all stop conditions met"
    assert meta["scenario"] == "test-world"
    assert meta["milestones_reached"]["1"]["tick"] >= 1
    assert set(meta["milestones_reached"]) == {"1", "2", "3"}
    assert meta["frontier"] == 4
    assert meta["finished_at"] is not None


def test_manual_schedule_only_runs_in_manual_mode():
    script = dict(NEVER_STOP)
    script["manual_nudges"] = [{
        "at_tick": 2,
        "steps": [{"kind": "relocate", "agent": "Ben", "target": "Lab"}],
        "note": "bring Ben over",
    }]
    manual = _session(script_data=script,
                      settings=RunSettings(max_ticks=3, nudging="manual"))
    manual.run_to_completion()
    nudge = manual.controller.nudges[0]
    assert nudge.status is NudgeStatus.APPLIED
    assert nudge.problem == "bring Ben over"
    assert nudge.created_at == 1              # queued just before tick 2
    assert manual.run.location_at("Ben", manual.run.max_seq) == "Lab"

    off = _session(script_data=script, settings=RunSettings(max_ticks=3))
    off.run_to_completion()
    assert off.controller.nudges == []
    assert all(e.nudge_id is None for e in off.run.events)


def test_auto_mode_reflects_on_summary_cadence():
    script = {
        "agents": {"Ann": {
            "timeline": [{"tick": 5, "say": "wake marker now"}],
            "stop_when": {"never": True},
        }},
        "reflection_replies": [
            {"when_log_contains": "wake marker",
             "reply": "Problem: drift Solution: 1. Move Ben to Lab"},
        ],
    }
    session = _session(script_data=script,
                       settings=RunSettings(max_ticks=8, nudging="auto"))
    session.run_to_completion()
    nudge = session.controller.nudges[0]
    assert nudge.status is NudgeStatus.APPLIED
    assert nudge.created_at == 6              # first summary tick after the marker
    landed = [e for e in session.run.events if e.nudge_id == "n1"]
    assert len(landed) == 1 and landed[0].sim_time == 7
    assert session.run.location_at("Ben", session.run.max_seq) == "Lab"


# ------------------------------------------------------------------ views


def test_status_view_shape():
    session = _session(settings=RunSettings(condition="Base"))
    view = session.status_view()
    assert set(view) == STATUS_VIEW_KEYS
    assert view["state"] == "running"
    assert view["condition"] == "Base"
    assert view["latest_status"] is None
    assert view["agent_locations"] == {"Ann": "Lab", "Ben": "Hall"}
    assert view["counts"] == {"events": 2, "statuses": 0, "changes": 0,
                              "dynamics": 0, "nudges": 0}
    session.run_to_completion()
    done = session.status_view()
    assert done["counts"]["statuses"] > 0
    assert done["latest_status"]["type"] == "status"


def test_stop_and_finish_are_guarded():
    session = _session(script_data=NEVER_STOP, settings=RunSettings(max_ticks=50))
    session.step()
    session.stop()
    assert session.state is RunState.TERMINATED
    assert session.run.reason == "stopped by user"
    with pytest.raises(OrchestratorError, match="already terminated"):
        session.stop()
    session.finish()   # idempotent
    assert session.step() is False


# ---------------------------------------------------------------- reopened


def test_reopen_and_reflect_lifecycle(store):
    live = _session(script_data=NEVER_STOP,
                    settings=RunSettings(max_ticks=50), store=store)
    reopened, meta = reopen_run(store, live.run_id)
    assert reopened.state is RunState.RUNNING
    with pytest.raises(OrchestratorError, match="still running"):
        reflect_run(store, live.run_id, ScriptedGateway())

    live.stop()
    reopened, meta = reopen_run(store, live.run_id)
    assert reopened.state is RunState.TERMINATED
    assert reopened.reason == "stopped by user"
    assert reopened.config.world_name == "Test World"
    assert len(reopened.events) == len(live.run.events)
    assert meta["settings"]["max_ticks"] == 50
    assert reflect_run(store, live.run_id, ScriptedGateway()) == []


def test_summaries_text_filters_record_types():
    records = [
        {"type": "status", "at": 3, "level": "green"},
        {"type": "change", "at": 6, "change": "Ann moved"},
        {"type": "dynamic", "at": 6, "dynamic": "a standoff"},
    ]
    text = summaries_text(records)
    lines = text.splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["type"] == "change"
    assert summaries_text([]) == "(none)"


# ------------------------------------------------------------------- forks


def test_fork_session_inherits_from_parent(store):
    parent = _session(settings=RunSettings(max_ticks=9, condition="Base"),
                      store=store)
    parent.run_to_completion()
    repaired = make_config(agents={"Ann": "Hall", "Ben": "Hall"})
    child = fork_session(store, parent.run_id, [], ScriptedGateway(),
                         script=script_from_dict(phases_script()),
                         new_config=repaired)
    assert child.run_id == "run-0002"
    assert child.parent_id == "run-0001"
    assert child.settings.max_ticks == 9
    assert child.settings.condition == ""     # conditions never inherit
    assert child.run.config.agent("Ann").initial_plan.location == "Hall"
    node = store.load_tree().get("run-0002")
    assert node.parent_id == "run-0001"
    assert node.guardrails == store.load_tree().get("run-0001").guardrails
    child.run_to_completion()


def test_fork_refuses_running_parent(store):
    live = _session(script_data=NEVER_STOP,
                    settings=RunSettings(max_ticks=50), store=store)
    with pytest.raises(OrchestratorError, match="cannot fork a running run"):
        fork_session(store, live.run_id, [], ScriptedGateway(),
                     new_config=make_config())
    live.stop()
