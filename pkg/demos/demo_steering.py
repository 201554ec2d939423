"""
Steering a live run with nudges, then reflecting and forking
============================================================

A run under manual nudging: the monitor watches the log, proposes a nudge
when the run drifts, and waits for approval. The operator can also submit
nudges directly. Both kinds reduce to the same two primitives (Relocate,
ForceSpeak) and the same audit trail. Afterwards, holistic reflection
proposes config fixes and a fork starts a corrected child run.

Everything below is scripted, so the demo is deterministic and offline.
"""

import json
import tempfile

from dynex.engine import InterventionStep
from dynex.guardrails import guardrails_from_dict
from dynex.nudge import nudge_to_dict
from dynex.orchestrator import (
    RunSettings,
    create_run,
    fork_session,
    reflect_run,
    scripted_gateway_for,
)
from dynex.scripting import script_from_dict
from dynex.store import Store
from dynex.worldconfig import config_from_dict

CONFIG = {
    "world_name": "Phase Drill",
    "locations": [
        {"name": "Lab", "description": "A lab."},
        {"name": "Hall", "description": "A hall."},
    ],
    "agents": [
        {
            "first_name": "Ann",
            "private_bio": "Keeps a secret checklist.",
            "public_bio": "Researcher.",
            "directives": ["Work through the phases."],
            "initial_plan": {
                "description": "Run the phases.",
                "stop_condition": "All phases done.",
                "location": "Lab",
            },
        },
        {
            "first_name": "Ben",
            "private_bio": "",
            "public_bio": "Assistant.",
            "directives": ["Watch."],
            "initial_plan": {
                "description": "Observe.",
                "stop_condition": "Told to stop.",
                "location": "Hall",
            },
        },
    ],
}

GUARDRAILS = {
    "stop_condition": "All five phases are announced.",
    "milestones": [
        {
            "id": i,
            "description": f"Phase {i} announced",
            "criteria": f"Ann says phase {i}",
            "predicate": {"contains": f"phase {i}", "agent": "Ann", "kind": "speak"},
        }
        for i in range(1, 6)
    ],
    "failure_conditions": ["Someone announces a disaster."],
    "failure_predicates": [{"contains": "disaster"}],
}

# Ann announces two phases, drops a marker, then idles; the run drifts.
SCRIPT = {
    "agents": {
        "Ann": {
            "timeline": [
                {"tick": 2, "say": "phase 1"},
                {"tick": 4, "say": "phase 2"},
                {"tick": 5, "say": "wake marker now"},
            ],
            "stop_when": {"never": True},
        },
        "Ben": {"stop_when": {"never": True}},
    },
    # once the marker is in the log, the reflection pass proposes a nudge
    "reflection_replies": [
        {"when_log_contains": "wake marker",
         "reply": "Problem: run has drifted Solution: 1. Move Ben to Lab"},
    ],
}

# Scripted replies for the post-run holistic reflection and config repair.
FIXED_CONFIG = json.loads(json.dumps(CONFIG))
FIXED_CONFIG["agents"][0]["public_bio"] = "A decisive researcher."
REPLIES = {
    "holistic_reflection": json.dumps([
        {"problem": "Ann never announces the later phases",
         "problem_example": "Nothing after phase 2.",
         "solution": "Make Ann more decisive.",
         "solution_example": "A firmer public bio."},
    ]),
    "config_update": json.dumps(FIXED_CONFIG),
    "config_checker": json.dumps(FIXED_CONFIG),
}

store = Store(tempfile.mkdtemp(prefix="dynex-demo-"))
script = script_from_dict(SCRIPT)
gateway = scripted_gateway_for(script, replies=REPLIES)
session = create_run(
    config_from_dict(CONFIG),
    guardrails_from_dict(GUARDRAILS),
    settings=RunSettings(nudging="manual", max_ticks=60),
    store=store,
    gateway=gateway,
    script=script,
)
print(f"started {session.run_id} in store {store.root}")

# Tick until the monitor proposes something.
while session.step() and session.controller.pending() is None:
    pass
proposal = session.controller.pending()
print(f"\ntick {session.run.tick}: proposed nudge {proposal.id}")
print(json.dumps(nudge_to_dict(proposal), indent=2))

# Approve it; the steps land at the start of the next tick.
session.controller.approve(proposal.id)
session.step()
print(f"after approval: {proposal.status.value}, events {proposal.applied_events}")

# Manual nudge: pull Ann over and have her rally the room.
manual = session.controller.manual(
    [InterventionStep.relocate("Ann", "Hall"),
     InterventionStep.force_speak("Ann", "Regroup in the hall.")],
    note="pull everyone together",
)
session.step()
print(f"manual nudge {manual.id}: {manual.status.value}, events {manual.applied_events}")

session.stop("demo complete")
print(f"\nstopped at tick {session.run.tick}; "
      f"milestones reached: {session.monitor.track.reached_count()}")

# Post-run reflection proposes fixes; fork a child with the selected one.
fixes = reflect_run(store, session.run_id, gateway, run=session.run)
for fix in fixes:
    print(f"fix: {fix.problem} -> {fix.solution}")
fixes[0].selected = True
child = fork_session(store, session.run_id, [fixes[0]], gateway, script=script)
child.run_to_completion()
print(f"forked {child.run_id}: {child.run.state.value} after tick {child.run.tick}")

tree = store.load_tree().to_dict()
for node in tree["nodes"]:
    print(f"tree: {node['run_id']} parent={node['parent_id']}")
