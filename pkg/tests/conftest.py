"""Shared fixtures: a tiny two-room world and script factories.

The default world has Ann (Lab) and Ben (Hall). The default guardrails carry
five predicate milestones ("phase 1".."phase 5" spoken by Ann), so milestone
evaluation stays mechanical and deterministic in every test.
"""
from __future__ import annotations

import copy
import json

import pytest

from dynex.engine import RunLimits, start_run
from dynex.guardrails import guardrails_from_dict
from dynex.scripting import ScriptedBackend, script_from_dict
from dynex.worldconfig import config_from_dict

BASE_CONFIG = {
    "world_name": "Test World",
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

BASE_GUARDRAILS = {
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


def config_dict(agents=None, locations=None, world_name="Test World"):
    """A config dict; agents maps name -> starting location."""
    data = copy.deepcopy(BASE_CONFIG)
    data["world_name"] = world_name
    if locations is not None:
        data["locations"] = [
            {"name": name, "description": f"The {name}."} for name in locations
        ]
    if agents is not None:
        template = data["agents"][0]
        data["agents"] = []
        for name, location in agents.items():
            agent = copy.deepcopy(template)
            agent["first_name"] = name
            agent["initial_plan"]["location"] = location
            data["agents"].append(agent)
    return data


def make_config(agents=None, locations=None, world_name="Test World"):
    return config_from_dict(config_dict(agents, locations, world_name))


def phases_script(ticks=(1, 2, 3), stop_tick=None, notable=(2,)):
    """Ann announces one phase per listed tick; Ben idles and halts."""
    last = max(ticks) if ticks else 0
    stop = stop_tick if stop_tick is not None else last + 1
    return {
        "agents": {
            "Ann": {
                "timeline": [{"tick": t, "say": f"phase {t}"} for t in ticks],
                "stop_when": {"tick_at_least": stop},
            },
            "Ben": {"stop_when": {"tick_at_least": 1}},
        },
        "notable_milestones": list(notable),
    }


def scripted_run(config, script_data, max_ticks=40, max_wall_seconds=None):
    backend = ScriptedBackend(script_from_dict(script_data))
    limits = RunLimits(max_ticks=max_ticks, max_wall_seconds=max_wall_seconds)
    return start_run(config, backend, limits)


@pytest.fixture
def config():
    return config_from_dict(copy.deepcopy(BASE_CONFIG))


@pytest.fixture
def guardrails():
    return guardrails_from_dict(copy.deepcopy(BASE_GUARDRAILS))


@pytest.fixture
def guardrails_dict():
    return copy.deepcopy(BASE_GUARDRAILS)


@pytest.fixture
def write_json(tmp_path):
    def _write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
        return str(path)

    return _write
