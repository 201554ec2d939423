"""Acceptance gate: one test per shipped guarantee.

Each test recomputes its expectation from scratch (brute-force replay,
hand-rolled arithmetic, independent oracles) rather than trusting the
module under test, then checks the packaged implementation against it.
"""
from __future__ import annotations

import copy
import json
import random
import time
from importlib import resources

import pytest

from dynex.engine import (
    Event,
    EventKind,
    RunLimits,
    RunState,
    event_to_json,
    render_event_line,
    start_run,
)
from dynex.evalharness import (
    CONDITIONS,
    DEFAULT_ATTEMPTS,
    EVAL_MILESTONES,
    PACKAGED_PACKS,
    ConditionResult,
    ScoreCard,
    condition_settings,
    emit_table,
    load_pack,
    packaged_pack_dir,
    run_pack,
    score_dynamics,
    score_mechanics,
    verify_expected,
)
from dynex.gateway import ScriptedGateway, truncate_logs
from dynex.guardrails import guardrails_from_dict
from dynex.matrix import CellContent, compile_config, new_matrix, submit_cell
from dynex.monitor import MilestoneTrack, advance_milestones, detect_failures
from dynex.orchestrator import RunSettings, create_run
from dynex.reflection import (
    ReflectionError,
    ReflectionFix,
    apply_fixes,
    verify_fix_constraints,
)
from dynex.scripting import ScriptedBackend, script_from_dict
from dynex.store import Store
from dynex.worldconfig import (
    config_from_dict,
    config_to_dict,
    parse_config,
    serialize_config,
    validate_config,
)

from conftest import BASE_GUARDRAILS, config_dict, make_config, phases_script, scripted_run


def _finished_run(config, script_data):
    run = scripted_run(config, script_data)
    while run.state is RunState.RUNNING:
        run.run_tick()
    return run


@pytest.fixture(scope="module")
def eval_suite(tmp_path_factory):
    """All six conditions over every packaged pack, persisted to one store."""
    store = Store(str(tmp_path_factory.mktemp("eval_store")))
    packs = {name: load_pack(packaged_pack_dir(name)) for name in PACKAGED_PACKS}
    started = time.monotonic()
    results = {name: run_pack(pack, attempts=DEFAULT_ATTEMPTS, store=store)
               for name, pack in packs.items()}
    elapsed = time.monotonic() - started
    return store, packs, results, elapsed


# --------------------------------------------------- 1. determinism & rooms


def _isolation_violations(run) -> list[str]:
    """Brute-force room-isolation replay over a finished run's log.

    Location timelines are recomputed here from move events alone, so the
    engine's own bookkeeping is never trusted.
    """
    events = [e.to_dict() for e in run.events]

    def located(agent: str, seq: int) -> str | None:
        room = None
        for e in events:
            if e["seq"] > seq:
                break
            if e["agent"] == agent and e["kind"] == "move":
                room = e["payload"]
        return room

    def witnessed(agent: str, e: dict) -> bool:
        return e["agent"] == agent or located(agent, e["seq"]) == e["location"]

    violations = []
    for agent in run.agents:
        expected = [e["seq"] for e in events if witnessed(agent, e)]
        got = [e.seq for e in run.visible_events(agent, 0)]
        if got != expected:
            violations.append(f"{agent}: visible_events {got} != replay {expected}")
    for agent, state in run.agents.items():
        for memory in state.memories:
            origin = events[memory.origin_seq - 1]
            assert origin["seq"] == memory.origin_seq
            if not witnessed(agent, origin):
                violations.append(
                    f"{agent}: remembers seq {origin['seq']} emitted in "
                    f"{origin['location']} while in {located(agent, origin['seq'])}")
    return violations


def test_criterion_1_engine_determinism_and_room_isolation():
    started = time.monotonic()
    repeats = 10
    for name in PACKAGED_PACKS:
        pack = load_pack(packaged_pack_dir(name))
        for label in ("Base", "ManR"):
            logs = []
            first_run = None
            for _ in range(repeats):
                session = create_run(
                    pack.config_for(label),
                    pack.guardrails,
                    settings=condition_settings(label),
                    script=pack.script_for(label),
                )
                session.run_to_completion()
                logs.append("\n".join(event_to_json(e)
                                      for e in session.run.events).encode("utf-8"))
                first_run = first_run or session.run
            assert all(log == logs[0] for log in logs), \
                f"{name}/{label}: event logs differ across repeated runs"
            # each repeat is byte-identical to the first, so replaying the
            # first covers every log produced for this scenario/condition
            assert _isolation_violations(first_run) == []
    assert time.monotonic() - started < 30.0


# ----------------------------------------------------- 2. nudging efficacy


def test_criterion_2_nudging_efficacy_ordering(eval_suite):
    _, packs, results, elapsed = eval_suite
    for name, pack in packs.items():
        assert verify_expected(pack, results[name]) == [], name
        mech = {label: results[name][label].card.mechanics for label in CONDITIONS}
        assert mech["Base"] <= mech["Auto"] <= mech["ManR"], name
        assert mech["BaseR"] <= mech["AutoR"] <= mech["ManR"], name
        top = results[name]["ManR"].card
        assert top.mechanics == EVAL_MILESTONES == 5, name
        assert top.dynamics_denominator == 5, name
    assert elapsed < 120.0


# ------------------------------------------------------ 3. rubric arithmetic


def test_criterion_3_scoring_rubric_arithmetic(config):
    guardrails = guardrails_from_dict(copy.deepcopy(BASE_GUARDRAILS))

    one = _finished_run(config, phases_script(ticks=(1,)))
    assert (score_mechanics(one, guardrails), EVAL_MILESTONES) == (1, 5)

    three = _finished_run(make_config(), phases_script(ticks=(1, 2, 3)))
    assert score_dynamics(three, [1, 2, 3], guardrails) == (3, 3)

    two = _finished_run(make_config(), phases_script(ticks=(1, 2)))
    assert score_dynamics(two, [2], guardrails) == (1, 2)

    none = _finished_run(make_config(), phases_script(ticks=()))
    assert score_mechanics(none, guardrails) == 0
    assert score_dynamics(none, [], guardrails) == (0, 0)

    column = (5, 4, 5, 5, 5, 5, 5)
    results = {f"s{i}": {"ManR": ConditionResult(label="ManR",
                                                 card=ScoreCard(m, m, m))}
               for i, m in enumerate(column)}
    table = emit_table(results)
    average = next(line for line in table.splitlines()
                   if line.startswith("Average"))
    assert "4.86" in average   # 34/7 rounded to 2 decimals


# -------------------------------------------------- 4. guardrail state machine


def test_criterion_4_guardrail_state_machine():
    rng = random.Random(20260817)
    guardrails = guardrails_from_dict(copy.deepcopy(BASE_GUARDRAILS))
    phrases = ("phase 1", "phase 2", "phase 3", "phase 4", "phase 5",
               "disaster strikes", "all quiet here", "phase two soon")
    config = make_config()

    for _ in range(1000):
        ticks = rng.randint(1, 5)
        timeline = [{"tick": t, "say": rng.choice(phrases)}
                    for t in range(1, ticks + 1)
                    for _ in range(rng.randint(0, 2))]
        script = script_from_dict({"agents": {
            "Ann": {"timeline": timeline, "stop_when": {"tick_at_least": ticks + 1}},
            "Ben": {"stop_when": {"tick_at_least": 1}},
        }})
        run = start_run(config, ScriptedBackend(script),
                        RunLimits(max_ticks=ticks + 1))

        track = MilestoneTrack(milestones=guardrails.milestones)
        previous: dict[int, tuple] = {}
        while run.state is RunState.RUNNING:
            run.run_tick()
            for _ in range(rng.randint(1, 3)):
                if rng.random() < 0.6:
                    track = advance_milestones(run, track, gateway=None)
                    ids = sorted(track.reached)
                    # prefix property: reached is always exactly 1..frontier-1
                    assert ids == list(range(1, len(ids) + 1))
                    assert track.frontier == len(ids) + 1
                    # monotonicity: nothing unmarked, stamps never rewritten
                    assert set(ids) >= set(previous)
                    for mid, stamp in previous.items():
                        assert track.reached[mid] == stamp
                    previous = dict(track.reached)
                else:
                    for hit in detect_failures(run, guardrails, gateway=None):
                        assert 0 <= hit.index < len(guardrails.failure_conditions)
                        assert hit.evidence is not None
                        low, high = hit.evidence
                        assert 1 <= low <= high <= run.max_seq


# ---------------------------------------------------- 5. intervention audit


def _superseded_nudge_store(tmp_path_factory) -> Store:
    """A manual-mode run whose second proposal supersedes (rejects) the first."""
    store = Store(str(tmp_path_factory.mktemp("audit_store")))
    script = script_from_dict({
        "agents": {
            "Ann": {"timeline": [{"tick": 5, "say": "marker alpha"},
                                 {"tick": 11, "say": "marker beta"}],
                    "stop_when": {"never": True}},
            "Ben": {"stop_when": {"tick_at_least": 1}},
        },
        "reflection_replies": [
            {"when_log_contains": "marker alpha",
             "reply": "Problem: stall Solution: 1. Move Ben to Lab"},
            {"when_log_contains": "marker beta",
             "reply": "Problem: drift Solution: 1. Move Ben to Hall"},
        ],
    })
    session = create_run(make_config(),
                         guardrails_from_dict(copy.deepcopy(BASE_GUARDRAILS)),
                         settings=RunSettings(max_ticks=13, nudging="manual"),
                         store=store, script=script)
    session.run_to_completion()
    return store


def test_criterion_5_intervention_audit(eval_suite, tmp_path_factory):
    eval_store, _, _, _ = eval_suite
    applied_seen = rejected_seen = 0
    for store in (eval_store, _superseded_nudge_store(tmp_path_factory)):
        for run_id in store.run_ids():
            run_store = store.open_run(run_id)
            events = run_store.read_events()
            tagged = {e.seq: e.nudge_id for e in events if e.nudge_id is not None}
            claimed: dict[int, str] = {}
            for nudge in run_store.latest_nudges():
                if nudge["status"] == "applied":
                    applied_seen += 1
                    span = nudge["applied_events"]
                    assert span is not None, (run_id, nudge["id"])
                    low, high = span
                    for seq in range(low, high + 1):
                        assert tagged.get(seq) == nudge["id"], (run_id, seq)
                        assert seq not in claimed, (run_id, seq)
                        claimed[seq] = nudge["id"]
                else:
                    rejected_seen += nudge["status"] == "rejected"
                    untouched = [s for s, nid in tagged.items()
                                 if nid == nudge["id"]]
                    assert untouched == [], (run_id, nudge["id"])
            # bijection: every provenance-tagged event is claimed by exactly
            # one applied nudge, and applied nudges claim nothing else
            assert claimed == tagged, run_id
    assert applied_seen > 0
    assert rejected_seen > 0


# ---------------------------------------------- 6. reflection constraints


def _fix(solution: str) -> list[ReflectionFix]:
    return [ReflectionFix(problem="Agents stall.", problem_example="Tick 3.",
                          solution=solution, solution_example="Like so.",
                          selected=True)]


def _agent(name: str) -> dict:
    return {
        "first_name": name,
        "private_bio": "",
        "public_bio": "Helper.",
        "directives": ["Assist."],
        "initial_plan": {"description": "Help out.",
                         "stop_condition": "Told to stop.",
                         "location": "Lab"},
    }


def test_criterion_6_reflection_constraint_verifier():
    rng = random.Random(6)
    original = make_config()
    plain = _fix("Tighten the schedule.")
    moderator = _fix("Add a moderator to keep order.")

    def bio(c):
        c["agents"][0]["public_bio"] = f"Researcher {rng.randint(0, 999)}."
        return c

    def directives(c):
        c["agents"][1]["directives"] = ["Watch closely.", "Take notes."]
        return c

    def plan(c):
        c["agents"][0]["initial_plan"]["description"] = "Run the phases briskly."
        return c

    def room_description(c):
        c["locations"][0]["description"] = f"A bright lab ({rng.randint(0, 99)})."
        return c

    def add_agent_with_moderator_fix(c):
        c["agents"].append(_agent("Mia"))
        return c

    def add_room(c):
        c["locations"].append({"name": "Attic", "description": "Dusty."})
        return c

    def remove_room(c):
        del c["locations"][1]
        return c

    def rename_agent(c):
        c["agents"][1]["first_name"] = "Bob"
        return c

    def add_agent_plain(c):
        c["agents"].append(_agent("Mia"))
        return c

    def add_two_agents(c):
        c["agents"].extend([_agent("Mia"), _agent("Moe")])
        return c

    def break_schema(c):
        del c["agents"]
        return c

    def invalid_plan_location(c):
        c["agents"][0]["initial_plan"]["location"] = "Moon"
        return c

    pool = [
        (bio, True, plain),
        (directives, True, plain),
        (plan, True, moderator),
        (room_description, True, plain),
        (add_agent_with_moderator_fix, True, moderator),
        (add_room, False, plain),
        (remove_room, False, plain),
        (rename_agent, False, moderator),
        (add_agent_plain, False, plain),
        (add_two_agents, False, moderator),
        (break_schema, False, plain),
        (invalid_plan_location, False, plain),
    ]

    accepted = rejected = 0
    for case in range(50):
        mutate, compliant, fixes = pool[case % len(pool)]
        candidate = mutate(config_dict())
        problems = verify_fix_constraints(original, candidate, fixes)
        assert (problems == []) == compliant, (case, mutate.__name__, problems)

        gateway = ScriptedGateway(replies={"config_update": json.dumps(candidate)})
        if compliant:
            updated = apply_fixes(original, fixes, gateway)
            assert config_to_dict(updated) == candidate
            accepted += 1
        else:
            with pytest.raises(ReflectionError):
                apply_fixes(original, fixes, gateway)
            rejected += 1
    assert accepted + rejected == 50
    assert accepted >= 20 and rejected >= 20


# ------------------------------------------------- 7. config format fidelity


def _compile_ready_matrix():
    matrix = new_matrix("Acceptance")
    ideas = {
        "Agents": ["Ann the researcher", "Ben the assistant"],
        "Actions": ["Announce each phase in order"],
        "Locations": ["A lab and a hall"],
        "Milestones": [f"Phase {i} announced" for i in range(1, 6)],
        "StopCondition": ["All five phases are announced."],
        "FailureConditions": ["Someone announces a disaster."],
    }
    groundings = {
        "Milestones": " ".join(f"{i}) Ann says phase {i}" for i in range(1, 6)),
    }
    for dimension, options in ideas.items():
        submit_cell(matrix, dimension, "Idea",
                    CellContent(options=[(text, True) for text in options]))
        submit_cell(matrix, dimension, "Grounding",
                    CellContent(text=groundings.get(dimension,
                                                    f"Grounding for {dimension}.")))
    return matrix


def test_criterion_7_config_format_fidelity():
    raw_by_name = {}
    for name in ("classroom_config.json", "prom_config.json"):
        raw = resources.files("dynex").joinpath("data", name).read_text(encoding="utf-8")
        raw_by_name[name] = raw
        parsed = parse_config(raw)
        report = validate_config(parsed)
        assert report.ok, (name, report)
        assert serialize_config(parsed) == raw, f"{name}: round trip not byte-identical"
        assert config_from_dict(config_to_dict(parsed)) == parsed

    matrix = _compile_ready_matrix()
    classroom_raw = raw_by_name["classroom_config.json"]
    stray = json.loads(classroom_raw)
    stray["mood"] = "tense"   # unknown field must be refused, then corrected
    gateway = ScriptedGateway(replies={
        "config_compile": [json.dumps(stray), classroom_raw]})
    compiled, guardrails = compile_config(matrix, gateway)
    assert len(gateway.audit) == 2   # first reply rejected on schema

    data = config_to_dict(compiled)
    assert set(data) == {"world_name", "locations", "agents"}
    for location in data["locations"]:
        assert set(location) == {"name", "description"}
    for agent in data["agents"]:
        assert set(agent) == {"first_name", "private_bio", "public_bio",
                              "directives", "initial_plan"}
        assert set(agent["initial_plan"]) == {"description", "stop_condition",
                                              "location"}
    assert serialize_config(compiled) == classroom_raw
    assert len(guardrails.milestones) == 5


# ------------------------------------------------ 8. truncation correctness


def test_criterion_8_truncation_matches_oracle():
    rng = random.Random(8)
    kinds = ("move", "speak", "act", "plan_update")
    agents = ("Ann", "Ben", "Cam")
    rooms = ("Lab", "Hall", "Yard")
    words = ("phase", "drill", "marker", "hello", "announcement",
             "w", "keepsake", "xxxxxxxxxxxx")

    def oracle_tokens(text: str) -> int:
        return 0 if not text else (len(text) + 3) // 4   # independent ceil

    for case in range(200):
        events = []
        for seq in range(1, rng.randint(0, 25) + 1):
            payload = " ".join(rng.choice(words)
                               for _ in range(rng.randint(1, 8)))
            events.append(Event(seq=seq, sim_time=rng.randint(0, 30),
                                agent=rng.choice(agents),
                                location=rng.choice(rooms),
                                kind=EventKind(rng.choice(kinds)),
                                payload=payload))
        lines = [render_event_line(e) for e in events]
        if case % 2 == 0 and lines:
            # exact boundary: the budget of a randomly chosen suffix
            start = rng.randint(0, len(lines) - 1)
            budget = oracle_tokens("\n".join(lines[start:]))
        else:
            budget = rng.randint(0, oracle_tokens("\n".join(lines)) + 5)

        expected = ""
        for start in range(0, len(lines) + 1):   # longest suffix first
            rendered = "\n".join(lines[start:])
            if oracle_tokens(rendered) <= budget:
                expected = rendered
                break
        assert truncate_logs(events, budget) == expected, (case, budget)
