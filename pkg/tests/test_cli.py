from __future__ import annotations

import json

import pytest

from dynex.cli import main
from dynex.evalharness import packaged_pack_dir
from dynex.gateway import ENV_BASE_URL, ENV_MODEL
from dynex.store import Store
from dynex.worldconfig import load_config

from conftest import BASE_GUARDRAILS, config_dict, phases_script


@pytest.fixture
def world(tmp_path, write_json):
    return {
        "config": write_json("config.json", config_dict()),
        "guardrails": write_json("guardrails.json", BASE_GUARDRAILS),
        "script": write_json("script.json", phases_script()),
        "store": str(tmp_path / "store"),
    }


def _run_args(world, *extra):
    return ["run", "--config", world["config"], "--guardrails", world["guardrails"],
            "--script", world["script"], "--store", world["store"], *extra]


# --------------------------------------------------------------------- run


def test_run_completes_and_persists(world, capsys):
    assert main(_run_args(world)) == 0
    out = capsys.readouterr().out
    assert "started run run-0001 (Test World)" in out
    assert "run run-0001: completed (all stop conditions met) after tick 4" in out
    assert "milestones reached: 3, frontier: 4" in out
    assert "tick 3: green" in out
    assert Store(world["store"]).run_ids() == ["run-0001"]


def test_run_quiet_suppresses_status_lines(world, capsys):
    assert main(_run_args(world, "--quiet")) == 0
    assert "tick 3:" not in capsys.readouterr().out


def test_errors_exit_2_with_message(world, capsys):
    code = main(["run", "--config", "no-such-config.json",
                 "--guardrails", world["guardrails"], "--store", world["store"]])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


def test_live_backend_requires_provider_env(world, capsys, monkeypatch):
    monkeypatch.delenv(ENV_BASE_URL, raising=False)
    monkeypatch.delenv(ENV_MODEL, raising=False)
    assert main(_run_args(world, "--backend", "live")) == 2
    assert "error: live gateway needs DYNEX_LLM_BASE_URL" in capsys.readouterr().err


# ------------------------------------------------------------------ matrix


def test_matrix_authoring_flow(tmp_path, write_json, capsys):
    mfile = str(tmp_path / "m.json")
    assert main(["matrix", "new", mfile, "--scenario", "Fire Drill"]) == 0

    fill_replies = write_json("fill.json", {
        "matrix_cell": json.dumps(["Three seniors", "A chaperone"])})
    assert main(["matrix", "fill", mfile, "Agents", "Idea",
                 "--replies", fill_replies]) == 0
    out = capsys.readouterr().out
    assert "1. Three seniors" in out
    assert "2. A chaperone" in out
    assert "draft saved to Agents/Idea" in out

    assert main(["matrix", "submit", mfile, "Agents", "Idea", "--check", "1"]) == 0
    assert main(["matrix", "submit", mfile, "Agents", "Grounding",
                 "--text", "Ann and Ben stay in character."]) == 0

    simple = {
        "Actions": "Announce each phase in order.",
        "Locations": "Lab and Hall only.",
        "StopCondition": "All five phases are announced.",
        "FailureConditions": "Someone announces a disaster.",
    }
    for dimension, idea in simple.items():
        assert main(["matrix", "submit", mfile, dimension, "Idea",
                     "--option", idea]) == 0
        assert main(["matrix", "submit", mfile, dimension, "Grounding",
                     "--text", f"Grounding for {dimension}."]) == 0
    assert main(["matrix", "submit", mfile, "Milestones", "Idea",
                 "--option", "Phase 1 announced",
                 "--option", "Phase 2 announced",
                 "--option", "Phase 3 announced"]) == 0
    assert main(["matrix", "submit", mfile, "Milestones", "Grounding", "--text",
                 "1) Ann says phase 1 2) Ann says phase 2 3) Ann says phase 3"]) == 0
    capsys.readouterr()

    assert main(["matrix", "show", mfile]) == 0
    shown = capsys.readouterr().out
    assert "scenario: Fire Drill" in shown
    assert "[Agents/Idea] submitted" in shown
    assert "[x] 1. Three seniors" in shown
    assert "[ ] 2. A chaperone" in shown

    config_out = str(tmp_path / "compiled_config.json")
    guardrails_out = str(tmp_path / "compiled_guardrails.json")
    compile_replies = write_json("compile.json", {
        "config_compile": json.dumps(config_dict())})
    assert main(["matrix", "compile", mfile, "--config", config_out,
                 "--guardrails", guardrails_out, "--replies", compile_replies]) == 0
    out = capsys.readouterr().out
    assert f"wrote config to {config_out}" in out
    assert f"wrote guardrails to {guardrails_out}" in out

    assert load_config(config_out).world_name == "Test World"
    with open(guardrails_out, encoding="utf-8") as fh:
        saved = json.load(fh)
    assert [m["description"] for m in saved["milestones"]] == [
        "Phase 1 announced", "Phase 2 announced", "Phase 3 announced"]
    assert saved["milestones"][1]["criteria"] == "Ann says phase 2"
    assert saved["stop_condition"] == "All five phases are announced."


def test_matrix_rejects_unknown_cell(tmp_path, capsys):
    mfile = str(tmp_path / "m.json")
    main(["matrix", "new", mfile, "--scenario", "X"])
    capsys.readouterr()
    assert main(["matrix", "fill", mfile, "Vibes", "Idea"]) == 2
    assert "error: unknown dimension 'Vibes'" in capsys.readouterr().err


# ----------------------------------------------------------------- reflect


def test_reflect_defaults_to_no_fixes(world, capsys):
    main(_run_args(world, "--quiet"))
    capsys.readouterr()
    assert main(["reflect", "run-0001", "--store", world["store"]]) == 0
    assert "reflection proposed no fixes" in capsys.readouterr().out


def test_reflect_select_and_fork(world, write_json, capsys):
    main(_run_args(world, "--quiet"))
    updated = config_dict()
    updated["agents"][0]["public_bio"] = "A decisive researcher."
    replies = write_json("replies.json", {
        "holistic_reflection": json.dumps([{
            "problem": "Agents stall mid-drill",
            "problem_example": "Seen at tick 3.",
            "solution": "Do the fix.",
            "solution_example": "Like this.",
        }]),
        "config_update": json.dumps(updated),
        "config_checker": json.dumps(updated),
    })
    capsys.readouterr()

    assert main(["reflect", "run-0001", "--store", world["store"],
                 "--replies", replies, "--select", "1"]) == 0
    out = capsys.readouterr().out
    assert "1. problem: Agents stall mid-drill" in out
    assert "selected fixes: [1] (re-run with --fork to apply)" in out
    assert Store(world["store"]).run_ids() == ["run-0001"]

    assert main(["reflect", "run-0001", "--store", world["store"],
                 "--replies", replies, "--select", "1", "--fork",
                 "--script", world["script"]]) == 0
    out = capsys.readouterr().out
    assert "forked run run-0002 from run-0001" in out
    assert "run run-0002: completed" in out
    assert Store(world["store"]).run_ids() == ["run-0001", "run-0002"]

    code = main(["reflect", "run-0001", "--store", world["store"],
                 "--replies", replies, "--select", "5"])
    assert code == 2
    assert "error: --select 5: only 1 fixes" in capsys.readouterr().err


# -------------------------------------------------------------------- eval


def test_eval_packaged_pack_matches_ground_truth(tmp_path, capsys):
    out_dir = str(tmp_path / "scores")
    code = main(["eval", packaged_pack_dir("classroom"),
                 "--attempts", "1", "--out", out_dir])
    assert code == 0
    out = capsys.readouterr().out
    assert "Mechanics Scores" in out
    assert "Dynamics Scores" in out
    assert f"wrote tables.txt and scores.csv to {out_dir}" in out
    assert (tmp_path / "scores" / "tables.txt").exists()
    csv_text = (tmp_path / "scores" / "scores.csv").read_text(encoding="utf-8")
    assert csv_text.startswith("scenario,metric,Base,Auto,Man,BaseR,AutoR,ManR")


def test_eval_flags_ground_truth_mismatch(tmp_path, capsys):
    directory = tmp_path / "minipack"
    directory.mkdir()
    files = {
        "config.json": config_dict(),
        "config_reflected.json": config_dict(),
        "guardrails.json": BASE_GUARDRAILS,
        "script.json": phases_script(ticks=(1,)),
        "expected.json": {"Base": {"mechanics": 5, "dynamics": "5/5"}},
    }
    for name, data in files.items():
        (directory / name).write_text(json.dumps(data), encoding="utf-8")

    assert main(["eval", str(directory), "--attempts", "1"]) == 1
    err = capsys.readouterr().err
    assert "ground-truth mismatches:" in err
    assert "minipack: Base: mechanics 1, expected 5" in err
