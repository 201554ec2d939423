from __future__ import annotations

import json
import math
import re

import pytest

from dynex.engine import Event, EventKind, render_event_line
from dynex.gateway import (
    ApproxTokenizer,
    GatewayError,
    GatewayRule,
    LiveGateway,
    MAX_SHAPE_RETRIES,
    SHAPE_SAFE_DEFAULTS,
    ScriptedGateway,
    Shape,
    ShapeError,
    TEMPLATE_SHAPES,
    complete_shaped,
    parse_shaped,
    parse_status_line,
    render_template,
    template_catalog,
    truncate_logs,
)

EXPECTED_TEMPLATES = {
    "matrix_cell", "config_compile", "status_update", "change_summary",
    "dynamic_summary", "nudge_reflection", "holistic_reflection",
    "dynamic_list_entries", "config_update", "config_checker",
    "stop_condition_check",
}


def _slots(template_id, **overrides):
    needed = template_catalog()[template_id].slot_names()
    slots = {name: f"<{name}>" for name in needed}
    slots.update(overrides)
    return slots


# ---------------------------------------------------------------- catalog


def test_catalog_is_closed_and_complete():
    catalog = template_catalog()
    assert set(catalog) == EXPECTED_TEMPLATES
    assert set(TEMPLATE_SHAPES) == EXPECTED_TEMPLATES
    assert set(SHAPE_SAFE_DEFAULTS) == EXPECTED_TEMPLATES
    for template in catalog.values():
        assert template.body.strip()
        assert template.expected_shape is TEMPLATE_SHAPES[template.id]


def test_render_substitutes_every_slot():
    for template_id in EXPECTED_TEMPLATES:
        slots = _slots(template_id)
        rendered = render_template(template_id, slots)
        for name, value in slots.items():
            assert "{" + name + "}" not in rendered
            assert value in rendered


def test_render_errors():
    with pytest.raises(GatewayError, match="unknown template"):
        render_template("improv", {})
    needed = sorted(template_catalog()["stop_condition_check"].slot_names())
    with pytest.raises(GatewayError, match=re.escape(f"missing slots: {needed}")):
        render_template("stop_condition_check", {})


# ---------------------------------------------------------------- parsing


def test_parse_status_line_variants():
    assert parse_status_line("\U0001f7e2 All going fine.") == ("green", "All going fine")
    assert parse_status_line("\U0001f7e1 Looking slow") == ("yellow", "Looking slow")
    level, reason = parse_status_line("red circle: agents stuck in a loop")
    assert level == "red" and reason == "agents stuck in a loop"
    words = " ".join(f"w{i}" for i in range(30))
    _, capped = parse_status_line(f"\U0001f534 {words}")
    assert len(capped.split()) == 20
    with pytest.raises(ShapeError):
        parse_status_line("all good, no marker here")


def test_parse_shaped_strictness():
    assert parse_shaped("  hi  ", Shape.FREE_TEXT) == "hi"
    assert parse_shaped('{"a": 1}', Shape.JSON_OBJECT) == {"a": 1}
    with pytest.raises(ShapeError, match="not valid JSON"):
        parse_shaped('Sure! {"a": 1}', Shape.JSON_OBJECT)
    with pytest.raises(ShapeError, match="expected a JSON object"):
        parse_shaped("[1]", Shape.JSON_OBJECT)
    with pytest.raises(ShapeError, match="missing required field 'b'"):
        parse_shaped('{"a": 1}', Shape.JSON_OBJECT, required_fields=("a", "b"))
    assert parse_shaped("[1, 2]", Shape.JSON_LIST) == [1, 2]
    with pytest.raises(ShapeError, match="expected a JSON list"):
        parse_shaped("{}", Shape.JSON_LIST)
    with pytest.raises(ShapeError, match="item 0 is not an object"):
        parse_shaped("[1]", Shape.JSON_LIST, required_fields=("x",))
    with pytest.raises(ShapeError, match="item 1 missing field 'x'"):
        parse_shaped('[{"x": 1}, {}]', Shape.JSON_LIST, required_fields=("x",))


# --------------------------------------------------------- scripted gateway


def test_reply_table_strings_lists_and_callables():
    gateway = ScriptedGateway(replies={
        "stop_condition_check": lambda slots, prompt: f"echo {slots['condition']}",
        "status_update": ["\U0001f7e2 first", "\U0001f7e1 second"],
    })
    slots = _slots("stop_condition_check", condition="C1")
    assert gateway.complete("stop_condition_check", slots) == "echo C1"
    status = _slots("status_update")
    assert gateway.complete("status_update", status) == "\U0001f7e2 first"
    assert gateway.complete("status_update", status) == "\U0001f7e1 second"
    assert gateway.complete("status_update", status) == "\U0001f7e1 second"  # last repeats


def test_shape_safe_defaults_cover_catalog():
    gateway = ScriptedGateway()
    for template_id in EXPECTED_TEMPLATES:
        reply = gateway.complete(template_id, _slots(template_id))
        assert reply == SHAPE_SAFE_DEFAULTS[template_id]
    with pytest.raises(GatewayError, match="no reply"):
        gateway.raw_complete("ad hoc prompt")


def test_rules_match_rendered_prompt_and_fire_once():
    gateway = ScriptedGateway(rules=[
        GatewayRule("nudge_reflection", "Problem: stuck", when_contains="MARKER"),
        GatewayRule("nudge_reflection", "always", when_contains=None, once=False),
    ])
    plain = _slots("nudge_reflection")
    marked = _slots("nudge_reflection", logs="tick 4 MARKER seen")
    assert gateway.complete("nudge_reflection", marked) == "Problem: stuck"
    assert gateway.complete("nudge_reflection", marked) == "always"   # once spent
    assert gateway.complete("nudge_reflection", plain) == "always"    # once=False
    # rules never leak across templates
    assert gateway.complete("stop_condition_check",
                            _slots("stop_condition_check")) == "NOT MET"


def test_complete_shaped_retries_with_corrective():
    gateway = ScriptedGateway(replies={
        "change_summary": ["not json", '{"where": {}, "what": {}, "change": "ok"}'],
    })
    data = complete_shaped(gateway, "change_summary", _slots("change_summary"),
                           required_fields=("where", "what", "change"))
    assert data["change"] == "ok"
    assert len(gateway.audit) == 2
    assert "could not be parsed" in gateway.audit[1].prompt


def test_complete_shaped_gives_up_after_retries():
    gateway = ScriptedGateway(replies={"status_update": "no marker at all"})
    with pytest.raises(ShapeError):
        complete_shaped(gateway, "status_update", _slots("status_update"))
    assert len(gateway.audit) == 1 + MAX_SHAPE_RETRIES


def test_audit_file_records_prompt_then_output(tmp_path):
    path = tmp_path / "audit.ndjson"
    gateway = ScriptedGateway(audit_path=str(path))
    gateway.complete("stop_condition_check", _slots("stop_condition_check"))
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == 2
    assert lines[0]["template_id"] == "stop_condition_check"
    assert lines[0]["output"] is None and "prompt" in lines[0]
    assert lines[1]["output"] == "NOT MET"


# -------------------------------------------------------------- truncation


def test_truncate_logs_token_boundary():
    event = Event(1, 0, "Ann", "Lab", EventKind.SPEAK, "budget boundary check")
    line = render_event_line(event)
    tokens = math.ceil(len(line) / 4)
    assert ApproxTokenizer().count(line) == tokens
    assert truncate_logs([event], tokens) == line
    assert truncate_logs([event], tokens - 1) == ""
    assert ApproxTokenizer().count("") == 0


def test_live_gateway_requires_configuration(monkeypatch):
    monkeypatch.delenv("DYNEX_LLM_BASE_URL", raising=False)
    monkeypatch.delenv("DYNEX_LLM_MODEL", raising=False)
    with pytest.raises(GatewayError, match="DYNEX_LLM_BASE_URL"):
        LiveGateway()
