"""The 6x2 configuration matrix: guided cell filling, submission, compilation.

Each scenario gets one matrix document. Columns are the six dimensions, rows
are Idea and Grounding. Idea cells hold checkable option lists, Grounding
cells hold free text with a saved version history per column.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import (
    MAX_SHAPE_RETRIES,
    LlmGateway,
    Shape,
    ShapeError,
    parse_shaped,
)
from .guardrails import GuardrailSet, Milestone, check_guardrails
from .worldconfig import (
    ConfigFormatError,
    SimConfig,
    config_from_dict,
    validate_config,
)

DIMENSIONS = (
    "Agents",
    "Actions",
    "Locations",
    "Milestones",
    "StopCondition",
    "FailureConditions",
)
ROWS = ("Idea", "Grounding")

_DISPLAY = {"StopCondition": "Stop Condition", "FailureConditions": "Failure Condition"}

MILESTONES_MIN = 3
MILESTONES_MAX = 8

# Per-cell guidance handed to the fill prompt, one entry per matrix slot.
CELL_GUIDELINES: dict[tuple[str, str], str] = {
    ("Agents", "Idea"): (
        'Focus on amount and type of agents needed. Consider different TYPES '
        'separated in response array. E.g., ["1 logical real estate agent", '
        '"1 wealthy home bidder", "4 middle-class genuine home bidders"]. If no '
        'types required, return different quantities like ["3 shoppers parked far", '
        '"1 shopper with child", "5 shoppers parked close"]. Keep agent types separated.'
    ),
    ("Agents", "Grounding"): (
        'Focus on personality and brief description with explicit "stakes" - what '
        'will embarrass them, make them happy, what they urgently need. E.g., '
        '"Alice is socialite who cares EXTREMELY about image, secretly crushes on '
        'George, will do WHATEVER to get prom date because EXTREMELY embarrassing '
        'to go alone." Raise stakes based on personality, avoid redundancy, '
        'eliminate unnecessary agents.'
    ),
    ("Actions", "Idea"): (
        'Focus on what each agent type needs to do. Actions span all agent types. '
        'Every action = agent communicating task completion verbally. E.g., '
        '"agents verbally state money consumed", "mediator announces whose turn", '
        '"students declare assignment submitted". Organize by agent type. Must '
        'specify WHEN discussion occurs, not just that it happens. Avoid obvious '
        'actions like "declare interest".'
    ),
    ("Actions", "Grounding"): (
        'Focus on LOGISTICS of actions in simulation. Description for EACH action. '
        'Consider timing, type of tasks, sequences. E.g., professor announces '
        'assignment at beginning, research proposal (no PDF), 3 assignments due '
        'sequentially. Explanations NOT related to personality, remain objective. '
        "Agents can't submit PDFs/files - everything verbal/pretend. Simple "
        'simulation-based actions.'
    ),
    ("Locations", "Idea"): (
        'Focus on location where agents exist and perform actions. Return result '
        'for each room. E.g., "1 classroom", "1 dorm room", "community meeting '
        'room". Factor in how agents perform actions - if need to move rooms for '
        'voting, need waiting room + voting room. Don\'t create unnecessary rooms. '
        'Only physical world locations, not "submission portals".'
    ),
    ("Locations", "Grounding"): (
        'Focus on implementation of location ideas while factoring agent actions. '
        'DO NOT ADD NEW ROOMS beyond LocationsXIdea. State who can enter each '
        'room, where agents start. E.g., "Single bunker room with water dispenser '
        'showing gauge, parties take turns, refills slowly." One sentence max 100 '
        'characters describing agent interactions only.'
    ),
    ("Milestones", "Idea"): (
        'Focus on chronological simulation order and quantitative measurement. '
        'E.g., late policy simulation: "1. Late policy announced, 2. Assignment 1 '
        'completed, 3. Assignment 2 completed". Should reflect what can be '
        'quantitatively measured. 3-8 milestones per simulation, max 10 words '
        'each. Provide logical progression through simulation stages.'
    ),
    ("Milestones", "Grounding"): (
        'Focus on specifics of each milestone. What should occur for milestone '
        'completion? E.g., "Assignment 1 completed - all student agents submitted '
        'assignment 1". Numbers labeled chronologically. Clear criteria for '
        'milestone achievement.'
    ),
    ("StopCondition", "Idea"): (
        'Focus on state where simulation can stop. E.g., "agreement made between '
        'agents", "no more funds", "3 rounds completed". Keep simple, not overly '
        'complex scenarios.'
    ),
    ("StopCondition", "Grounding"): (
        'Focus on specifics of stop condition. What room should it be in? What '
        'should agents have accomplished? Clarify exact state for simulation end.'
    ),
    ("FailureConditions", "Idea"): (
        'Focus on scenarios where simulation derails. E.g., "agents wait '
        'indefinitely for acknowledgments", "agents try impossible physical '
        'actions", "indefinite waiting to submit assignments".'
    ),
    ("FailureConditions", "Grounding"): (
        'Focus on specifics of failure condition. What exactly means failure? '
        'What logic went wrong? Detailed explanation of failure scenarios.'
    ),
}


class MatrixError(ValueError):
    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


@dataclass
class CellContent:
    options: list[tuple[str, bool]] = field(default_factory=list)  # Idea rows
    text: str = ""                                                 # Grounding rows
    submitted: bool = False
    stale: bool = False
    submitted_at: int = 0   # submission counter, 0 = never

    def checked(self) -> list[str]:
        return [text for text, on in self.options if on]


@dataclass
class GroundingHistory:
    versions: list[str] = field(default_factory=list)
    active: int = -1


@dataclass
class MatrixSpec:
    scenario: str
    cells: dict[tuple[str, str], CellContent] = field(default_factory=dict)
    grounding_versions: dict[str, GroundingHistory] = field(default_factory=dict)
    submit_counter: int = 0

    def cell(self, dimension: str, row: str) -> CellContent:
        _check_slot(dimension, row)
        return self.cells[(dimension, row)]

    def all_submitted(self) -> bool:
        return all(c.submitted for c in self.cells.values())


def _check_slot(dimension: str, row: str) -> None:
    if dimension not in DIMENSIONS:
        raise MatrixError(f"unknown dimension '{dimension}' (one of {DIMENSIONS})")
    if row not in ROWS:
        raise MatrixError(f"unknown row '{row}' (one of {ROWS})")


def display_name(dimension: str) -> str:
    return _DISPLAY.get(dimension, dimension)


def new_matrix(scenario: str) -> MatrixSpec:
    if not scenario.strip():
        raise MatrixError("scenario must be non-empty")
    cells = {(d, r): CellContent() for d in DIMENSIONS for r in ROWS}
    history = {d: GroundingHistory() for d in DIMENSIONS}
    return MatrixSpec(scenario=scenario, cells=cells, grounding_versions=history)


def cell_text(content: CellContent, row: str) -> str:
    """The submitted text of a cell: checked options for Idea, text for Grounding."""
    if row == "Idea":
        return "; ".join(content.checked())
    return content.text


def submitted_cells_text(matrix: MatrixSpec) -> str:
    """Every submitted cell, verbatim, in column order; used for context threading."""
    lines = []
    for dimension in DIMENSIONS:
        for row in ROWS:
            content = matrix.cells[(dimension, row)]
            if content.submitted:
                lines.append(
                    f"{display_name(dimension)} / {row}: {cell_text(content, row)}"
                )
    return "\n".join(lines) if lines else "(none yet)"


def fill_cell(
    matrix: MatrixSpec, dimension: str, row: str, gateway: LlmGateway
) -> CellContent:
    """Generate unsubmitted content for one cell. Never mutates the matrix."""
    _check_slot(dimension, row)
    if row == "Grounding" and not matrix.cells[(dimension, "Idea")].submitted:
        raise MatrixError(
            f"{dimension}/Grounding cannot be filled before {dimension}/Idea is submitted"
        )
    slots = {
        "scenario": matrix.scenario,
        "dimension": display_name(dimension),
        "row": row.lower(),
        "cell_guideline": CELL_GUIDELINES[(dimension, row)],
        "submitted_cells": submitted_cells_text(matrix),
    }
    if row == "Grounding":
        text = gateway.complete("matrix_cell", slots)
        return CellContent(text=text.strip())
    corrective = None
    last_raw = ""
    for _ in range(1 + MAX_SHAPE_RETRIES):
        last_raw = gateway.complete("matrix_cell", slots, corrective=corrective)
        try:
            options = parse_shaped(last_raw, Shape.JSON_LIST)
        except ShapeError:
            corrective = (
                "Your previous reply was not a JSON array. Reply with only a "
                "JSON array of strings."
            )
            continue
        if all(isinstance(o, str) for o in options):
            return CellContent(options=[(o, False) for o in options])
        corrective = "Every entry in the JSON array must be a string."
    raise MatrixError(
        f"{dimension}/{row}: generation was not a JSON array of strings", raw=last_raw
    )


def submit_cell(
    matrix: MatrixSpec, dimension: str, row: str, content: CellContent
) -> None:
    """Store user-approved content for a cell and mark it submitted."""
    _check_slot(dimension, row)
    if row == "Idea" and not content.checked():
        raise MatrixError(f"{dimension}/Idea needs at least one checked option")
    if row == "Grounding":
        if not matrix.cells[(dimension, "Idea")].submitted:
            raise MatrixError(
                f"{dimension}/Grounding cannot be submitted before {dimension}/Idea"
            )
        if not content.text.strip():
            raise MatrixError(f"{dimension}/Grounding needs non-empty text")
        history = matrix.grounding_versions[dimension]
        history.versions.append(content.text)
        history.active = len(history.versions) - 1
    previous = matrix.cells[(dimension, row)]
    matrix.submit_counter += 1
    content.submitted = True
    content.stale = False
    content.submitted_at = matrix.submit_counter
    matrix.cells[(dimension, row)] = content
    if previous.submitted:
        # resubmission: anything submitted since the old version saw stale context
        for other in matrix.cells.values():
            if other is not content and other.submitted:
                if other.submitted_at > previous.submitted_at:
                    other.stale = True


def set_active_grounding(matrix: MatrixSpec, dimension: str, version: int) -> None:
    """Point a column's Grounding cell at a previously saved version."""
    _check_slot(dimension, "Grounding")
    history = matrix.grounding_versions[dimension]
    if not 0 <= version < len(history.versions):
        raise MatrixError(
            f"{dimension}: no grounding version {version} "
            f"(have {len(history.versions)})"
        )
    history.active = version
    cell = matrix.cells[(dimension, "Grounding")]
    cell.text = history.versions[version]


_NUMBERED = re.compile(r"(?:^|\s)(\d+)\)\s*")


def _split_numbered(text: str, count: int) -> list[str] | None:
    """Split '1) ... 2) ...' grounding text into per-milestone criteria."""
    marks = list(_NUMBERED.finditer(text))
    if len(marks) != count:
        return None
    if [int(m.group(1)) for m in marks] != list(range(1, count + 1)):
        return None
    parts = []
    for i, mark in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(text)
        parts.append(text[mark.end():end].strip())
    return parts


def extract_guardrails(matrix: MatrixSpec) -> GuardrailSet:
    """Build the GuardrailSet directly from the three right-hand columns."""
    descriptions = matrix.cells[("Milestones", "Idea")].checked()
    if not MILESTONES_MIN <= len(descriptions) <= MILESTONES_MAX:
        raise MatrixError(
            f"need {MILESTONES_MIN}-{MILESTONES_MAX} checked milestones, "
            f"got {len(descriptions)}"
        )
    grounding = matrix.cells[("Milestones", "Grounding")].text
    criteria = _split_numbered(grounding, len(descriptions))
    if criteria is None:
        criteria = [grounding] * len(descriptions)
    milestones = tuple(
        Milestone(id=i + 1, description=d, criteria=c)
        for i, (d, c) in enumerate(zip(descriptions, criteria))
    )
    stop = "; ".join(matrix.cells[("StopCondition", "Idea")].checked())
    failures = tuple(matrix.cells[("FailureConditions", "Idea")].checked())
    guardrails = GuardrailSet(
        milestones=milestones, stop_condition=stop, failure_conditions=failures
    )
    problems = check_guardrails(guardrails)
    if problems:
        raise MatrixError("guardrail extraction failed: " + "; ".join(problems))
    return guardrails


def matrix_cells_block(matrix: MatrixSpec) -> str:
    """All twelve cells rendered for the compile prompt."""
    lines = []
    for dimension in DIMENSIONS:
        for row in ROWS:
            content = matrix.cells[(dimension, row)]
            lines.append(
                f"{display_name(dimension)} / {row}: {cell_text(content, row)}"
            )
    return "\n".join(lines)


def compile_config(
    matrix: MatrixSpec, gateway: LlmGateway
) -> tuple[SimConfig, GuardrailSet]:
    """Compile a fully submitted matrix into a config and its guardrails."""
    missing = [
        f"{d}/{r}"
        for d in DIMENSIONS
        for r in ROWS
        if not matrix.cells[(d, r)].submitted
    ]
    if missing:
        raise MatrixError("matrix incomplete, unsubmitted cells: " + ", ".join(missing))
    guardrails = extract_guardrails(matrix)
    slots = {"matrix_cells": matrix_cells_block(matrix)}
    corrective = None
    last_raw = ""
    last_problem = ""
    for _ in range(1 + MAX_SHAPE_RETRIES):
        last_raw = gateway.complete("config_compile", slots, corrective=corrective)
        try:
            data = parse_shaped(last_raw, Shape.JSON_OBJECT)
        except ShapeError as exc:
            last_problem = str(exc)
            corrective = "Reply with only the JSON configuration object."
            continue
        try:
            config = config_from_dict(data)
        except ConfigFormatError as exc:
            last_problem = str(exc)
            corrective = (
                "The configuration did not match the required schema: "
                f"{exc}. Reply with a corrected JSON configuration object."
            )
            continue
        report = validate_config(config)
        if not report.ok:
            last_problem = "; ".join(v.message for v in report.violations)
            corrective = (
                f"The configuration is invalid: {last_problem}. "
                "Reply with a corrected JSON configuration object."
            )
            continue
        return config, guardrails
    raise MatrixError(f"config compilation failed: {last_problem}", raw=last_raw)


# ------------------------------------------------------------- persistence


def matrix_to_dict(matrix: MatrixSpec) -> dict:
    cells = {}
    for (dimension, row), content in matrix.cells.items():
        cells[f"{dimension}/{row}"] = {
            "options": [[text, on] for text, on in content.options],
            "text": content.text,
            "submitted": content.submitted,
            "stale": content.stale,
            "submitted_at": content.submitted_at,
        }
    return {
        "scenario": matrix.scenario,
        "cells": cells,
        "grounding_versions": {
            d: {"versions": h.versions, "active": h.active}
            for d, h in matrix.grounding_versions.items()
        },
        "submit_counter": matrix.submit_counter,
    }


def matrix_from_dict(data: dict) -> MatrixSpec:
    matrix = new_matrix(data["scenario"])
    for key, raw in data.get("cells", {}).items():
        dimension, _, row = key.partition("/")
        _check_slot(dimension, row)
        matrix.cells[(dimension, row)] = CellContent(
            options=[(t, bool(on)) for t, on in raw.get("options", [])],
            text=raw.get("text", ""),
            submitted=bool(raw.get("submitted", False)),
            stale=bool(raw.get("stale", False)),
            submitted_at=int(raw.get("submitted_at", 0)),
        )
    for dimension, raw in data.get("grounding_versions", {}).items():
        matrix.grounding_versions[dimension] = GroundingHistory(
            versions=list(raw.get("versions", [])), active=int(raw.get("active", -1))
        )
    matrix.submit_counter = int(data.get("submit_counter", 0))
    return matrix


def load_matrix(path: str | Path) -> MatrixSpec:
    with open(path, encoding="utf-8") as fh:
        return matrix_from_dict(json.load(fh))


def save_matrix(matrix: MatrixSpec, path: str | Path) -> None:
    text = json.dumps(matrix_to_dict(matrix), indent=2, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")
