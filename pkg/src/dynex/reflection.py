"""Post-run holistic reflection: diagnose a finished run against the
debugging lists, rewrite the configuration under hard structural
constraints, and fork the repaired config as a child run in the run tree.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from importlib import resources

from .engine import RunState, SimulationRun
from .gateway import (
    DEFAULT_LOG_BUDGET,
    LlmGateway,
    ShapeError,
    complete_shaped,
    truncate_logs,
)
from .worldconfig import (
    ConfigFormatError,
    SimConfig,
    config_from_dict,
    config_to_dict,
    serialize_config,
    validate_config,
)

STATIC_SCOPE = "static"
MAX_DYNAMIC_ENTRIES = 3

# An extra agent may only appear when a selected fix recommends one of these.
_MODERATOR_WORDS = ("moderator", "overseer", "mediator")

_ENTRY_FIELDS = ("problem", "problem_example", "solution", "solution_example")


class ReflectionError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class DebugEntry:
    """One problem/solution pair from a debugging list.

    scope is "static" for the bundled global list, or the scenario id for
    entries accumulated in that scenario's dynamic list.
    """

    problem: str
    problem_example: str
    solution: str
    solution_example: str
    scope: str = STATIC_SCOPE

    def __post_init__(self):
        empty = [name for name in _ENTRY_FIELDS if not getattr(self, name).strip()]
        if empty:
            raise ReflectionError([f"debug entry: empty field '{n}'" for n in empty])


@dataclass
class ReflectionFix:
    """A DebugEntry-shaped proposal bound to one run, awaiting selection."""

    problem: str
    problem_example: str
    solution: str
    solution_example: str
    selected: bool = False


def entry_to_dict(entry: DebugEntry) -> dict:
    return {name: getattr(entry, name) for name in _ENTRY_FIELDS}


def entry_from_dict(data: dict, scope: str = STATIC_SCOPE) -> DebugEntry:
    return DebugEntry(scope=scope, **{name: data[name] for name in _ENTRY_FIELDS})


def fix_to_dict(fix: ReflectionFix) -> dict:
    out = {name: getattr(fix, name) for name in _ENTRY_FIELDS}
    out["selected"] = fix.selected
    return out


def fix_from_dict(data: dict) -> ReflectionFix:
    return ReflectionFix(
        selected=bool(data.get("selected", False)),
        **{name: data[name] for name in _ENTRY_FIELDS},
    )


def load_static_list() -> list[DebugEntry]:
    """The bundled global list of common problems and solutions."""
    text = resources.files("dynex").joinpath("data/static_debug_list.json").read_text(
        encoding="utf-8")
    return [entry_from_dict(item) for item in json.loads(text)]


def _example_config_text() -> str:
    return resources.files("dynex").joinpath("data/example_config.json").read_text(
        encoding="utf-8")


def entries_to_prompt(entries) -> str:
    """JSON rendering of list entries (or fixes) for prompt slots."""
    items = []
    for entry in entries:
        items.append({name: getattr(entry, name) for name in _ENTRY_FIELDS})
    return json.dumps(items, indent=2, ensure_ascii=False)


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def _require_finished(run: SimulationRun) -> None:
    if run.state is RunState.RUNNING:
        raise ReflectionError(["run is still running; reflection needs a finished run"])


def _string_fields(item: dict, where: str) -> dict[str, str]:
    out = {}
    problems = []
    for name in _ENTRY_FIELDS:
        value = item.get(name)
        if not isinstance(value, str):
            problems.append(f"{where}: field '{name}' must be a string")
        else:
            out[name] = value
    if problems:
        raise ReflectionError(problems)
    return out


def holistic_reflect(
    run: SimulationRun,
    static_list: list[DebugEntry],
    dynamic_list: list[DebugEntry],
    gateway: LlmGateway,
    summaries: str = "(none)",
    budget: int = DEFAULT_LOG_BUDGET,
) -> list[ReflectionFix]:
    """Diagnose a finished run against the combined debugging lists.

    Returned fixes carry problem/solution texts snapped verbatim to the
    matched list entry; the examples are the model's, regenerated for this
    run. An empty list means nothing to fix.
    """
    _require_finished(run)
    catalog = list(static_list) + list(dynamic_list)
    slots = {
        "problem_solution_list": entries_to_prompt(catalog),
        "logs": truncate_logs(run.events, budget),
        "config": serialize_config(run.config),
        "summaries": summaries or "(none)",
    }
    data = complete_shaped(gateway, "holistic_reflection", slots,
                           required_fields=_ENTRY_FIELDS, budget=budget)
    by_problem = {_normalize(entry.problem): entry for entry in catalog}
    fixes: list[ReflectionFix] = []
    for i, item in enumerate(data):
        fields = _string_fields(item, f"fix {i + 1}")
        matched = by_problem.get(_normalize(fields["problem"]))
        if matched is not None:
            # Appendix-style lists pair each problem with its solution; a
            # matched problem pins both texts to the list verbatim.
            fields["problem"] = matched.problem
            fields["solution"] = matched.solution
        fixes.append(ReflectionFix(**fields))
    return fixes


def add_dynamic_entries(
    run: SimulationRun,
    user_error: str,
    existing: list[DebugEntry],
    gateway: LlmGateway,
    scenario: str,
    budget: int = DEFAULT_LOG_BUDGET,
) -> list[DebugEntry]:
    """Propose up to three new dynamic-list entries for a user-named error.

    Duplicates of existing problems are dropped; a parse failure adds
    nothing. The caller appends the result to the scenario's list once the
    user confirms.
    """
    if not user_error.strip():
        raise ReflectionError(["user_error must be non-empty"])
    slots = {
        "user_error": user_error,
        "existing_list": entries_to_prompt(existing) if existing else "[]",
        "logs": truncate_logs(run.events, budget),
        "config": serialize_config(run.config),
    }
    try:
        data = complete_shaped(gateway, "dynamic_list_entries", slots,
                               required_fields=_ENTRY_FIELDS, budget=budget)
    except ShapeError:
        return []
    seen = {_normalize(entry.problem) for entry in existing}
    out: list[DebugEntry] = []
    for item in data:
        if len(out) >= MAX_DYNAMIC_ENTRIES:
            break
        if not all(isinstance(item.get(n), str) and item[n].strip() for n in _ENTRY_FIELDS):
            continue
        key = _normalize(item["problem"])
        if key in seen:
            continue
        seen.add(key)
        out.append(entry_from_dict({n: item[n] for n in _ENTRY_FIELDS}, scope=scenario))
    return out


# ------------------------------------------------------- config rewriting


def fixes_permit_new_agent(fixes) -> bool:
    for fix in fixes:
        text = f"{fix.solution} {fix.solution_example}".casefold()
        if any(word in text for word in _MODERATOR_WORDS):
            return True
    return False


def verify_fix_constraints(original: SimConfig, candidate, fixes) -> list[str]:
    """Structural verifier for generated configs. Returns diff-style problems.

    Enforced mechanically, never trusted to generation: exact schema; the
    location name set unchanged; every original agent name preserved; at
    most one added agent, and only when a fix recommends a moderator or
    overseer; validate_config clean.
    """
    if isinstance(candidate, SimConfig):
        updated = candidate
    else:
        try:
            updated = config_from_dict(candidate)
        except ConfigFormatError as exc:
            return [f"schema: {p}" for p in exc.problems]
    problems = [str(v) for v in validate_config(updated).violations]

    orig_locations = set(original.location_names())
    new_locations = set(updated.location_names())
    for name in sorted(new_locations - orig_locations):
        problems.append(f"locations: added '{name}'")
    for name in sorted(orig_locations - new_locations):
        problems.append(f"locations: removed '{name}'")

    orig_agents = set(original.agent_names())
    new_agents = updated.agent_names()
    for name in sorted(orig_agents - set(new_agents)):
        problems.append(f"agents: removed or renamed '{name}'")
    added = [name for name in new_agents if name not in orig_agents]
    if len(added) > 1:
        problems.append(
            f"agents: added {len(added)} agents ({', '.join(added)}), at most one is permitted")
    elif added and not fixes_permit_new_agent(fixes):
        problems.append(
            f"agents: added '{added[0]}' but no selected fix recommends a moderator or overseer")
    return problems


def _selected(fixes) -> list:
    chosen = [f for f in fixes if getattr(f, "selected", True)]
    if not chosen:
        raise ReflectionError(["no fixes selected"])
    return chosen


def apply_fixes(config: SimConfig, fixes, gateway: LlmGateway,
                budget: int = DEFAULT_LOG_BUDGET) -> SimConfig:
    """Rewrite the config so each selected fix is addressed.

    The generated config is verified structurally; a violation raises
    ReflectionError carrying the diff.
    """
    chosen = _selected(fixes)
    slots = {
        "fixes_to_apply": entries_to_prompt(chosen),
        "example_config": _example_config_text(),
        "config": serialize_config(config),
    }
    data = complete_shaped(gateway, "config_update", slots, budget=budget)
    problems = verify_fix_constraints(config, data, chosen)
    if problems:
        raise ReflectionError(problems)
    return config_from_dict(data)


def check_config(updated: SimConfig, fixes, gateway: LlmGateway,
                 original: SimConfig | None = None,
                 budget: int = DEFAULT_LOG_BUDGET) -> SimConfig:
    """Second pass: confirm each fix landed; the checker may amend.

    Structural constraints are re-verified against the original config (or
    against `updated` when no original is given).
    """
    chosen = _selected(fixes)
    slots = {
        "fixes_to_apply": entries_to_prompt(chosen),
        "example_config": _example_config_text(),
        "config": serialize_config(updated),
    }
    data = complete_shaped(gateway, "config_checker", slots, budget=budget)
    problems = verify_fix_constraints(original or updated, data, chosen)
    if problems:
        raise ReflectionError(problems)
    return config_from_dict(data)


def repair_config(config: SimConfig, fixes, gateway: LlmGateway,
                  budget: int = DEFAULT_LOG_BUDGET) -> SimConfig:
    """apply_fixes followed by check_config, verified against the original."""
    updated = apply_fixes(config, fixes, gateway, budget=budget)
    return check_config(updated, fixes, gateway, original=config, budget=budget)


# --------------------------------------------------------------- run tree


@dataclass
class RunNode:
    run_id: str
    parent_id: str | None
    condition: str
    config: dict
    guardrails: dict
    paths: dict = field(default_factory=dict)
    scores: dict | None = None


def node_to_dict(node: RunNode) -> dict:
    return {
        "run_id": node.run_id,
        "parent_id": node.parent_id,
        "condition": node.condition,
        "config": node.config,
        "guardrails": node.guardrails,
        "paths": node.paths,
        "scores": node.scores,
    }


def node_from_dict(data: dict) -> RunNode:
    return RunNode(
        run_id=data["run_id"],
        parent_id=data.get("parent_id"),
        condition=data.get("condition", ""),
        config=data.get("config", {}),
        guardrails=data.get("guardrails", {}),
        paths=data.get("paths", {}),
        scores=data.get("scores"),
    )


_RUN_ID = re.compile(r"run-(\d+)$")


class RunTree:
    """All runs ever made, linked parent to child, in one JSON document.

    Mutations validate the tree shape and rewrite the document atomically
    (write to a sibling temp file, then rename).
    """

    def __init__(self, path: str | None = None):
        self.path = path
        self.nodes: dict[str, RunNode] = {}
        self.order: list[str] = []

    # -- queries

    def get(self, run_id: str) -> RunNode:
        if run_id not in self.nodes:
            raise ReflectionError([f"unknown run '{run_id}'"])
        return self.nodes[run_id]

    def roots(self) -> list[RunNode]:
        return [self.nodes[i] for i in self.order if self.nodes[i].parent_id is None]

    def children(self, run_id: str) -> list[RunNode]:
        return [self.nodes[i] for i in self.order if self.nodes[i].parent_id == run_id]

    def next_id(self) -> str:
        highest = 0
        for run_id in self.nodes:
            match = _RUN_ID.search(run_id)
            if match:
                highest = max(highest, int(match.group(1)))
        return f"run-{highest + 1:04d}"

    def check(self) -> list[str]:
        """Tree-shape problems: missing parents or parent cycles."""
        problems = []
        for run_id, node in self.nodes.items():
            if node.parent_id is not None and node.parent_id not in self.nodes:
                problems.append(f"{run_id}: parent '{node.parent_id}' does not exist")
            seen = {run_id}
            cursor = node.parent_id
            while cursor is not None:
                if cursor in seen:
                    problems.append(f"{run_id}: parent chain forms a cycle at '{cursor}'")
                    break
                seen.add(cursor)
                cursor = self.nodes[cursor].parent_id if cursor in self.nodes else None
        return problems

    # -- mutations

    def add(self, node: RunNode) -> RunNode:
        if node.run_id in self.nodes:
            raise ReflectionError([f"run '{node.run_id}' already in tree"])
        if node.parent_id is not None and node.parent_id not in self.nodes:
            raise ReflectionError([f"unknown parent '{node.parent_id}'"])
        self.nodes[node.run_id] = node
        self.order.append(node.run_id)
        self.save()
        return node

    def set_scores(self, run_id: str, scores: dict) -> None:
        self.get(run_id).scores = scores
        self.save()

    def set_paths(self, run_id: str, paths: dict) -> None:
        self.get(run_id).paths = paths
        self.save()

    # -- persistence

    def to_dict(self) -> dict:
        return {"nodes": [node_to_dict(self.nodes[i]) for i in self.order]}

    def save(self) -> None:
        if self.path is None:
            return
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)


def load_tree(path: str) -> RunTree:
    tree = RunTree(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        return tree
    for raw in data.get("nodes", []):
        node = node_from_dict(raw)
        tree.nodes[node.run_id] = node
        tree.order.append(node.run_id)
    problems = tree.check()
    if problems:
        raise ReflectionError(problems)
    return tree


def fork_run(tree: RunTree, parent, new_config: SimConfig,
             run_id: str | None = None, condition: str = "") -> RunNode:
    """Create a child node under `parent` carrying the repaired config.

    Guardrails are inherited from the parent unchanged: reflection rewrites
    bios, directives, and plans, never the milestones or conditions.
    """
    parent_id = parent.run_id if isinstance(parent, RunNode) else parent
    parent_node = tree.get(parent_id)
    node = RunNode(
        run_id=run_id or tree.next_id(),
        parent_id=parent_node.run_id,
        condition=condition,
        config=config_to_dict(new_config),
        guardrails=dict(parent_node.guardrails),
    )
    return tree.add(node)
