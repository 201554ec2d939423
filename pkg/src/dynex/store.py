"""On-disk layout for runs and their append-only record streams.

Layout, rooted at a store directory:

    tree.json
    debuglists/<scenario>.json
    runs/<run-id>/config.json
    runs/<run-id>/guardrails.json
    runs/<run-id>/events.ndjson
    runs/<run-id>/summaries.ndjson
    runs/<run-id>/nudges.ndjson
    runs/<run-id>/meta.json

NDJSON files are written one whole line at a time and flushed, so an abrupt
process death can tear at most the final line; readers tolerate exactly that.
"""

from __future__ import annotations

import json
import os
import re

from .engine import Event, event_from_dict
from .guardrails import GuardrailSet, guardrails_from_dict, guardrails_to_dict
from .monitor import (
    ChangeSummary,
    DynamicSummary,
    FailureHit,
    StatusUpdate,
    SummaryGap,
)
from .nudge import Nudge, nudge_to_dict
from .reflection import DebugEntry, RunTree, entry_from_dict, entry_to_dict, load_tree
from .worldconfig import SimConfig, load_config, save_config

ENV_STORE = "DYNEX_STORE"
DEFAULT_STORE = "dynex_store"


class StoreError(RuntimeError):
    pass


def store_root(path: str | None = None) -> str:
    return path or os.environ.get(ENV_STORE, DEFAULT_STORE)


def read_ndjson(path: str) -> list[dict]:
    """All complete records in an NDJSON file.

    A torn final line (crash mid-write) is skipped; a torn line anywhere
    else means real corruption and raises.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except FileNotFoundError:
        return []
    records: list[dict] = []
    for i, line in enumerate(lines):
        text = line.strip()
        if not text:
            continue
        try:
            records.append(json.loads(text))
        except json.JSONDecodeError as exc:
            if i == len(lines) - 1:
                break
            raise StoreError(f"{path}:{i + 1}: corrupt record: {exc}") from exc
    return records


def write_json_atomic(path: str, data: object) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def record_to_dict(record) -> dict:
    """Tag a monitor record for the summaries stream."""
    if isinstance(record, StatusUpdate):
        return {"type": "status", "at": record.at, "level": record.level,
                "reason": record.reason, "trigger": record.trigger}
    if isinstance(record, ChangeSummary):
        return {"type": "change", "at": record.at,
                "milestone_label": record.milestone_label,
                "where": dict(record.where), "what": dict(record.what),
                "change": record.change}
    if isinstance(record, DynamicSummary):
        return {"type": "dynamic", "at": record.at,
                "milestone_id": record.milestone_id,
                "milestone": record.milestone, "dynamic": record.dynamic}
    if isinstance(record, SummaryGap):
        return {"type": "gap", "at": record.at, "kind": record.kind,
                "reason": record.reason}
    if isinstance(record, FailureHit):
        return {"type": "failure", "at": record.at, "index": record.index,
                "evidence": list(record.evidence) if record.evidence else None,
                "description": record.description}
    raise StoreError(f"unknown record type {type(record).__name__}")


class RunStore:
    """Reader/writer for one run directory."""

    FILES = ("config.json", "guardrails.json", "events.ndjson",
             "summaries.ndjson", "nudges.ndjson", "meta.json")

    def __init__(self, directory: str):
        self.directory = directory
        self._handles: dict[str, object] = {}

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    # -- writes

    def _append_line(self, name: str, record: dict) -> None:
        handle = self._handles.get(name)
        if handle is None:
            handle = open(self.path(name), "a", encoding="utf-8")
            self._handles[name] = handle
        handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        handle.flush()

    def append_event(self, event: Event) -> None:
        self._append_line("events.ndjson", event.to_dict())

    def append_events(self, events) -> None:
        for event in events:
            self.append_event(event)

    def append_record(self, record) -> None:
        self._append_line("summaries.ndjson", record_to_dict(record))

    def append_nudge(self, nudge: Nudge) -> None:
        """One snapshot per observed state change; the file is the audit."""
        self._append_line("nudges.ndjson", nudge_to_dict(nudge))

    def write_meta(self, meta: dict) -> None:
        write_json_atomic(self.path("meta.json"), meta)

    def close(self) -> None:
        for handle in self._handles.values():
            handle.close()
        self._handles.clear()

    # -- reads

    def read_meta(self) -> dict:
        try:
            with open(self.path("meta.json"), encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return {}

    def read_config(self) -> SimConfig:
        return load_config(self.path("config.json"))

    def read_guardrails(self) -> GuardrailSet:
        with open(self.path("guardrails.json"), encoding="utf-8") as fh:
            return guardrails_from_dict(json.load(fh))

    def read_raw_events(self, since: int = 0) -> list[dict]:
        records = read_ndjson(self.path("events.ndjson"))
        if since:
            records = [r for r in records if r.get("seq", 0) > since]
        return records

    def read_events(self, since: int = 0) -> list[Event]:
        return [event_from_dict(r) for r in self.read_raw_events(since)]

    def read_summaries(self) -> list[dict]:
        return read_ndjson(self.path("summaries.ndjson"))

    def read_nudges(self) -> list[dict]:
        return read_ndjson(self.path("nudges.ndjson"))

    def latest_nudges(self) -> list[dict]:
        """Current state per nudge: the last snapshot wins, first-seen order."""
        latest: dict[str, dict] = {}
        for snapshot in self.read_nudges():
            latest[snapshot["id"]] = snapshot
        return list(latest.values())


_SCENARIO_SLUG = re.compile(r"[^a-z0-9_-]+")


def scenario_slug(scenario: str) -> str:
    slug = _SCENARIO_SLUG.sub("-", scenario.strip().casefold()).strip("-")
    return slug or "default"


class Store:
    """The store root: run directories, the run tree, and dynamic lists."""

    def __init__(self, root: str | None = None):
        self.root = store_root(root)
        os.makedirs(os.path.join(self.root, "runs"), exist_ok=True)
        os.makedirs(os.path.join(self.root, "debuglists"), exist_ok=True)

    @property
    def tree_path(self) -> str:
        return os.path.join(self.root, "tree.json")

    def load_tree(self) -> RunTree:
        return load_tree(self.tree_path)

    def run_dir(self, run_id: str) -> str:
        return os.path.join(self.root, "runs", run_id)

    def run_ids(self) -> list[str]:
        runs = os.path.join(self.root, "runs")
        return sorted(d for d in os.listdir(runs)
                      if os.path.isdir(os.path.join(runs, d)))

    def has_run(self, run_id: str) -> bool:
        return os.path.isdir(self.run_dir(run_id))

    def open_run(self, run_id: str) -> RunStore:
        if not self.has_run(run_id):
            raise StoreError(f"unknown run '{run_id}'")
        return RunStore(self.run_dir(run_id))

    def create_run(self, run_id: str, config: SimConfig,
                   guardrails: GuardrailSet) -> RunStore:
        directory = self.run_dir(run_id)
        if os.path.exists(directory):
            raise StoreError(f"run directory already exists: {directory}")
        os.makedirs(directory)
        run_store = RunStore(directory)
        save_config(config, run_store.path("config.json"))
        write_json_atomic(run_store.path("guardrails.json"),
                          guardrails_to_dict(guardrails))
        return run_store

    # -- dynamic debugging lists

    def debug_list_path(self, scenario: str) -> str:
        return os.path.join(self.root, "debuglists", scenario_slug(scenario) + ".json")

    def load_debug_list(self, scenario: str) -> list[DebugEntry]:
        try:
            with open(self.debug_list_path(scenario), encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            return []
        return [entry_from_dict(item, scope=scenario_slug(scenario)) for item in data]

    def save_debug_list(self, scenario: str, entries: list[DebugEntry]) -> None:
        write_json_atomic(self.debug_list_path(scenario),
                          [entry_to_dict(e) for e in entries])

    def append_debug_entries(self, scenario: str,
                             entries: list[DebugEntry]) -> list[DebugEntry]:
        current = self.load_debug_list(scenario)
        merged = current + list(entries)
        self.save_debug_list(scenario, merged)
        return merged


def config_meta(config: SimConfig) -> dict:
    return {"world_name": config.world_name,
            "agents": config.agent_names(),
            "locations": config.location_names()}


__all__ = [
    "DEFAULT_STORE",
    "ENV_STORE",
    "RunStore",
    "Store",
    "StoreError",
    "config_meta",
    "read_ndjson",
    "record_to_dict",
    "scenario_slug",
    "store_root",
    "write_json_atomic",
]
