"""HTTP API over the orchestrator, consumed by the steering dashboard.

One daemon thread steps each live run; API mutations take that run's lock.
Reads go through the append-only store files, so they never block a tick.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field

from fastapi import Body, FastAPI, HTTPException

from .engine import RunState
from .gateway import ENV_BASE_URL, LiveGateway, ScriptedGateway
from .guardrails import GuardrailError, guardrails_from_dict, load_guardrails
from .nudge import NudgeError, nudge_to_dict
from .orchestrator import (
    OrchestratorError,
    RunSession,
    RunSettings,
    _step_from_dict,
    create_run,
    fork_session,
    reflect_run,
    reopen_run,
    scripted_gateway_for,
)
from .reflection import (
    ReflectionError,
    add_dynamic_entries,
    entry_from_dict,
    entry_to_dict,
    fix_to_dict,
)
from .scripting import ScriptError, load_script, script_from_dict
from .store import Store, scenario_slug
from .worldconfig import ConfigFormatError, config_from_dict, load_config


@dataclass
class _LiveRun:
    session: RunSession
    lock: threading.Lock = field(default_factory=threading.Lock)
    thread: threading.Thread | None = None


class Service:
    """Shared state behind the app: the store plus live run sessions."""

    def __init__(self, store_root: str | None = None, tick_delay: float = 0.05):
        self.store = Store(store_root)
        self.tick_delay = tick_delay
        self.runs: dict[str, _LiveRun] = {}
        self.registry_lock = threading.Lock()

    # ------------------------------------------------------------- helpers

    def live(self, run_id: str) -> _LiveRun | None:
        with self.registry_lock:
            return self.runs.get(run_id)

    def require_live(self, run_id: str) -> _LiveRun:
        run = self.live(run_id)
        if run is None:
            raise HTTPException(status_code=409,
                                detail=f"run '{run_id}' is not live in this process")
        return run

    def require_exists(self, run_id: str) -> None:
        if self.live(run_id) is None and not self.store.has_run(run_id):
            raise HTTPException(status_code=404, detail=f"unknown run '{run_id}'")

    def start_thread(self, live: _LiveRun) -> None:
        def loop():
            while True:
                with live.lock:
                    alive = live.session.step()
                if not alive:
                    return
                if self.tick_delay:
                    time.sleep(self.tick_delay)
        live.thread = threading.Thread(target=loop, daemon=True)
        live.thread.start()

    def register(self, session: RunSession, autostart: bool) -> _LiveRun:
        live = _LiveRun(session=session)
        with self.registry_lock:
            self.runs[session.run_id] = live
        if autostart:
            self.start_thread(live)
        return live

    def reflection_gateway(self, run_id: str):
        live = self.live(run_id)
        if live is not None:
            return live.session.monitor.gateway
        if os.environ.get(ENV_BASE_URL):
            return LiveGateway()
        return ScriptedGateway()


def _parse_config(body: dict):
    try:
        if "config" in body:
            return config_from_dict(body["config"])
        if "config_path" in body:
            return load_config(body["config_path"])
    except ConfigFormatError as exc:
        raise HTTPException(status_code=400, detail=f"config: {exc}")
    raise HTTPException(status_code=400, detail="missing 'config' or 'config_path'")


def _parse_guardrails(body: dict):
    try:
        if "guardrails" in body:
            return guardrails_from_dict(body["guardrails"])
        if "guardrails_path" in body:
            return load_guardrails(body["guardrails_path"])
    except GuardrailError as exc:
        raise HTTPException(status_code=400, detail=f"guardrails: {exc}")
    raise HTTPException(status_code=400, detail="missing 'guardrails' or 'guardrails_path'")


def _parse_script(body: dict):
    try:
        if "script" in body:
            return script_from_dict(body["script"])
        if "script_path" in body:
            return load_script(body["script_path"])
    except ScriptError as exc:
        raise HTTPException(status_code=400, detail=f"script: {exc}")
    return None


def _parse_settings(body: dict) -> RunSettings:
    raw = body.get("settings", {})
    try:
        return RunSettings(**{k: raw[k] for k in (
            "max_ticks", "max_wall_seconds", "nudging", "backend", "seed",
            "condition", "targets", "simulation_idea") if k in raw})
    except (OrchestratorError, TypeError) as exc:
        raise HTTPException(status_code=400, detail=f"settings: {exc}")


def _nudge_view(run_id: str, snapshot: dict) -> dict:
    out = dict(snapshot)
    out["global_id"] = f"{run_id}.{snapshot['id']}"
    return out


def create_app(store_root: str | None = None, tick_delay: float = 0.05) -> FastAPI:
    service = Service(store_root, tick_delay)
    app = FastAPI(title="dynex", docs_url=None, redoc_url=None)
    app.state.service = service

    # ---------------------------------------------------------------- runs

    @app.post("/runs")
    def post_runs(body: dict = Body(...)):
        config = _parse_config(body)
        guardrails = _parse_guardrails(body)
        script = _parse_script(body)
        settings = _parse_settings(body)
        if settings.backend == "live":
            gateway = LiveGateway()
        else:
            gateway = scripted_gateway_for(script, body.get("gateway_replies"))
        try:
            session = create_run(config, guardrails, settings=settings,
                                 store=service.store, gateway=gateway,
                                 script=script)
        except OrchestratorError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        service.register(session, autostart=bool(body.get("autostart", True)))
        return session.status_view()

    @app.get("/runs")
    def get_runs():
        rows = []
        for run_id in service.store.run_ids():
            live = service.live(run_id)
            if live is not None:
                with live.lock:
                    view = live.session.status_view()
                rows.append({k: view[k] for k in
                             ("run_id", "state", "tick", "condition")})
            else:
                meta = service.store.open_run(run_id).read_meta()
                rows.append({"run_id": run_id,
                             "state": meta.get("state", "terminated"),
                             "tick": meta.get("tick", 0),
                             "condition": meta.get("settings", {}).get("condition", "")})
        return {"runs": rows}

    @app.get("/runs/{run_id}/status")
    def get_status(run_id: str):
        service.require_exists(run_id)
        live = service.live(run_id)
        if live is not None:
            with live.lock:
                return live.session.status_view()
        meta = service.store.open_run(run_id).read_meta()
        summaries = service.store.open_run(run_id).read_summaries()
        statuses = [r for r in summaries if r.get("type") == "status"]
        return {
            "run_id": run_id,
            "state": meta.get("state", "terminated"),
            "reason": meta.get("reason"),
            "tick": meta.get("tick", 0),
            "condition": meta.get("settings", {}).get("condition", ""),
            "latest_status": statuses[-1] if statuses else None,
            "frontier": meta.get("frontier", 1),
            "milestones_reached": len(meta.get("milestones_reached", {})),
            "agent_locations": {},
            "counts": {"events": len(service.store.open_run(run_id).read_raw_events()),
                       "statuses": len(statuses),
                       "changes": sum(r.get("type") == "change" for r in summaries),
                       "dynamics": sum(r.get("type") == "dynamic" for r in summaries),
                       "nudges": len(service.store.open_run(run_id).latest_nudges())},
        }

    @app.get("/runs/{run_id}/events")
    def get_events(run_id: str, since: int = 0):
        service.require_exists(run_id)
        events = service.store.open_run(run_id).read_raw_events(since)
        max_seq = events[-1]["seq"] if events else since
        return {"events": events, "max_seq": max_seq}

    @app.get("/runs/{run_id}/summaries")
    def get_summaries(run_id: str):
        service.require_exists(run_id)
        return {"summaries": service.store.open_run(run_id).read_summaries()}

    @app.get("/runs/{run_id}/nudges")
    def get_nudges(run_id: str):
        service.require_exists(run_id)
        snapshots = service.store.open_run(run_id).latest_nudges()
        live = service.live(run_id)
        misses = list(live.session.controller.misses) if live else []
        return {"nudges": [_nudge_view(run_id, s) for s in snapshots],
                "misses": misses}

    @app.post("/runs/{run_id}/stop")
    def post_stop(run_id: str, body: dict = Body(default={})):
        live = service.require_live(run_id)
        with live.lock:
            try:
                live.session.stop(body.get("reason", "stopped by user"))
            except OrchestratorError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            return live.session.status_view()

    # -------------------------------------------------------------- nudges

    def _split_nudge_id(nudge_id: str) -> tuple[str, str]:
        if "." not in nudge_id:
            raise HTTPException(
                status_code=404,
                detail="nudge ids are '<run-id>.<nudge-id>', e.g. run-0001.n2")
        run_id, local = nudge_id.rsplit(".", 1)
        return run_id, local

    def _decide_nudge(nudge_id: str, decision: str):
        run_id, local = _split_nudge_id(nudge_id)
        live = service.require_live(run_id)
        with live.lock:
            controller = live.session.controller
            try:
                if decision == "approve":
                    nudge = controller.approve(local)
                else:
                    nudge = controller.reject(local)
            except NudgeError as exc:
                code = 404 if "unknown nudge" in str(exc) else 409
                raise HTTPException(status_code=code, detail=str(exc))
            live.session._persist_nudge_changes()
            return _nudge_view(run_id, nudge_to_dict(nudge))

    @app.post("/nudges/{nudge_id}/approve")
    def post_approve(nudge_id: str):
        return _decide_nudge(nudge_id, "approve")

    @app.post("/nudges/{nudge_id}/reject")
    def post_reject(nudge_id: str):
        return _decide_nudge(nudge_id, "reject")

    @app.post("/runs/{run_id}/nudges")
    def post_manual_nudge(run_id: str, body: dict = Body(...)):
        live = service.require_live(run_id)
        with live.lock:
            controller = live.session.controller
            if controller.mode == "off":
                raise HTTPException(status_code=409,
                                    detail="nudging is off for this run")
            try:
                steps = [_step_from_dict(s) for s in body.get("steps", [])]
                nudge = controller.manual(steps, note=body.get("note", ""))
            except (KeyError, NudgeError) as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            live.session._persist_nudge_changes()
            return _nudge_view(run_id, nudge_to_dict(nudge))

    # ---------------------------------------------------- reflection, tree

    @app.post("/runs/{run_id}/reflect")
    def post_reflect(run_id: str, body: dict = Body(default={})):
        service.require_exists(run_id)
        live = service.live(run_id)
        session = live.session if live else None
        if session is not None and session.state is RunState.RUNNING:
            raise HTTPException(status_code=409, detail="run is still running")
        gateway = service.reflection_gateway(run_id)
        if session is not None and not session.fixes and "selections" not in body:
            session.fixes = reflect_run(service.store, run_id, gateway,
                                        run=session.run)
        fixes = session.fixes if session is not None else \
            reflect_run(service.store, run_id, gateway)
        if "selections" in body:
            wanted = set(body["selections"])
            for i, fix in enumerate(fixes):
                fix.selected = i in wanted
        return {"fixes": [dict(fix_to_dict(f), index=i)
                          for i, f in enumerate(fixes)]}

    @app.post("/runs/{run_id}/fork")
    def post_fork(run_id: str, body: dict = Body(default={})):
        service.require_exists(run_id)
        live = service.live(run_id)
        fixes = live.session.fixes if live else []
        selected = [f for f in fixes if f.selected]
        if not selected:
            raise HTTPException(status_code=409, detail="no fixes selected")
        gateway = service.reflection_gateway(run_id)
        settings = None
        if "settings" in body:
            settings = _parse_settings(body)
        script = live.session.script if live else None
        try:
            child = fork_session(service.store, run_id, selected, gateway,
                                 settings=settings, script=script)
        except (OrchestratorError, ReflectionError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        service.register(child, autostart=bool(body.get("autostart", True)))
        return child.status_view()

    @app.get("/tree")
    def get_tree():
        return service.store.load_tree().to_dict()

    # -------------------------------------------------------- debug lists

    @app.get("/debuglists/{scenario}")
    def get_debuglist(scenario: str):
        entries = service.store.load_debug_list(scenario)
        return {"scenario": scenario_slug(scenario),
                "entries": [entry_to_dict(e) for e in entries]}

    @app.post("/debuglists/{scenario}")
    def post_debuglist(scenario: str, body: dict = Body(...)):
        if "entries" in body:
            try:
                entries = [entry_from_dict(e, scope=scenario_slug(scenario))
                           for e in body["entries"]]
            except (KeyError, ReflectionError) as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            merged = service.store.append_debug_entries(scenario, entries)
            return {"scenario": scenario_slug(scenario),
                    "entries": [entry_to_dict(e) for e in merged]}
        if "user_error" in body and "run_id" in body:
            run_id = body["run_id"]
            service.require_exists(run_id)
            run, _ = reopen_run(service.store, run_id)
            existing = service.store.load_debug_list(scenario)
            gateway = service.reflection_gateway(run_id)
            try:
                proposed = add_dynamic_entries(run, body["user_error"], existing,
                                               gateway, scenario_slug(scenario))
            except ReflectionError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            return {"scenario": scenario_slug(scenario),
                    "proposed": [entry_to_dict(e) for e in proposed]}
        raise HTTPException(status_code=400,
                            detail="body needs 'entries' or 'user_error'+'run_id'")

    return app
