"""Run, monitor, nudge, and repair room-scoped multi-agent simulations."""

from .engine import (
    Event,
    EventKind,
    SimulationRun,
    RunState,
    RunLimits,
    InterventionStep,
    start_run,
)
from .worldconfig import (
    SimConfig,
    parse_config,
    serialize_config,
    load_config,
    save_config,
    validate_config,
)
from .guardrails import GuardrailSet, Milestone, load_guardrails, save_guardrails
from .gateway import LiveGateway, ScriptedGateway, LlmGateway
from .scripting import ScenarioScript, ScriptedBackend, load_script, script_from_dict
from .monitor import Monitor, MonitorCadence, MilestoneTrack
from .nudge import Nudge, NudgeController
from .reflection import DebugEntry, ReflectionFix, RunTree, fork_run, load_tree
from .store import Store, RunStore, store_root
from .matrix import MatrixSpec, new_matrix, compile_config
from .orchestrator import (
    RunSettings,
    RunSession,
    create_run,
    reflect_run,
    fork_session,
    scripted_gateway_for,
)
from .evalharness import ScenarioPack, ScoreCard, load_pack, run_pack, emit_table

__version__ = "0.1.0"

__all__ = [
    "Event",
    "EventKind",
    "SimulationRun",
    "RunState",
    "RunLimits",
    "InterventionStep",
    "start_run",
    "SimConfig",
    "parse_config",
    "serialize_config",
    "load_config",
    "save_config",
    "validate_config",
    "GuardrailSet",
    "Milestone",
    "load_guardrails",
    "save_guardrails",
    "LiveGateway",
    "ScriptedGateway",
    "LlmGateway",
    "ScenarioScript",
    "ScriptedBackend",
    "load_script",
    "script_from_dict",
    "Monitor",
    "MonitorCadence",
    "MilestoneTrack",
    "Nudge",
    "NudgeController",
    "DebugEntry",
    "ReflectionFix",
    "RunTree",
    "fork_run",
    "load_tree",
    "Store",
    "RunStore",
    "store_root",
    "MatrixSpec",
    "new_matrix",
    "compile_config",
    "RunSettings",
    "RunSession",
    "create_run",
    "reflect_run",
    "fork_session",
    "scripted_gateway_for",
    "ScenarioPack",
    "ScoreCard",
    "load_pack",
    "run_pack",
    "emit_table",
    "__version__",
]
