"""Simulation world configuration: locations, agents, plans.

The on-disk JSON format is fixed: field names and nesting are part of the
external contract, and the canonical serializer round-trips files written by
this module byte-identically.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

# Exact key order for canonical serialization. Parsing is strict: unknown or
# missing keys are format errors, not warnings.
_CONFIG_KEYS = ("world_name", "locations", "agents")
_LOCATION_KEYS = ("name", "description")
_AGENT_KEYS = ("first_name", "private_bio", "public_bio", "directives", "initial_plan")
_PLAN_KEYS = ("description", "stop_condition", "location")


class ConfigFormatError(ValueError):
    """Raised when config JSON does not match the schema exactly."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class PlanSpec:
    description: str
    stop_condition: str
    location: str


@dataclass(frozen=True)
class AgentSpec:
    first_name: str
    private_bio: str
    public_bio: str
    directives: tuple[str, ...]
    initial_plan: PlanSpec


@dataclass(frozen=True)
class LocationSpec:
    name: str
    description: str


@dataclass(frozen=True)
class SimConfig:
    world_name: str
    locations: tuple[LocationSpec, ...]
    agents: tuple[AgentSpec, ...]

    def location_names(self) -> list[str]:
        return [loc.name for loc in self.locations]

    def agent_names(self) -> list[str]:
        return [a.first_name for a in self.agents]

    def agent(self, name: str) -> AgentSpec:
        for a in self.agents:
            if a.first_name == name:
                return a
        raise KeyError(name)


@dataclass
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, path: str, message: str) -> None:
        self.violations.append(Violation(path, message))

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(str(v) for v in self.violations)


def _check_keys(obj: dict, expected: tuple[str, ...], path: str, problems: list[str]) -> None:
    keys = set(obj)
    for missing in (k for k in expected if k not in keys):
        problems.append(f"{path}: missing field '{missing}'")
    for extra in sorted(keys - set(expected)):
        problems.append(f"{path}: unknown field '{extra}'")


def _expect_str(obj: dict, key: str, path: str, problems: list[str]) -> str:
    value = obj.get(key, "")
    if not isinstance(value, str):
        problems.append(f"{path}.{key}: expected string, got {type(value).__name__}")
        return ""
    return value


def config_from_dict(data: object) -> SimConfig:
    """Build a SimConfig from parsed JSON, strictly.

    Raises ConfigFormatError listing every schema problem found.
    """
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigFormatError(["top level: expected a JSON object"])
    _check_keys(data, _CONFIG_KEYS, "top level", problems)
    world_name = _expect_str(data, "world_name", "top level", problems) if "world_name" in data else ""

    locations: list[LocationSpec] = []
    raw_locations = data.get("locations", [])
    if not isinstance(raw_locations, list):
        problems.append("locations: expected a list")
        raw_locations = []
    for i, raw in enumerate(raw_locations):
        path = f"locations[{i}]"
        if not isinstance(raw, dict):
            problems.append(f"{path}: expected an object")
            continue
        _check_keys(raw, _LOCATION_KEYS, path, problems)
        locations.append(LocationSpec(
            name=_expect_str(raw, "name", path, problems),
            description=_expect_str(raw, "description", path, problems),
        ))

    agents: list[AgentSpec] = []
    raw_agents = data.get("agents", [])
    if not isinstance(raw_agents, list):
        problems.append("agents: expected a list")
        raw_agents = []
    for i, raw in enumerate(raw_agents):
        path = f"agents[{i}]"
        if not isinstance(raw, dict):
            problems.append(f"{path}: expected an object")
            continue
        _check_keys(raw, _AGENT_KEYS, path, problems)
        directives_raw = raw.get("directives", [])
        directives: list[str] = []
        if not isinstance(directives_raw, list) or not all(isinstance(d, str) for d in directives_raw):
            problems.append(f"{path}.directives: expected a list of strings")
        else:
            directives = list(directives_raw)
        plan_raw = raw.get("initial_plan", {})
        if not isinstance(plan_raw, dict):
            problems.append(f"{path}.initial_plan: expected an object")
            plan_raw = {}
        else:
            _check_keys(plan_raw, _PLAN_KEYS, f"{path}.initial_plan", problems)
        plan = PlanSpec(
            description=_expect_str(plan_raw, "description", f"{path}.initial_plan", problems),
            stop_condition=_expect_str(plan_raw, "stop_condition", f"{path}.initial_plan", problems),
            location=_expect_str(plan_raw, "location", f"{path}.initial_plan", problems),
        )
        agents.append(AgentSpec(
            first_name=_expect_str(raw, "first_name", path, problems),
            private_bio=_expect_str(raw, "private_bio", path, problems),
            public_bio=_expect_str(raw, "public_bio", path, problems),
            directives=tuple(directives),
            initial_plan=plan,
        ))

    if problems:
        raise ConfigFormatError(problems)
    return SimConfig(world_name=world_name, locations=tuple(locations), agents=tuple(agents))


def config_to_dict(config: SimConfig) -> dict:
    return {
        "world_name": config.world_name,
        "locations": [
            {"name": loc.name, "description": loc.description} for loc in config.locations
        ],
        "agents": [
            {
                "first_name": a.first_name,
                "private_bio": a.private_bio,
                "public_bio": a.public_bio,
                "directives": list(a.directives),
                "initial_plan": {
                    "description": a.initial_plan.description,
                    "stop_condition": a.initial_plan.stop_condition,
                    "location": a.initial_plan.location,
                },
            }
            for a in config.agents
        ],
    }


def parse_config(text: str) -> SimConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigFormatError([f"invalid JSON: {exc}"]) from exc
    return config_from_dict(data)


def serialize_config(config: SimConfig) -> str:
    """Canonical JSON text: fixed key order, 2-space indent, trailing newline."""
    return json.dumps(config_to_dict(config), indent=2, ensure_ascii=False) + "\n"


def load_config(path: str) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(config: SimConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(config))


def validate_config(config: SimConfig) -> ValidationReport:
    """Check referential and uniqueness invariants. Schema errors are the
    parser's job; this assumes a structurally well-formed SimConfig."""
    report = ValidationReport()
    if not config.world_name.strip():
        report.add("world_name", "must be non-empty")
    if not config.locations:
        report.add("locations", "at least one location is required")
    if not config.agents:
        report.add("agents", "at least one agent is required")

    seen_locations: dict[str, int] = {}
    for i, loc in enumerate(config.locations):
        if not loc.name.strip():
            report.add(f"locations[{i}].name", "must be non-empty")
            continue
        if loc.name in seen_locations:
            report.add(
                f"locations[{i}].name",
                f"duplicate location name '{loc.name}' (also locations[{seen_locations[loc.name]}])",
            )
        else:
            seen_locations[loc.name] = i

    seen_agents: dict[str, int] = {}
    location_names = set(seen_locations)
    for i, agent in enumerate(config.agents):
        path = f"agents[{i}]"
        if not agent.first_name.strip():
            report.add(f"{path}.first_name", "must be non-empty")
        elif agent.first_name in seen_agents:
            report.add(
                f"{path}.first_name",
                f"duplicate agent name '{agent.first_name}' (also agents[{seen_agents[agent.first_name]}])",
            )
        else:
            seen_agents[agent.first_name] = i
        if not agent.directives or not any(d.strip() for d in agent.directives):
            report.add(f"{path}.directives", "at least one non-empty directive is required")
        if agent.initial_plan.location not in location_names:
            report.add(
                f"{path}.initial_plan.location",
                f"unknown location '{agent.initial_plan.location}'",
            )
    return report
