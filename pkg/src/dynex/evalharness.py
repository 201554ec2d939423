"""Desk-scale reproduction of the six-condition evaluation protocol.

A scenario pack is a directory:

    config.json            original configuration
    config_reflected.json  configuration after holistic reflection
    guardrails.json        five milestones with scripted predicates
    script.json            scripted behavior, faults, nudge tables
    script_reflected.json  optional; behavior under the reflected config
    annotations.json       optional; {condition: [notable milestone ids]}
    expected.json          optional; engineered ground-truth scores

Conditions reuse one config pair: Base/Auto/Man run the original, the R
variants run the reflected one. Scores are recomputed from the event log
with predicate-only milestone evaluation, never trusted from the monitor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources

from .guardrails import GuardrailSet, load_guardrails
from .monitor import MilestoneTrack, advance_milestones
from .orchestrator import RunSettings, create_run, scripted_gateway_for
from .scripting import ScenarioScript, load_script
from .store import Store
from .worldconfig import SimConfig, load_config

CONDITIONS = ("Base", "Auto", "Man", "BaseR", "AutoR", "ManR")
EVAL_MILESTONES = 5
EVAL_MAX_TICKS = 60
DEFAULT_ATTEMPTS = 3


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreCard:
    mechanics: int
    dynamics_numerator: int
    dynamics_denominator: int
    notes: str = ""

    def __post_init__(self):
        if not 0 <= self.mechanics <= EVAL_MILESTONES:
            raise EvalError(f"mechanics {self.mechanics} outside 0..{EVAL_MILESTONES}")
        if self.dynamics_denominator != self.mechanics:
            raise EvalError("dynamics denominator must equal reached milestones")
        if not 0 <= self.dynamics_numerator <= self.dynamics_denominator:
            raise EvalError("dynamics numerator must be within 0..denominator")

    @property
    def dynamics(self) -> str:
        return f"{self.dynamics_numerator}/{self.dynamics_denominator}"


def final_track(run, guardrails: GuardrailSet) -> MilestoneTrack:
    """Predicate-only milestone evaluation over the finished log."""
    for milestone in guardrails.milestones:
        if milestone.predicate is None:
            raise EvalError(
                f"milestone {milestone.id} has no predicate; "
                "eval scoring needs scripted ground truth")
    track = MilestoneTrack(milestones=guardrails.milestones)
    return advance_milestones(run, track, gateway=None)


def score_mechanics(run, guardrails: GuardrailSet) -> int:
    """Reached-milestone count on the fixed 0..5 scale."""
    if len(guardrails.milestones) != EVAL_MILESTONES:
        raise EvalError(
            f"mechanics scoring needs exactly {EVAL_MILESTONES} milestones, "
            f"got {len(guardrails.milestones)}")
    return final_track(run, guardrails).reached_count()


def score_dynamics(run, annotations, guardrails: GuardrailSet) -> tuple[int, int]:
    """(notable count, reached count) for explicit per-run annotations.

    Every annotated milestone must actually have been reached; annotating an
    unreached one is a scoring mistake, not a zero.
    """
    track = final_track(run, guardrails)
    reached = set(track.reached)
    marked = set(annotations)
    bogus = sorted(marked - reached)
    if bogus:
        raise EvalError(f"annotations cover unreached milestones: {bogus}")
    return len(marked), len(reached)


# ------------------------------------------------------------------- packs


@dataclass
class ScenarioPack:
    name: str
    config: SimConfig
    config_reflected: SimConfig
    guardrails: GuardrailSet
    script: ScenarioScript
    script_reflected: ScenarioScript
    annotations: dict | None = None
    expected: dict | None = None

    def config_for(self, label: str) -> SimConfig:
        return self.config_reflected if label.endswith("R") else self.config

    def script_for(self, label: str) -> ScenarioScript:
        return self.script_reflected if label.endswith("R") else self.script

    def notable_for(self, label: str) -> list[int]:
        if self.annotations and label in self.annotations:
            return list(self.annotations[label])
        return list(self.script_for(label).notable_milestones)


def load_pack(directory: str) -> ScenarioPack:
    def optional_json(name):
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    script = load_script(os.path.join(directory, "script.json"))
    reflected_path = os.path.join(directory, "script_reflected.json")
    script_reflected = load_script(reflected_path) \
        if os.path.exists(reflected_path) else script
    return ScenarioPack(
        name=os.path.basename(os.path.normpath(directory)),
        config=load_config(os.path.join(directory, "config.json")),
        config_reflected=load_config(os.path.join(directory, "config_reflected.json")),
        guardrails=load_guardrails(os.path.join(directory, "guardrails.json")),
        script=script,
        script_reflected=script_reflected,
        annotations=optional_json("annotations.json"),
        expected=optional_json("expected.json"),
    )


PACKAGED_PACKS = ("classroom", "prom", "debate")


def packaged_pack_dir(name: str) -> str:
    """Filesystem path of a pack shipped inside the package."""
    if name not in PACKAGED_PACKS:
        raise EvalError(f"no packaged pack '{name}' (have {PACKAGED_PACKS})")
    return str(resources.files("dynex").joinpath("packs", name))


def condition_settings(label: str, max_ticks: int = EVAL_MAX_TICKS,
                       seed: int = 0) -> RunSettings:
    if label not in CONDITIONS:
        raise EvalError(f"unknown condition '{label}'")
    base = label[:-1] if label.endswith("R") else label
    nudging = {"Base": "off", "Auto": "auto", "Man": "manual"}[base]
    return RunSettings(max_ticks=max_ticks, nudging=nudging,
                       condition=label, seed=seed)


@dataclass
class ConditionResult:
    label: str
    card: ScoreCard | None
    run_id: str | None = None
    ticks: int = 0
    state: str = ""
    reason: str | None = None
    error: str | None = None


def _run_once(pack: ScenarioPack, label: str, seed: int,
              store: Store | None, max_ticks: int):
    script = pack.script_for(label)
    session = create_run(
        pack.config_for(label),
        pack.guardrails,
        settings=condition_settings(label, max_ticks=max_ticks, seed=seed),
        store=store,
        gateway=scripted_gateway_for(script),
        script=script,
    )
    session.run_to_completion()
    mechanics = score_mechanics(session.run, pack.guardrails)
    track = final_track(session.run, pack.guardrails)
    # The script marks which milestones carry a notable dynamic when reached;
    # the per-run annotation is that set restricted to what this run reached.
    notable = [mid for mid in pack.notable_for(label) if mid in track.reached]
    numerator, denominator = score_dynamics(session.run, notable, pack.guardrails)
    card = ScoreCard(mechanics, numerator, denominator)
    return session, card


def run_condition(pack: ScenarioPack, label: str,
                  attempts: int = DEFAULT_ATTEMPTS,
                  store: Store | None = None,
                  max_ticks: int = EVAL_MAX_TICKS) -> ConditionResult:
    """Best of `attempts` runs: mechanics, then dynamics, then earliest stop."""
    outcomes = []
    errors = []
    for seed in range(attempts):
        try:
            session, card = _run_once(pack, label, seed, store, max_ticks)
        except Exception as exc:   # a crashed attempt must not sink the suite
            errors.append(f"attempt {seed + 1}: {exc}")
            continue
        outcomes.append((session, card))
    if not outcomes:
        return ConditionResult(label=label, card=None,
                               error="; ".join(errors) or "all attempts failed")
    session, card = max(
        outcomes,
        key=lambda pair: (pair[1].mechanics, pair[1].dynamics_numerator,
                          -pair[0].run.tick),
    )
    return ConditionResult(
        label=label,
        card=card,
        run_id=session.run_id if session.store else None,
        ticks=session.run.tick,
        state=session.run.state.value,
        reason=session.run.reason,
    )


def run_pack(pack: ScenarioPack, conditions=CONDITIONS,
             attempts: int = DEFAULT_ATTEMPTS, store: Store | None = None,
             max_ticks: int = EVAL_MAX_TICKS) -> dict[str, ConditionResult]:
    return {label: run_condition(pack, label, attempts=attempts, store=store,
                                 max_ticks=max_ticks)
            for label in conditions}


def verify_expected(pack: ScenarioPack,
                    results: dict[str, ConditionResult]) -> list[str]:
    """Mismatches between results and the pack's engineered ground truth."""
    problems = []
    for label, wanted in (pack.expected or {}).items():
        result = results.get(label)
        if result is None or result.card is None:
            problems.append(f"{label}: no scored run ({result.error if result else 'missing'})")
            continue
        if result.card.mechanics != wanted["mechanics"]:
            problems.append(f"{label}: mechanics {result.card.mechanics}, "
                            f"expected {wanted['mechanics']}")
        if "dynamics" in wanted and result.card.dynamics != wanted["dynamics"]:
            problems.append(f"{label}: dynamics {result.card.dynamics}, "
                            f"expected {wanted['dynamics']}")
    return problems


# ------------------------------------------------------------------ tables


def _columns(results_by_scenario: dict) -> list[str]:
    seen = []
    for results in results_by_scenario.values():
        for label in results:
            if label not in seen:
                seen.append(label)
    return sorted(seen, key=lambda l: CONDITIONS.index(l) if l in CONDITIONS else 99)


def _layout(rows: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for r, row in enumerate(rows):
        lines.append(" | ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if r == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def emit_table(results_by_scenario: dict[str, dict[str, ConditionResult]]) -> str:
    """Mechanics and dynamics score tables with per-column aggregates."""
    if not results_by_scenario:
        raise EvalError("no condition results to tabulate")
    columns = _columns(results_by_scenario)

    def cell(result: ConditionResult | None, kind: str) -> str:
        if result is None or result.card is None:
            return "-"
        return str(result.card.mechanics) if kind == "mechanics" else result.card.dynamics

    mech_rows = [["Scenario"] + columns]
    for scenario, results in results_by_scenario.items():
        mech_rows.append([scenario] + [cell(results.get(l), "mechanics") for l in columns])
    averages = ["Average"]
    for label in columns:
        scores = [results[label].card.mechanics
                  for results in results_by_scenario.values()
                  if results.get(label) and results[label].card]
        averages.append(f"{sum(scores) / len(scores):.2f}" if scores else "-")
    mech_rows.append(averages)

    dyn_rows = [["Scenario"] + columns]
    for scenario, results in results_by_scenario.items():
        dyn_rows.append([scenario] + [cell(results.get(l), "dynamics") for l in columns])
    totals = ["Total"]
    percents = ["Avg. % Notable Dynamics per Milestone"]
    for label in columns:
        cards = [results[label].card for results in results_by_scenario.values()
                 if results.get(label) and results[label].card]
        numerator = sum(c.dynamics_numerator for c in cards)
        denominator = sum(c.dynamics_denominator for c in cards)
        totals.append(f"{numerator}/{denominator}")
        percents.append(f"{100 * numerator / denominator:.2f}%" if denominator else "-")
    dyn_rows.append(totals)
    dyn_rows.append(percents)

    return ("Mechanics Scores\n" + _layout(mech_rows)
            + "\n\nDynamics Scores\n" + _layout(dyn_rows) + "\n")


def emit_csv(results_by_scenario: dict[str, dict[str, ConditionResult]]) -> str:
    if not results_by_scenario:
        raise EvalError("no condition results to tabulate")
    columns = _columns(results_by_scenario)
    lines = ["scenario,metric," + ",".join(columns)]
    for scenario, results in results_by_scenario.items():
        mech = [str(results[l].card.mechanics) if results.get(l) and results[l].card else ""
                for l in columns]
        dyn = [results[l].card.dynamics if results.get(l) and results[l].card else ""
               for l in columns]
        lines.append(f"{scenario},mechanics," + ",".join(mech))
        lines.append(f"{scenario},dynamics," + ",".join(dyn))
    return "\n".join(lines) + "\n"
