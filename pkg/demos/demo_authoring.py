"""
Authoring a scenario with the configuration matrix
==================================================

The matrix has six dimensions (Agents, Actions, Locations, Milestones,
StopCondition, FailureConditions) and two rows: Idea cells hold checkable
options, Grounding cells hold free prose. Fill drafts each cell, submit
freezes what you checked, compile turns the whole thing into a validated
world config plus guardrails.

This demo drives the flow with a scripted gateway, so it runs offline and
prints the same artifacts every time. Swap in LiveGateway for a real model.
"""

import json

from dynex.gateway import ScriptedGateway
from dynex.matrix import (
    DIMENSIONS,
    CellContent,
    compile_config,
    fill_cell,
    new_matrix,
    submit_cell,
)
from dynex.guardrails import guardrails_to_dict
from dynex.worldconfig import config_to_dict

# What the "model" drafts for each Idea cell (a JSON array of options) and
# each Grounding cell (plain prose), keyed by the cell's display name.
IDEAS = {
    "Agents": ["3 high school seniors on the decorating committee",
               "1 strict chaperone patrolling the halls"],
    "Actions": ["Agents discuss plans, fetch supplies, and decorate"],
    "Locations": ["A gym with a supply closet next door"],
    "Milestones": ["Theme agreed", "Streamers reach the gym",
                   "Backdrop declared done"],
    "Stop Condition": ["The backdrop stands finished in the gym"],
    "Failure Condition": ["Anyone starts a food fight"],
}
GROUNDINGS = {
    "Agents": "Casey, Jordan, and Riley are seniors; they know each other.",
    "Actions": "Talking, walking between rooms, and simple prop work only.",
    "Locations": "The gym is the main floor; the closet holds streamers.",
    "Milestones": ("1) Someone says a theme out loud. "
                   "2) Streamers are carried into the gym. "
                   "3) Someone calls the backdrop done."),
    "Stop Condition": "Stop once the backdrop is declared finished.",
    "Failure Condition": "No thrown food of any kind.",
}

# The compile step asks the model for the final config over all 12 cells.
COMPILED = {
    "world_name": "Prom Backdrop Evening",
    "locations": [
        {"name": "Gym", "description": "The main floor, half decorated."},
        {"name": "Closet", "description": "Shelves of streamers and tape."},
    ],
    "agents": [
        {
            "first_name": "Casey",
            "private_bio": "Wants the backdrop to win a yearbook photo.",
            "public_bio": "Decisive committee lead.",
            "directives": ["Get a theme agreed, then build."],
            "initial_plan": {
                "description": "Pitch a theme and assign jobs.",
                "stop_condition": "Backdrop is done.",
                "location": "Gym",
            },
        },
        {
            "first_name": "Jordan",
            "private_bio": "",
            "public_bio": "Runner between rooms.",
            "directives": ["Fetch whatever the gym needs."],
            "initial_plan": {
                "description": "Stage supplies from the closet.",
                "stop_condition": "Backdrop is done.",
                "location": "Closet",
            },
        },
    ],
}


def scripted_cell(slots, prompt):
    if slots["row"] == "idea":
        return json.dumps(IDEAS[slots["dimension"]])
    return GROUNDINGS[slots["dimension"]]


gateway = ScriptedGateway(replies={
    "matrix_cell": scripted_cell,
    "config_compile": json.dumps(COMPILED),
})

# Start empty, then work dimension by dimension: draft the Idea options,
# check the ones to keep, and ground them in prose.
matrix = new_matrix("Prom date preparation")
for dimension in DIMENSIONS:
    draft = fill_cell(matrix, dimension, "Idea", gateway)
    # keep only the first option for Agents (no chaperone tonight)
    keep = 1 if dimension == "Agents" else len(draft.options)
    checked = [(text, i < keep) for i, (text, _) in enumerate(draft.options)]
    submit_cell(matrix, dimension, "Idea", CellContent(options=checked))

    prose = fill_cell(matrix, dimension, "Grounding", gateway)
    submit_cell(matrix, dimension, "Grounding", prose)
    print(f"submitted {dimension}: checked {keep} of {len(checked)} + grounding")

# Compile the finished matrix into the two run artifacts.
config, guardrails = compile_config(matrix, gateway)
print()
print(json.dumps(config_to_dict(config), indent=2))
print()
print(json.dumps(guardrails_to_dict(guardrails), indent=2))
