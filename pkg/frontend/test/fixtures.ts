/**
 * Scripted world for steering tests: the same two-room phase drill the
 * backend test suite uses, plus canned gateway replies so reflection and
 * fix generation stay deterministic.
 */

import { WorldConfig } from "../src/api.js";

export const BASE_CONFIG: WorldConfig = {
  world_name: "Test World",
  locations: [
    { name: "Lab", description: "A lab." },
    { name: "Hall", description: "A hall." },
  ],
  agents: [
    {
      first_name: "Ann",
      private_bio: "Keeps a secret checklist.",
      public_bio: "Researcher.",
      directives: ["Work through the phases."],
      initial_plan: {
        description: "Run the phases.",
        stop_condition: "All phases done.",
        location: "Lab",
      },
    },
    {
      first_name: "Ben",
      private_bio: "",
      public_bio: "Assistant.",
      directives: ["Watch."],
      initial_plan: {
        description: "Observe.",
        stop_condition: "Told to stop.",
        location: "Hall",
      },
    },
  ],
};

export const BASE_GUARDRAILS = {
  stop_condition: "All five phases are announced.",
  milestones: [1, 2, 3, 4, 5].map((i) => ({
    id: i,
    description: `Phase ${i} announced`,
    criteria: `Ann says phase ${i}`,
    predicate: { contains: `phase ${i}`, agent: "Ann", kind: "speak" },
  })),
  failure_conditions: ["Someone announces a disaster."],
  failure_predicates: [{ contains: "disaster" }],
};

/** Ann announces two phases, then drops a marker and idles forever. */
export const STEERING_SCRIPT = {
  agents: {
    Ann: {
      timeline: [
        { tick: 2, say: "phase 1" },
        { tick: 4, say: "phase 2" },
        { tick: 5, say: "wake marker now" },
      ],
      stop_when: { never: true },
    },
    Ben: { stop_when: { never: true } },
  },
  reflection_replies: [
    {
      when_log_contains: "wake marker",
      reply: "Problem: run has drifted Solution: 1. Move Ben to Lab",
    },
  ],
};

export function updatedConfig(): WorldConfig {
  const config: WorldConfig = JSON.parse(JSON.stringify(BASE_CONFIG));
  config.agents[0]!.public_bio = "A decisive researcher.";
  return config;
}

function fix(problem: string, solution: string) {
  return {
    problem,
    problem_example: "Seen at tick 5.",
    solution,
    solution_example: "Like this.",
  };
}

/** POST /runs body for the steering session. */
export function steeringRunBody(): Record<string, unknown> {
  const updated = JSON.stringify(updatedConfig());
  return {
    config: BASE_CONFIG,
    guardrails: BASE_GUARDRAILS,
    script: STEERING_SCRIPT,
    settings: { nudging: "manual", max_ticks: 100000 },
    gateway_replies: {
      holistic_reflection: JSON.stringify([
        fix("Ann never announces the later phases", "Make Ann more decisive."),
        fix("Ben idles in the hall", "Give Ben a task."),
      ]),
      config_update: updated,
      config_checker: updated,
    },
  };
}
