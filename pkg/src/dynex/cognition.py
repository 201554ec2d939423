"""Live cognition backend: an LLM plays every agent, one call per step.

This is the non-deterministic counterpart to scripting.ScriptedBackend. The
agent loop prompt is internal to the backend (the gateway's template catalog
covers orchestration, not agent brains), but stop conditions go through the
catalog's stop_condition_check template so judgment stays uniform.
"""

from __future__ import annotations

import os

import httpx

from .engine import Action, ActionKind, AgentView, BackendFault, Decision
from .gateway import (
    ENV_API_KEY,
    ENV_BASE_URL,
    ENV_MODEL,
    GatewayError,
    LlmGateway,
    ShapeError,
    parse_shaped,
    Shape,
)
from .worldconfig import SimConfig

_STEP_PROMPT = """You are playing {name} in a multi-agent simulation.

Public bio: {public_bio}
Private bio: {private_bio}
Directives:
{directives}

You are currently in: {location}
Locations you may move to: {locations}
Other agents: {agents}

Your current plan: {plan}

Recent memories (newest last):
{memories}

Decide what {name} does this turn. Reply with a single JSON object and
nothing else, using any of these optional fields:
{{"say": "<utterance>", "move_to": "<location name>", "do": "<visible deed>", "plan": "<revised plan>"}}
Use an empty object {{}} to do nothing this turn."""


def _render_memories(view: AgentView, limit: int = 30) -> str:
    texts = [m.content for m in view.memories[-limit:]]
    return "\n".join(f"- {t}" for t in texts) if texts else "(none yet)"


class LiveCognitionBackend:
    """Drives agents through an OpenAI-compatible chat endpoint.

    Each agent_step costs one completion; stop checks cost one gateway call.
    Transport or parse trouble raises BackendFault so the engine's per-agent
    fault counters see it.
    """

    def __init__(self, gateway: LlmGateway, base_url: str | None = None,
                 model: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0, max_tokens: int = 400):
        self.gateway = gateway
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout
        self.max_tokens = max_tokens
        self.config: SimConfig | None = None

    def attach(self, config: SimConfig) -> None:
        if not self.base_url or not self.model:
            raise BackendFault(
                f"live backend needs {ENV_BASE_URL} and {ENV_MODEL} set")
        self.config = config

    def _chat(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.max_tokens,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = httpx.post(f"{self.base_url}/chat/completions",
                                  json=payload, headers=headers,
                                  timeout=self.timeout)
            response.raise_for_status()
            return response.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendFault(f"live cognition call failed: {exc}") from exc

    def decide(self, view: AgentView) -> Decision:
        assert self.config is not None, "attach() first"
        spec = self.config.agent(view.name)
        others = [n for n in self.config.agent_names() if n != view.name]
        prompt = _STEP_PROMPT.format(
            name=view.name,
            public_bio=spec.public_bio,
            private_bio=spec.private_bio,
            directives="\n".join(f"- {d}" for d in view.directives),
            location=view.location,
            locations=", ".join(self.config.location_names()),
            agents=", ".join(others) if others else "(none)",
            plan=view.plan,
            memories=_render_memories(view),
        )
        reply = self._chat(prompt)
        try:
            data = parse_shaped(reply, Shape.JSON_OBJECT)
        except ShapeError as exc:
            raise BackendFault(f"unparseable decision for {view.name}: {exc}") from exc
        actions: list[Action] = []
        if isinstance(data.get("say"), str) and data["say"].strip():
            actions.append(Action(ActionKind.SPEAK, data["say"].strip()))
        if isinstance(data.get("move_to"), str) and data["move_to"].strip():
            actions.append(Action(ActionKind.MOVE, data["move_to"].strip()))
        if isinstance(data.get("do"), str) and data["do"].strip():
            actions.append(Action(ActionKind.ACT, data["do"].strip()))
        plan = data.get("plan") if isinstance(data.get("plan"), str) else None
        return Decision(actions=tuple(actions), plan=plan)

    def stop_met(self, view: AgentView) -> bool:
        evidence = "\n".join(m.content for m in view.memories[-20:]) or "(no events yet)"
        try:
            reply = self.gateway.complete("stop_condition_check", {
                "condition": view.stop_condition,
                "subject": view.name,
                "evidence": evidence,
            })
        except GatewayError:
            return False
        return reply.strip().upper().split()[:1] == ["MET"]
