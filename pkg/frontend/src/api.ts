/**
 * Typed client for the orchestrator HTTP API.
 *
 * Every dashboard read and mutation goes through here; the UI holds no
 * authority of its own over run state. Non-2xx responses become ApiError
 * with the server's detail string, so callers can surface conflicts.
 */

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export interface RunRow {
  run_id: string;
  state: string;
  tick: number;
  condition: string;
}

export interface SummaryRecord {
  type: string;
  at: number;
  [key: string]: unknown;
}

export interface StatusView {
  run_id: string;
  state: string;
  reason: string | null;
  tick: number;
  condition: string;
  latest_status: SummaryRecord | null;
  frontier: number;
  milestones_reached: number;
  agent_locations: Record<string, string>;
  counts: {
    events: number;
    statuses: number;
    changes: number;
    dynamics: number;
    nudges: number;
  };
}

export interface NudgeStep {
  kind: string; // "relocate" | "force_speak"
  agent: string;
  target: string; // destination location, or the utterance
}

export interface NudgeView {
  id: string;
  global_id: string;
  origin: string;
  problem: string;
  steps: NudgeStep[];
  status: string;
  created_at: number;
  applied_events: [number, number] | null;
  error: string | null;
}

export interface ReflectionMiss {
  at: number;
  reason: string;
}

export interface EventRow {
  seq: number;
  sim_time: number;
  agent: string;
  location: string;
  kind: string;
  payload: string;
  nudge_id: string | null;
}

export interface FixView {
  index: number;
  problem: string;
  problem_example: string;
  solution: string;
  solution_example: string;
  selected: boolean;
}

export interface WorldLocation {
  name: string;
  description: string;
}

export interface WorldAgent {
  first_name: string;
  private_bio: string;
  public_bio: string;
  directives: string[];
  initial_plan: {
    description: string;
    stop_condition: string;
    location: string;
  };
}

export interface WorldConfig {
  world_name: string;
  locations: WorldLocation[];
  agents: WorldAgent[];
}

export interface TreeNode {
  run_id: string;
  parent_id: string | null;
  condition: string;
  config: WorldConfig;
  guardrails: Record<string, unknown>;
  paths: Record<string, string>;
}

export interface DebugEntry {
  problem: string;
  problem_example: string;
  solution: string;
  solution_example: string;
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    let data: unknown = null;
    try {
      data = text ? JSON.parse(text) : null;
    } catch {
      data = null;
    }
    if (!response.ok) {
      const detail =
        data !== null && typeof (data as { detail?: unknown }).detail === "string"
          ? (data as { detail: string }).detail
          : text;
      throw new ApiError(response.status, detail);
    }
    return data as T;
  }

  async listRuns(): Promise<RunRow[]> {
    const data = await this.request<{ runs: RunRow[] }>("GET", "/runs");
    return data.runs;
  }

  createRun(body: Record<string, unknown>): Promise<StatusView> {
    return this.request("POST", "/runs", body);
  }

  status(runId: string): Promise<StatusView> {
    return this.request("GET", `/runs/${runId}/status`);
  }

  events(runId: string, since = 0): Promise<{ events: EventRow[]; max_seq: number }> {
    return this.request("GET", `/runs/${runId}/events?since=${since}`);
  }

  async summaries(runId: string): Promise<SummaryRecord[]> {
    const data = await this.request<{ summaries: SummaryRecord[] }>(
      "GET", `/runs/${runId}/summaries`);
    return data.summaries;
  }

  nudges(runId: string): Promise<{ nudges: NudgeView[]; misses: ReflectionMiss[] }> {
    return this.request("GET", `/runs/${runId}/nudges`);
  }

  stop(runId: string, reason?: string): Promise<StatusView> {
    return this.request("POST", `/runs/${runId}/stop`, reason ? { reason } : {});
  }

  approveNudge(globalId: string): Promise<NudgeView> {
    return this.request("POST", `/nudges/${globalId}/approve`);
  }

  rejectNudge(globalId: string): Promise<NudgeView> {
    return this.request("POST", `/nudges/${globalId}/reject`);
  }

  submitNudge(runId: string, steps: NudgeStep[], note = ""): Promise<NudgeView> {
    return this.request("POST", `/runs/${runId}/nudges`, { steps, note });
  }

  async reflect(runId: string, selections?: number[]): Promise<FixView[]> {
    const body = selections === undefined ? {} : { selections };
    const data = await this.request<{ fixes: FixView[] }>(
      "POST", `/runs/${runId}/reflect`, body);
    return data.fixes;
  }

  fork(runId: string, body: Record<string, unknown> = {}): Promise<StatusView> {
    return this.request("POST", `/runs/${runId}/fork`, body);
  }

  async tree(): Promise<TreeNode[]> {
    const data = await this.request<{ nodes: TreeNode[] }>("GET", "/tree");
    return data.nodes;
  }

  debugList(scenario: string): Promise<{ scenario: string; entries: DebugEntry[] }> {
    return this.request("GET", `/debuglists/${encodeURIComponent(scenario)}`);
  }

  proposeDebugEntries(
    scenario: string, runId: string, userError: string,
  ): Promise<{ scenario: string; proposed: DebugEntry[] }> {
    return this.request("POST", `/debuglists/${encodeURIComponent(scenario)}`, {
      user_error: userError,
      run_id: runId,
    });
  }
}
