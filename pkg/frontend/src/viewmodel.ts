/**
 * Client-side mirror of the runs and of one selected run.
 *
 * Everything here is derived from API responses; the view model never
 * invents state. Summary tables are append-only: a poll may extend them,
 * never rewrite or drop rows already shown. A violation means the server
 * stream lost history, which the dashboard must not paper over.
 */

import {
  ApiClient,
  ApiError,
  FixView,
  NudgeStep,
  NudgeView,
  ReflectionMiss,
  RunRow,
  StatusView,
  SummaryRecord,
  TreeNode,
  WorldConfig,
} from "./api.js";

export class AppendOnlyViolation extends Error {
  constructor(message: string) {
    super(message);
    this.name = "AppendOnlyViolation";
  }
}

/** Returns the appended suffix; throws if `next` shrank or rewrote rows. */
export function mergeAppendOnly<T>(current: T[], next: T[], label: string): T[] {
  if (next.length < current.length) {
    throw new AppendOnlyViolation(
      `${label}: ${current.length} rows shrank to ${next.length}`);
  }
  for (let i = 0; i < current.length; i++) {
    if (JSON.stringify(next[i]) !== JSON.stringify(current[i])) {
      throw new AppendOnlyViolation(`${label}: row ${i} was rewritten`);
    }
  }
  return next.slice(current.length);
}

/** Client-side mirror of the server's step validation, for inline messages. */
export function validateNudgeForm(steps: NudgeStep[], config: WorldConfig | null): string[] {
  const problems: string[] = [];
  if (steps.length === 0) {
    problems.push("a nudge needs at least one step");
  }
  const agents = new Set((config?.agents ?? []).map((a) => a.first_name));
  const locations = new Set((config?.locations ?? []).map((l) => l.name));
  steps.forEach((step, i) => {
    const at = `steps[${i}]`;
    if (step.kind !== "relocate" && step.kind !== "force_speak") {
      problems.push(`${at}: unknown kind '${step.kind}'`);
      return;
    }
    if (config && !agents.has(step.agent)) {
      problems.push(`${at}: unknown agent '${step.agent}'`);
    }
    if (step.kind === "relocate" && config && !locations.has(step.target)) {
      problems.push(`${at}: unknown location '${step.target}'`);
    }
    if (step.kind === "force_speak" && step.target.trim() === "") {
      problems.push(`${at}: empty utterance`);
    }
  });
  return problems;
}

/** One thing this browser session did; the audit the server must mirror. */
export interface SessionAction {
  kind: "approve" | "reject" | "submit_nudge" | "select_fixes" | "fork" | "stop";
  nudgeId?: string;
  steps?: NudgeStep[];
  note?: string;
  selections?: number[];
  childRunId?: string;
  reason?: string;
}

export class ViewModel {
  runs: RunRow[] = [];
  runId: string | null = null;
  config: WorldConfig | null = null;
  status: StatusView | null = null;
  summaries: SummaryRecord[] = [];
  nudges: NudgeView[] = [];
  misses: ReflectionMiss[] = [];
  fixes: FixView[] = [];
  tree: TreeNode[] = [];
  stale = false;
  notice: string | null = null; // conflicts and other surfaced, non-fatal errors
  formErrors: string[] = [];
  readonly actions: SessionAction[] = [];

  constructor(private readonly api: ApiClient) {}

  // ---------------------------------------------------------------- derived

  statuses(): SummaryRecord[] {
    return this.summaries.filter((r) => r.type === "status");
  }

  changes(): SummaryRecord[] {
    return this.summaries.filter((r) => r.type === "change");
  }

  dynamics(): SummaryRecord[] {
    return this.summaries.filter((r) => r.type === "dynamic");
  }

  /** Agent locations regrouped as a per-room roster. */
  roster(): Map<string, string[]> {
    const rooms = new Map<string, string[]>();
    const locations = this.status?.agent_locations ?? {};
    for (const name of Object.keys(locations).sort()) {
      const room = locations[name]!;
      if (!rooms.has(room)) {
        rooms.set(room, []);
      }
      rooms.get(room)!.push(name);
    }
    return new Map([...rooms.entries()].sort(([a], [b]) => a.localeCompare(b)));
  }

  pendingNudges(): NudgeView[] {
    return this.nudges.filter((n) => n.status === "proposed");
  }

  canFork(): boolean {
    return this.fixes.some((f) => f.selected);
  }

  // ---------------------------------------------------------------- polling

  async select(runId: string): Promise<void> {
    this.runId = runId;
    this.status = null;
    this.summaries = [];
    this.nudges = [];
    this.misses = [];
    this.fixes = [];
    this.notice = null;
    this.formErrors = [];
    await this.loadTree();
    await this.refresh();
  }

  async loadTree(): Promise<void> {
    this.tree = await this.api.tree();
    const node = this.tree.find((n) => n.run_id === this.runId);
    this.config = node ? node.config : null;
  }

  /**
   * One poll cycle. Network trouble marks the view stale and keeps the
   * last good data (the next cycle retries); append-only violations and
   * API errors propagate.
   */
  async refresh(): Promise<void> {
    if (this.runId === null) {
      return;
    }
    try {
      this.runs = await this.api.listRuns();
      this.status = await this.api.status(this.runId);
      const summaries = await this.api.summaries(this.runId);
      mergeAppendOnly(this.summaries, summaries, "summaries");
      this.summaries = summaries;
      const nudged = await this.api.nudges(this.runId);
      this.nudges = nudged.nudges;
      this.misses = nudged.misses;
      this.stale = false;
    } catch (err) {
      if (err instanceof ApiError || err instanceof AppendOnlyViolation) {
        throw err;
      }
      this.stale = true; // API down; badge the view and retry next cycle
    }
  }

  // ---------------------------------------------------------------- actions

  /** Approve or reject a proposal. A lost decision race becomes a notice. */
  private async decideNudge(
    globalId: string, decision: "approve" | "reject",
  ): Promise<NudgeView | null> {
    try {
      const nudge = decision === "approve"
        ? await this.api.approveNudge(globalId)
        : await this.api.rejectNudge(globalId);
      this.actions.push({ kind: decision, nudgeId: globalId });
      return nudge;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.notice = `nudge ${globalId}: ${err.detail}`;
        return null;
      }
      throw err;
    }
  }

  approve(globalId: string): Promise<NudgeView | null> {
    return this.decideNudge(globalId, "approve");
  }

  reject(globalId: string): Promise<NudgeView | null> {
    return this.decideNudge(globalId, "reject");
  }

  /** Validate the form against the config; only clean forms reach the API. */
  async submitNudge(steps: NudgeStep[], note = ""): Promise<NudgeView | null> {
    this.formErrors = validateNudgeForm(steps, this.config);
    if (this.formErrors.length > 0) {
      return null;
    }
    const nudge = await this.api.submitNudge(this.runId!, steps, note);
    this.actions.push({ kind: "submit_nudge", steps, note });
    return nudge;
  }

  async stop(reason?: string): Promise<StatusView> {
    const view = await this.api.stop(this.runId!, reason);
    this.actions.push({ kind: "stop", reason });
    this.status = view;
    return view;
  }

  async reflect(): Promise<FixView[]> {
    this.fixes = await this.api.reflect(this.runId!);
    return this.fixes;
  }

  async chooseFixes(selections: number[]): Promise<FixView[]> {
    this.fixes = await this.api.reflect(this.runId!, selections);
    this.actions.push({ kind: "select_fixes", selections });
    return this.fixes;
  }

  /** Fork with the chosen fixes and navigate to the child run. */
  async fork(body: Record<string, unknown> = {}): Promise<StatusView | null> {
    if (!this.canFork()) {
      this.notice = "select at least one fix before forking";
      return null;
    }
    const child = await this.api.fork(this.runId!, body);
    this.actions.push({ kind: "fork", childRunId: child.run_id });
    await this.select(child.run_id);
    return child;
  }
}
