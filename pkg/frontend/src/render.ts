/**
 * HTML rendering: every panel is a pure function of the view model.
 *
 * Tables render their rows in stored order, so an append-only model gives
 * an append-only page; rendering never sorts, dedupes, or rewrites rows.
 */

import { EventRow, FixView, NudgeView, SummaryRecord, TreeNode } from "./api.js";
import { ViewModel } from "./viewmodel.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function statusLight(level: string | null): string {
  const shown = level === "green" || level === "yellow" || level === "red"
    ? level
    : "unknown";
  return `<span class="light ${shown}" title="${shown}">&#9679;</span>`;
}

function table(caption: string, header: string[], rows: string[][]): string {
  const head = header.map((h) => `<th>${escapeHtml(h)}</th>`).join("");
  const body = rows
    .map((cells) => `<tr>${cells.map((c) => `<td>${escapeHtml(c)}</td>`).join("")}</tr>`)
    .join("\n");
  return [
    `<table class="${caption.toLowerCase().replaceAll(" ", "-")}">`,
    `<caption>${escapeHtml(caption)}</caption>`,
    `<thead><tr>${head}</tr></thead>`,
    `<tbody>\n${body}\n</tbody>`,
    "</table>",
  ].join("\n");
}

export function renderStatusTable(records: SummaryRecord[]): string {
  const rows = records.map((r) => [
    String(r.at),
    String(r.level ?? ""),
    String(r.reason ?? ""),
    r.trigger ? String(r.trigger) : "",
  ]);
  return table("Status updates", ["tick", "level", "reason", "trigger"], rows);
}

export function renderChangeTable(records: SummaryRecord[]): string {
  const rows = records.map((r) => [
    String(r.at),
    String(r.milestone_label ?? ""),
    JSON.stringify(r.where ?? {}),
    JSON.stringify(r.what ?? {}),
    String(r.change ?? ""),
  ]);
  return table("Change summaries", ["tick", "milestone", "where", "what", "change"], rows);
}

export function renderDynamicTable(records: SummaryRecord[]): string {
  const rows = records.map((r) => [
    String(r.at),
    String(r.milestone ?? ""),
    String(r.dynamic ?? ""),
  ]);
  return table("Dynamic summaries", ["tick", "milestone", "dynamic"], rows);
}

export function renderRoster(rooms: Map<string, string[]>): string {
  const items = [...rooms.entries()]
    .map(([room, agents]) =>
      `<li><b>${escapeHtml(room)}</b>: ${agents.map(escapeHtml).join(", ")}</li>`)
    .join("\n");
  return `<ul class="roster">\n${items}\n</ul>`;
}

export function renderNudges(nudges: NudgeView[]): string {
  const items = nudges.map((n) => {
    const steps = n.steps
      .map((s) => `${s.kind} ${s.agent} &rarr; ${escapeHtml(s.target)}`)
      .join("; ");
    const buttons = n.status === "proposed"
      ? `<button data-action="approve" data-nudge="${n.global_id}">approve</button>` +
        `<button data-action="reject" data-nudge="${n.global_id}">reject</button>`
      : "";
    const error = n.error ? ` <span class="error">${escapeHtml(n.error)}</span>` : "";
    return `<li class="nudge ${n.status}" data-nudge="${n.global_id}">` +
      `[${n.status}] ${n.origin} @${n.created_at}: ${escapeHtml(n.problem)} ` +
      `(${steps})${error}${buttons}</li>`;
  }).join("\n");
  return `<ul class="nudges">\n${items}\n</ul>`;
}

export function renderFixes(fixes: FixView[], forkEnabled: boolean): string {
  const items = fixes.map((f) =>
    `<li><label><input type="checkbox" data-fix="${f.index}"` +
    `${f.selected ? " checked" : ""}/> ` +
    `<b>${escapeHtml(f.problem)}</b>: ${escapeHtml(f.solution)}</label></li>`,
  ).join("\n");
  const fork = `<button data-action="fork"${forkEnabled ? "" : " disabled"}>fork with selected fixes</button>`;
  return `<ul class="fixes">\n${items}\n</ul>\n${fork}`;
}

export function renderEventLog(events: EventRow[]): string {
  const rows = events.map((e) => [
    String(e.seq),
    String(e.sim_time),
    e.agent,
    e.location,
    e.kind,
    e.payload,
    e.nudge_id ?? "",
  ]);
  return table("Raw log", ["seq", "time", "agent", "location", "kind", "payload", "nudge"], rows);
}

export function renderTree(nodes: TreeNode[], selected: string | null): string {
  const children = new Map<string | null, TreeNode[]>();
  for (const node of nodes) {
    const key = node.parent_id;
    if (!children.has(key)) {
      children.set(key, []);
    }
    children.get(key)!.push(node);
  }
  const branch = (parent: string | null): string => {
    const here = children.get(parent) ?? [];
    if (here.length === 0) {
      return "";
    }
    const items = here.map((n) => {
      const classes = n.run_id === selected ? ' class="selected"' : "";
      return `<li${classes}><a data-run="${n.run_id}">${n.run_id}</a>` +
        `${branch(n.run_id)}</li>`;
    }).join("\n");
    return `<ul class="tree">\n${items}\n</ul>`;
  };
  return branch(null);
}

/** The whole dashboard for the selected run, as one HTML string. */
export function renderDashboard(vm: ViewModel): string {
  const status = vm.status;
  const parts: string[] = [];
  const stale = vm.stale ? ' <span class="badge stale">stale</span>' : "";
  const level = status?.latest_status
    ? String(status.latest_status.level ?? "")
    : null;
  const head = status
    ? `${statusLight(level)} <b>${status.run_id}</b> ` +
      `${status.state} @tick ${status.tick}, ` +
      `milestones ${status.milestones_reached}, frontier ${status.frontier}`
    : "no run selected";
  parts.push(`<header>${head}${stale}</header>`);
  if (vm.notice) {
    parts.push(`<div class="notice">${escapeHtml(vm.notice)}</div>`);
  }
  if (vm.formErrors.length > 0) {
    const items = vm.formErrors.map((e) => `<li>${escapeHtml(e)}</li>`).join("");
    parts.push(`<ul class="form-errors">${items}</ul>`);
  }
  if (status && status.state !== "running") {
    parts.push(
      `<section class="final-summary">Run ${status.run_id} ${status.state}` +
      ` (${escapeHtml(status.reason ?? "")}): ` +
      `${status.milestones_reached} milestones after tick ${status.tick}.</section>`);
  }
  parts.push(renderRoster(vm.roster()));
  parts.push(renderStatusTable(vm.statuses()));
  parts.push(renderChangeTable(vm.changes()));
  parts.push(renderDynamicTable(vm.dynamics()));
  parts.push(renderNudges(vm.nudges));
  parts.push(renderFixes(vm.fixes, vm.canFork()));
  parts.push(renderTree(vm.tree, vm.runId));
  return parts.join("\n");
}
