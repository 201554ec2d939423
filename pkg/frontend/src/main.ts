/**
 * Browser entry: poll the API, redraw the dashboard, wire the controls.
 *
 * The status cadence is one update every few ticks; ticks are wall-clock
 * fast under the scripted backend, so one poll per second keeps the view
 * current without hammering the API. All state lives in the ViewModel.
 */

import { ApiClient, NudgeStep } from "./api.js";
import { renderDashboard } from "./render.js";
import { ViewModel } from "./viewmodel.js";

const POLL_MS = 1000;

function mount(root: HTMLElement, baseUrl: string): void {
  const api = new ApiClient(baseUrl);
  const vm = new ViewModel(api);
  const pendingSteps: NudgeStep[] = [];

  const redraw = () => {
    root.innerHTML = renderDashboard(vm) + renderNudgeForm(pendingSteps);
  };

  const tick = async () => {
    try {
      if (vm.runId === null) {
        const runs = await api.listRuns();
        if (runs.length > 0) {
          await vm.select(runs[runs.length - 1]!.run_id);
        }
      } else {
        await vm.refresh();
      }
    } catch (err) {
      vm.notice = String(err);
    }
    redraw();
  };

  root.addEventListener("click", async (raw) => {
    const target = raw.target as HTMLElement;
    const action = target.dataset.action;
    const run = target.dataset.run;
    if (run) {
      await vm.select(run);
    } else if (action === "approve" && target.dataset.nudge) {
      await vm.approve(target.dataset.nudge);
      await vm.refresh();
    } else if (action === "reject" && target.dataset.nudge) {
      await vm.reject(target.dataset.nudge);
      await vm.refresh();
    } else if (action === "fork") {
      await vm.fork();
    } else if (action === "add-step") {
      const step = readStepForm(root);
      if (step) {
        pendingSteps.push(step);
      }
    } else if (action === "submit-nudge") {
      const note = (root.querySelector("input[name=note]") as HTMLInputElement)?.value ?? "";
      const nudge = await vm.submitNudge([...pendingSteps], note);
      if (nudge) {
        pendingSteps.length = 0;
      }
      await vm.refresh();
    } else if (target.dataset.fix !== undefined) {
      const wanted = new Set(vm.fixes.filter((f) => f.selected).map((f) => f.index));
      const index = Number(target.dataset.fix);
      if (wanted.has(index)) {
        wanted.delete(index);
      } else {
        wanted.add(index);
      }
      await vm.chooseFixes([...wanted].sort((a, b) => a - b));
    } else {
      return;
    }
    redraw();
  });

  void tick();
  setInterval(tick, POLL_MS);
}

function readStepForm(root: HTMLElement): NudgeStep | null {
  const value = (name: string) =>
    (root.querySelector(`[name=${name}]`) as HTMLInputElement | null)?.value ?? "";
  const step = { kind: value("kind"), agent: value("agent"), target: value("target") };
  return step.kind && step.agent ? step : null;
}

function renderNudgeForm(pending: NudgeStep[]): string {
  const steps = pending
    .map((s) => `<li>${s.kind} ${s.agent} &rarr; ${s.target}</li>`)
    .join("");
  return [
    '<section class="nudge-form">',
    "<h3>Manual nudge</h3>",
    '<select name="kind"><option>relocate</option><option>force_speak</option></select>',
    '<input name="agent" placeholder="agent"/>',
    '<input name="target" placeholder="destination or utterance"/>',
    '<button data-action="add-step">add step</button>',
    `<ol>${steps}</ol>`,
    '<input name="note" placeholder="note"/>',
    '<button data-action="submit-nudge">submit nudge</button>',
    "</section>",
  ].join("\n");
}

const app = typeof document === "undefined" ? null : document.getElementById("app");
if (app) {
  const base = new URLSearchParams(window.location.search).get("api") ??
    "http://127.0.0.1:8470";
  mount(app, base);
}

export { mount };
