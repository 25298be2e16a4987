/** Console wiring: polling overview, query console, steering panel,
 * provenance drill-down. All state lives in the engine; this page only
 * renders API responses. */

import { ApiError, EngineApi } from "./api.js";
import { Poller } from "./poll.js";
import {
  QueryHistory,
  ThroughputSeries,
  confirmationFor,
  flagsFrom,
  summarizeStatus,
  tableFromResult,
  type StatusSummary,
} from "./state.js";
import { buildSteerBody, emptyForm, type PredicateForm } from "./predicate.js";
import {
  renderConfirmation,
  renderOverview,
  renderProvenance,
  renderSparkline,
  renderTable,
  escapeHtml,
} from "./render.js";

const PREDEFINED = ["Q1", "Q2", "Q3", "Q4", "Q5", "Q6", "Q7"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class Console {
  api = new EngineApi("");
  history = new QueryHistory();
  throughput = new ThroughputSeries();
  summary: StatusSummary | null = null;
  predicateForm: PredicateForm = emptyForm();
  pendingPrune: ReturnType<typeof buildSteerBody> | null = null;

  poller = new Poller(
    async () => {
      const [status, metrics] = await Promise.all([this.api.status(), this.api.metrics()]);
      this.summary = summarizeStatus(status);
      this.throughput.push(metrics, status.now_ms);
      this.renderOverviewPane(false);
    },
    () => this.renderOverviewPane(true),
  );

  renderOverviewPane(stale: boolean): void {
    const flags = flagsFrom(this.summary, stale ? this.poller.missedPolls : 0);
    if (this.summary) {
      el("overview").innerHTML =
        renderOverview(this.summary, flags.stale) + renderSparkline(this.throughput.points);
    }
    el<HTMLFieldSetElement>("steer-fields").disabled = !flags.steeringEnabled;
    el("steer-note").textContent = flags.steeringEnabled
      ? ""
      : "steering is available while a workflow is RUNNING with unfinished tasks";
  }

  async runQuery(): Promise<void> {
    const select = el<HTMLSelectElement>("query-select");
    const paramsRaw = el<HTMLInputElement>("query-params").value.trim();
    const advanced = el<HTMLTextAreaElement>("query-advanced").value.trim();
    try {
      let label: string;
      let result;
      if (advanced) {
        // advanced tab: raw plan JSON passed through unvalidated
        result = await this.api.query({ plan: JSON.parse(advanced) });
        label = "plan";
      } else {
        const params = paramsRaw ? JSON.parse(paramsRaw) : {};
        result = await this.api.query({ id: select.value, params });
        label = select.value;
      }
      this.history.push(label, result);
      el("query-out").innerHTML = this.history.entries
        .slice(-5)
        .reverse()
        .map((entry) => renderTable(tableFromResult(entry.label, entry.result)))
        .join("");
      el("query-error").textContent = "";
    } catch (error) {
      el("query-error").textContent = describe(error);
    }
  }

  async submitSteer(confirmedPrune = false): Promise<void> {
    try {
      const draft = {
        kind: el<HTMLSelectElement>("steer-kind").value as "update" | "prune",
        activity: el<HTMLInputElement>("steer-activity").value.trim(),
        predicate: this.predicateForm,
        assignments: readAssignments(),
        advancedWhere: el<HTMLInputElement>("steer-where").value.trim() || undefined,
      };
      const body = buildSteerBody(draft);
      if (body.kind === "prune" && !confirmedPrune) {
        // destructive: require an explicit second step
        this.pendingPrune = body;
        el("steer-out").innerHTML =
          `<div class="confirm-prune">prune ${escapeHtml(body.activity)} where ` +
          `<code>${escapeHtml(body.where)}</code>? ` +
          `<button id="confirm-prune">confirm prune</button></div>`;
        el("confirm-prune").onclick = () => void this.submitSteer(true);
        return;
      }
      const action = await this.api.steer(this.pendingPrune ?? body);
      this.pendingPrune = null;
      el("steer-out").innerHTML = renderConfirmation(confirmationFor(action));
      await this.poller.fire(); // the next refresh reflects the change
    } catch (error) {
      el("steer-out").innerHTML = `<div class="error">${escapeHtml(describe(error))}</div>`;
    }
  }

  async drillProvenance(): Promise<void> {
    const tupleId = parseInt(el<HTMLInputElement>("prov-tuple").value, 10);
    try {
      const path = await this.api.provenance(tupleId);
      el("prov-out").innerHTML = renderProvenance(path.hops, path.input_roots);
    } catch (error) {
      el("prov-out").innerHTML = `<div class="error">${escapeHtml(describe(error))}</div>`;
    }
  }
}

function readAssignments(): Record<string, string> {
  const raw = el<HTMLInputElement>("steer-set").value.trim();
  const out: Record<string, string> = {};
  if (!raw) return out;
  for (const pair of raw.split(",")) {
    const [key, ...rest] = pair.split("=");
    if (key && rest.length) out[key.trim()] = rest.join("=").trim();
  }
  return out;
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.code}: ${error.message}`;
  return String(error);
}

export function boot(): void {
  const console_ = new Console();
  const select = el<HTMLSelectElement>("query-select");
  for (const q of PREDEFINED) {
    const option = document.createElement("option");
    option.value = q;
    option.textContent = q;
    select.appendChild(option);
  }
  el("query-run").onclick = () => void console_.runQuery();
  el("steer-submit").onclick = () => void console_.submitSteer();
  el("prov-go").onclick = () => void console_.drillProvenance();
  const interval = el<HTMLInputElement>("poll-interval");
  interval.onchange = () => console_.poller.setInterval(parseInt(interval.value, 10) || 2000);
  console_.poller.start();
}

if (typeof document !== "undefined" && document.getElementById("overview")) {
  boot();
}
