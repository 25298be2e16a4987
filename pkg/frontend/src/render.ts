/** HTML renderers. Pure string builders so tests need no DOM. */

import type { ProvenanceHop } from "./api.js";
import type { RenderedTable, StatusSummary, SteerConfirmation } from "./state.js";

const STATUSES = ["READY", "RUNNING", "FINISHED", "ABORTED"];

export function escapeHtml(text: unknown): string {
  return String(text ?? "")
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderTable(table: RenderedTable): string {
  const head = table.columns.map((c) => `<th>${escapeHtml(c)}</th>`).join("");
  const body = table.rows
    .map(
      (row) =>
        `<tr>${row
          .map((cell) => `<td>${escapeHtml(formatCell(cell))}</td>`)
          .join("")}</tr>`,
    )
    .join("");
  return (
    `<table class="result"><caption>${escapeHtml(table.caption)}</caption>` +
    `<thead><tr>${head}</tr></thead><tbody>${body}</tbody></table>`
  );
}

function formatCell(cell: string | number | null): string {
  if (cell === null) return "";
  if (typeof cell === "number" && !Number.isInteger(cell)) return cell.toFixed(3);
  return String(cell);
}

export function renderOverview(summary: StatusSummary, stale: boolean): string {
  const badge = summary.allFinished
    ? `<span class="badge done">all finished</span>`
    : `<span class="badge">${escapeHtml(summary.engineState)}</span>`;
  const staleBanner = stale
    ? `<div class="stale">service unreachable; showing data from t=${summary.epochMs}ms</div>`
    : "";
  const totals = STATUSES.map(
    (s) => `<span class="count ${s.toLowerCase()}">${s}: ${summary.totals[s] ?? 0}</span>`,
  ).join(" ");
  return (
    staleBanner +
    `<div class="head">${badge} workflow ${escapeHtml(summary.workflowId ?? "-")}` +
    ` <span class="epoch">epoch t=${summary.epochMs}ms</span></div>` +
    `<div class="totals">${totals} (of ${summary.totalTasks})</div>` +
    countsTable("worker", summary.perWorker.map((w) => ({ key: w.worker, counts: w.counts }))) +
    countsTable("activity", summary.perActivity.map((a) => ({ key: a.activity, counts: a.counts })))
  );
}

function countsTable(label: string, rows: { key: string; counts: Record<string, number> }[]): string {
  const head = `<th>${label}</th>` + STATUSES.map((s) => `<th>${s}</th>`).join("");
  const body = rows
    .map(
      (r) =>
        `<tr><td>${escapeHtml(r.key)}</td>` +
        STATUSES.map((s) => `<td>${r.counts[s] ?? 0}</td>`).join("") +
        `</tr>`,
    )
    .join("");
  return `<table class="counts"><thead><tr>${head}</tr></thead><tbody>${body}</tbody></table>`;
}

export function renderSparkline(points: { tps: number }[], width = 240, height = 40): string {
  if (points.length === 0) return `<svg class="spark" width="${width}" height="${height}"></svg>`;
  const max = Math.max(...points.map((p) => p.tps), 1e-9);
  const step = points.length > 1 ? width / (points.length - 1) : 0;
  const coords = points
    .map((p, i) => `${(i * step).toFixed(1)},${(height - (p.tps / max) * (height - 2)).toFixed(1)}`)
    .join(" ");
  return (
    `<svg class="spark" width="${width}" height="${height}">` +
    `<polyline fill="none" stroke="currentColor" points="${coords}"/></svg>`
  );
}

export function renderConfirmation(confirmation: SteerConfirmation): string {
  const links = confirmation.affectedTaskIds
    .map((id) => `<a href="#task-${id}" data-task="${id}">${id}</a>`)
    .join(", ");
  return (
    `<div class="confirmation">action ${confirmation.actionId} (${escapeHtml(confirmation.kind)})` +
    ` on ${escapeHtml(confirmation.activity)}: ${escapeHtml(confirmation.text.split(":")[0])}` +
    (links ? `: ${links}` : "") +
    `</div>`
  );
}

export function renderProvenance(hops: ProvenanceHop[], roots: number[]): string {
  const items = hops
    .map(
      (h) =>
        `<li>tuple ${h.tuple_id} (${escapeHtml(h.activity_id)})` +
        (h.produced_by_task === null
          ? ": workflow input"
          : `: from task ${h.produced_by_task}, used [${h.used_tuple_ids.join(", ")}]`) +
        `</li>`,
    )
    .join("");
  return `<div class="prov"><ol>${items}</ol><div>roots: ${roots.join(", ")}</div></div>`;
}
