/** View models: every rendered number originates from exactly one API
 * response, stamped with that response's epoch. The console never mixes
 * fields from different polls and performs no aggregation the service
 * doesn't already provide. */

import type {
  MetricsResponse,
  QueryResultJson,
  StatusResponse,
  SteeringActionJson,
} from "./api.js";

export interface StatusSummary {
  epochMs: number;
  engineState: string;
  workflowId: string | null;
  totals: Record<string, number>;
  totalTasks: number;
  perWorker: { worker: string; counts: Record<string, number> }[];
  perActivity: { activity: string; counts: Record<string, number> }[];
  allFinished: boolean;
}

export function summarizeStatus(status: StatusResponse): StatusSummary {
  const totals = status.tasks_by_status;
  const totalTasks = Object.values(totals).reduce((a, b) => a + b, 0);
  const byKey = (obj: Record<string, Record<string, number>>) =>
    Object.keys(obj)
      .sort((a, b) => (isNaN(+a) || isNaN(+b) ? a.localeCompare(b) : +a - +b))
      .map((k) => ({ key: k, counts: obj[k] }));
  return {
    epochMs: status.now_ms,
    engineState: status.engine_state,
    workflowId: status.run?.workflow_id ?? null,
    totals,
    totalTasks,
    perWorker: byKey(status.per_worker).map(({ key, counts }) => ({ worker: key, counts })),
    perActivity: byKey(status.per_activity).map(({ key, counts }) => ({
      activity: key,
      counts,
    })),
    allFinished: totalTasks > 0 && (totals["FINISHED"] ?? 0) === totalTasks,
  };
}

export interface QueryHistoryEntry {
  label: string;
  result: QueryResultJson;
  atEpochMs: number;
}

export class QueryHistory {
  entries: QueryHistoryEntry[] = [];

  push(label: string, result: QueryResultJson): QueryHistoryEntry {
    const entry = { label, result, atEpochMs: result.at_ms };
    this.entries.push(entry);
    return entry;
  }
}

/** Table shape every result rendering uses; parity tests compare this
 * directly against the API JSON. */
export interface RenderedTable {
  columns: string[];
  rows: (string | number | null)[][];
  caption: string;
}

export function tableFromResult(label: string, result: QueryResultJson): RenderedTable {
  return {
    columns: [...result.columns],
    rows: result.rows.map((r) => [...r]),
    caption: `${label} at t=${result.at_ms}ms (${result.rows.length} rows, ${result.elapsed_ms}ms)`,
  };
}

export interface SteerConfirmation {
  actionId: number;
  kind: string;
  activity: string;
  affectedTaskIds: number[];
  text: string;
}

export function confirmationFor(action: SteeringActionJson): SteerConfirmation {
  const ids = action.affected_task_ids;
  return {
    actionId: action.action_id,
    kind: action.kind,
    activity: action.activity_id,
    affectedTaskIds: [...ids],
    text:
      ids.length === 0
        ? "0 tasks affected"
        : `${ids.length} task(s) affected: ${ids.join(", ")}`,
  };
}

/** Throughput sparkline points (finished tasks per second from the metrics
 * endpoint, one point per poll). */
export class ThroughputSeries {
  points: { epochMs: number; tps: number }[] = [];
  readonly limit = 60;

  push(metrics: MetricsResponse, epochMs: number): void {
    this.points.push({ epochMs, tps: metrics.throughput_tps });
    if (this.points.length > this.limit) this.points.shift();
  }
}

export interface ConsoleFlags {
  stale: boolean;
  lastError: string | null;
  steeringEnabled: boolean;
}

export function flagsFrom(summary: StatusSummary | null, missedPolls: number): ConsoleFlags {
  return {
    stale: missedPolls >= 2,
    lastError: null,
    steeringEnabled:
      summary !== null && summary.engineState === "RUNNING" && !summary.allFinished,
  };
}
