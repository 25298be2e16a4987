/** Typed client for the engine's HTTP API (/api/v1). */

export interface StatusResponse {
  ok: boolean;
  engine_state: string;
  run: { workflow_id: string; started_ms: number } | null;
  topology: { workers: Record<string, string> } | null;
  tasks_by_status: Record<string, number>;
  per_worker: Record<string, Record<string, number>>;
  per_activity: Record<string, Record<string, number>>;
  now_ms: number;
}

export interface QueryResultJson {
  columns: string[];
  rows: (string | number | null)[][];
  at_ms: number;
  elapsed_ms: number;
}

export interface SteeringActionJson {
  action_id: number;
  kind: string;
  activity_id: string;
  affected_task_ids: number[];
  assignments: Record<string, unknown>;
  issued_at: number;
}

export interface TaskRow {
  task_id: number;
  activity_id: string;
  worker_id: number;
  status: string;
  command_line: string;
  failure_trials: number;
  start_time: number | null;
  end_time: number | null;
  input_tuple_ids: number[];
}

export interface MetricsResponse {
  ok: boolean;
  elapsed_ms: number | null;
  access_ms_maxsum: number;
  per_category_ms: Record<string, number>;
  breakdown_pct: Record<string, number>;
  tasks_by_status: Record<string, number>;
  throughput_tps: number;
}

export interface ProvenanceHop {
  tuple_id: number;
  activity_id: string;
  produced_by_task: number | null;
  used_tuple_ids: number[];
  fields: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

async function unwrap<T>(response: Response): Promise<T> {
  const body = await response.json();
  if (!response.ok || body.ok === false) {
    const err = body.error ?? { code: "error", message: response.statusText };
    throw new ApiError(err.code, err.message, response.status);
  }
  return body as T;
}

export class EngineApi {
  constructor(private base: string) {}

  private url(path: string): string {
    return `${this.base}/api/v1/${path}`;
  }

  async status(): Promise<StatusResponse> {
    return unwrap(await fetch(this.url("status")));
  }

  async tasks(params: {
    status?: string;
    activity?: string;
    limit?: number;
    after_id?: number;
  }): Promise<{ tasks: TaskRow[]; next_after_id: number; has_more: boolean }> {
    const qs = new URLSearchParams();
    if (params.status) qs.set("status", params.status);
    if (params.activity) qs.set("activity", params.activity);
    if (params.limit !== undefined) qs.set("limit", String(params.limit));
    if (params.after_id !== undefined) qs.set("after_id", String(params.after_id));
    return unwrap(await fetch(this.url(`tasks?${qs}`)));
  }

  async query(body: {
    id?: string;
    params?: Record<string, unknown>;
    plan?: unknown;
    now?: number;
  }): Promise<QueryResultJson> {
    const response = await fetch(this.url("query"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    const wrapped = await unwrap<{ result: QueryResultJson }>(response);
    return wrapped.result;
  }

  async steer(body: {
    kind: "update" | "prune";
    activity: string;
    where: string;
    set?: Record<string, unknown>;
  }): Promise<SteeringActionJson> {
    const response = await fetch(this.url("steer"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    const wrapped = await unwrap<{ action: SteeringActionJson }>(response);
    return wrapped.action;
  }

  async metrics(): Promise<MetricsResponse> {
    return unwrap(await fetch(this.url("metrics")));
  }

  async provenance(tupleId: number): Promise<{ hops: ProvenanceHop[]; input_roots: number[] }> {
    return unwrap(await fetch(this.url(`provenance?tuple_id=${tupleId}`)));
  }
}
