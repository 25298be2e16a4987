/** Builder for the engine's predicate grammar: `field OP literal` rows
 * joined by AND/OR. The console's form state compiles to the exact textual
 * syntax the API parses; the advanced tab bypasses this and sends free text
 * through unvalidated. */

export const OPS = ["=", "!=", "<", "<=", ">", ">=", "in"] as const;
export type Op = (typeof OPS)[number];

export interface AtomRow {
  field: string;
  op: Op;
  /** literal as typed; lists for `in` are comma separated */
  value: string;
}

export interface PredicateForm {
  rows: AtomRow[];
  joiner: "AND" | "OR";
}

export function emptyForm(): PredicateForm {
  return { rows: [{ field: "", op: "=", value: "" }], joiner: "AND" };
}

function needsQuotes(text: string): boolean {
  if (text === "") return true;
  return !/^[A-Za-z0-9._/-]+$/.test(text);
}

function renderLiteral(raw: string): string {
  const trimmed = raw.trim();
  if (/^-?\d+(\.\d+)?$/.test(trimmed)) return trimmed;
  return needsQuotes(trimmed) ? `'${trimmed}'` : trimmed;
}

export function renderAtom(row: AtomRow): string {
  const field = row.field.trim();
  if (!field) throw new Error("predicate row needs a field");
  if (row.op === "in") {
    const items = row.value
      .split(",")
      .map((v) => renderLiteral(v))
      .join(", ");
    return `${field} in [${items}]`;
  }
  return `${field} ${row.op} ${renderLiteral(row.value)}`;
}

/** Compiles the form to the textual predicate the API accepts. */
export function renderForm(form: PredicateForm): string {
  const rows = form.rows.filter((r) => r.field.trim() !== "");
  if (rows.length === 0) throw new Error("predicate needs at least one row");
  return rows.map(renderAtom).join(` ${form.joiner} `);
}

export interface SteerDraft {
  kind: "update" | "prune";
  activity: string;
  predicate: PredicateForm;
  /** update only: field -> raw value */
  assignments: Record<string, string>;
  /** advanced tab: raw predicate text overriding the builder */
  advancedWhere?: string;
}

function parseScalar(raw: string): string | number {
  const trimmed = raw.trim();
  if (/^-?\d+$/.test(trimmed)) return parseInt(trimmed, 10);
  if (/^-?\d+\.\d+$/.test(trimmed)) return parseFloat(trimmed);
  return trimmed;
}

/** Builds the POST /api/steer body from form state. */
export function buildSteerBody(draft: SteerDraft): {
  kind: "update" | "prune";
  activity: string;
  where: string;
  set?: Record<string, string | number>;
} {
  if (!draft.activity) throw new Error("pick an activity");
  const where = draft.advancedWhere?.trim() || renderForm(draft.predicate);
  if (draft.kind === "prune") {
    return { kind: "prune", activity: draft.activity, where };
  }
  const entries = Object.entries(draft.assignments).filter(([k, v]) => k && v.trim() !== "");
  if (entries.length === 0) throw new Error("update needs at least one assignment");
  const set: Record<string, string | number> = {};
  for (const [key, value] of entries) set[key] = parseScalar(value);
  return { kind: "update", activity: draft.activity, where, set };
}
