/**
 * Readers for the simulator's CSV exports.
 *
 * Every file starts with `# key=value` comment lines (the producing run's
 * resolved config and seed), followed by either a header row plus records
 * (frequency, curve, comparison) or a bare numeric matrix (heatmaps).
 */
import { readFileSync } from "node:fs";
import Papa from "papaparse";

import { DataError } from "./errors.js";

export interface CsvTable {
  meta: Record<string, string>;
  rows: string[][];
  path: string;
}

export function readTable(path: string): CsvTable {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch (err) {
    if ((err as NodeJS.ErrnoException).code === "ENOENT") {
      throw new DataError(`${path}: no such file`);
    }
    throw err;
  }
  const meta: Record<string, string> = {};
  const body: string[] = [];
  for (const line of text.split(/\r?\n/)) {
    if (line.startsWith("# ")) {
      const eq = line.indexOf("=");
      if (eq > 2) meta[line.slice(2, eq)] = line.slice(eq + 1);
    } else if (line.trim() !== "") {
      body.push(line);
    }
  }
  const parsed = Papa.parse<string[]>(body.join("\n"), { skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    throw new DataError(`${path}: ${parsed.errors[0]!.message}`);
  }
  return { meta, rows: parsed.data, path };
}

function toNumber(raw: string, where: string): number {
  const v = Number(raw);
  if (raw.trim() === "" || Number.isNaN(v)) {
    throw new DataError(`${where}: expected a number, got ${JSON.stringify(raw)}`);
  }
  return v;
}

/** Header-row files: map named columns to per-row records. */
function records(table: CsvTable, required: string[]): Record<string, string>[] {
  const [header, ...rows] = table.rows;
  if (!header) throw new DataError(`${table.path}: empty CSV body`);
  const missing = required.filter((c) => !header.includes(c));
  if (missing.length > 0) {
    throw new DataError(
      `${table.path}: missing column(s) ${missing.join(", ")} ` +
        `(found: ${header.join(", ")})`,
    );
  }
  return rows.map((row) =>
    Object.fromEntries(header.map((name, i) => [name, row[i] ?? ""])),
  );
}

export interface HeatmapData {
  values: number[][]; // square, row-major
  meta: Record<string, string>;
}

export function loadHeatmap(path: string): HeatmapData {
  const table = readTable(path);
  if (table.rows.length === 0) throw new DataError(`${path}: empty CSV body`);
  const values = table.rows.map((row, i) =>
    row.map((cell, j) => toNumber(cell, `${path} row ${i} col ${j}`)),
  );
  for (const row of values) {
    if (row.length !== values.length) {
      throw new DataError(
        `${path}: heatmap must be square, got ${values.length} rows x ${row.length} cols`,
      );
    }
  }
  return { values, meta: table.meta };
}

export interface FrequencyData {
  experts: number[];
  counts: number[];
  normalized: number[];
  meta: Record<string, string>;
}

export function loadFrequency(path: string): FrequencyData {
  const table = readTable(path);
  const recs = records(table, ["expert", "count", "normalized"]);
  return {
    experts: recs.map((r) => toNumber(r.expert!, `${path} expert`)),
    counts: recs.map((r) => toNumber(r.count!, `${path} count`)),
    normalized: recs.map((r) => toNumber(r.normalized!, `${path} normalized`)),
    meta: table.meta,
  };
}

export interface CurveData {
  ranks: number[];
  shares: number[];
  cumulative: number[];
  meta: Record<string, string>;
}

export function loadCurve(path: string): CurveData {
  const table = readTable(path);
  const recs = records(table, ["rank", "share", "cumulative_fraction"]);
  return {
    ranks: recs.map((r) => toNumber(r.rank!, `${path} rank`)),
    shares: recs.map((r) => toNumber(r.share!, `${path} share`)),
    cumulative: recs.map((r) =>
      toNumber(r.cumulative_fraction!, `${path} cumulative_fraction`),
    ),
    meta: table.meta,
  };
}

export interface ComparisonRow {
  strategy: string;
  metrics: Record<string, number>;
}

export interface ComparisonData {
  rows: ComparisonRow[];
  /** Group label: sim.batch_size from the embedded config if present. */
  label: string;
  meta: Record<string, string>;
}

const COMPARISON_COLUMNS = [
  "strategy",
  "throughput_tokens_per_s",
  "total_hops",
  "dram_local_read_bytes",
  "dram_remote_read_bytes",
  "dram_local_write_bytes",
];

export function loadComparison(path: string): ComparisonData {
  const table = readTable(path);
  const recs = records(table, COMPARISON_COLUMNS);
  const rows = recs.map((r) => {
    const metrics: Record<string, number> = {};
    for (const [name, raw] of Object.entries(r)) {
      if (name === "strategy" || raw === "") continue;
      metrics[name] = toNumber(raw, `${path} ${name}`);
    }
    return { strategy: r.strategy!, metrics };
  });
  let label = path.replace(/^.*\//, "").replace(/\.csv$/, "");
  const rawConfig = table.meta.config;
  if (rawConfig) {
    try {
      const batch = JSON.parse(rawConfig)?.sim?.batch_size;
      if (batch !== undefined && batch !== null) label = `batch=${batch}`;
    } catch {
      // header config is informational; fall back to the filename
    }
  }
  return { rows, label, meta: table.meta };
}
