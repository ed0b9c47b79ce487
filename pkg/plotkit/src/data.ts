/**
 * Readers for the run-directory file contracts: metrics.jsonl (one JSON
 * record per epoch), summary.csv (one row per sweep member), and
 * config.resolved.json (for the chance level 1/n on rnd-accuracy plots).
 */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

export class PlotError extends Error {}

export interface MetricsRow {
  epoch: number;
  train_class_acc: number;
  test_class_acc: number;
  rnd_label_acc: number | null;
  class_loss: number | null;
  rnd_loss: number | null;
  reg_loss: number | null;
  lr: number;
  clamp_count: number;
}

export interface SummaryRow {
  run: string;
  axis: string;
  value: string;
  axis2: string;
  value2: string;
  final_train_acc: string;
  final_test_acc: string;
  final_rnd_acc: string;
  n_rnd: string;
  status: string;
}

const METRICS_COLUMNS = [
  "epoch",
  "train_class_acc",
  "test_class_acc",
  "rnd_label_acc",
  "class_loss",
  "rnd_loss",
  "reg_loss",
  "lr",
  "clamp_count",
];

const SUMMARY_COLUMNS = [
  "run",
  "axis",
  "value",
  "axis2",
  "value2",
  "final_train_acc",
  "final_test_acc",
  "final_rnd_acc",
  "n_rnd",
  "status",
];

export function requireColumns(present: string[], needed: string[], where: string): void {
  for (const column of needed) {
    if (!present.includes(column)) {
      throw new PlotError(`${where} is missing column "${column}"`);
    }
  }
}

export function readMetrics(path: string): MetricsRow[] {
  const lines = readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0);
  if (lines.length === 0) {
    throw new PlotError(`metrics file ${path} is empty`);
  }
  const rows = lines.map((line, i) => {
    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch {
      throw new PlotError(`metrics file ${path} line ${i + 1} is not valid JSON`);
    }
    return parsed as MetricsRow;
  });
  requireColumns(Object.keys(rows[0]), METRICS_COLUMNS, `metrics file ${path}`);
  return rows;
}

export function readSummary(path: string): SummaryRow[] {
  const text = readFileSync(path, "utf-8");
  const parsed = Papa.parse<SummaryRow>(text.trim(), { header: true, skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    throw new PlotError(`summary file ${path}: ${parsed.errors[0].message}`);
  }
  if (parsed.data.length === 0) {
    throw new PlotError(`summary file ${path} has no rows`);
  }
  requireColumns(parsed.meta.fields ?? [], SUMMARY_COLUMNS, `summary file ${path}`);
  return parsed.data;
}

export function readChanceLevel(configPath: string): number {
  const doc = JSON.parse(readFileSync(configPath, "utf-8")) as { heads?: { n_rnd?: number } };
  const n = doc.heads?.n_rnd;
  if (typeof n !== "number" || n < 2) {
    throw new PlotError(`config file ${configPath} has no usable heads.n_rnd`);
  }
  return 1 / n;
}

/** Numeric cell access with a named-column error on junk. */
export function numeric(row: SummaryRow, column: keyof SummaryRow, path: string): number {
  const raw = row[column];
  const value = Number(raw);
  if (raw === "" || !Number.isFinite(value)) {
    throw new PlotError(`summary file ${path} has non-numeric "${column}" value ${JSON.stringify(raw)}`);
  }
  return value;
}
