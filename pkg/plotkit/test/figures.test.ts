/**
 * Renders every figure type from the shipped sample logs and checks the
 * drawn data (read back from data-* attributes in the SVG itself) against an
 * independent parse of the source files. Equality is exact, no tolerance.
 */

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { readChanceLevel, readMetrics, readSummary } from "../src/data.js";
import { copyDepth, gridHeatmap, learningCurve, regSweep } from "../src/figures.js";

const SAMPLES = new URL("../samples/", import.meta.url).pathname;

/** Test-local CSV parse: header split on commas, no quoting in our files. */
function rawCsv(path: string): Record<string, string>[] {
  const [header, ...lines] = readFileSync(path, "utf-8").trim().split("\n");
  const cols = header.split(",");
  return lines.map((line) => {
    const cells = line.split(",");
    return Object.fromEntries(cols.map((c, i) => [c, cells[i]]));
  });
}

function circles(svg: string): { series: string; x: number; y: number }[] {
  const out: { series: string; x: number; y: number }[] = [];
  const pattern = /<circle[^>]*data-series="([^"]+)" data-x="([^"]+)" data-y="([^"]+)"/g;
  for (const match of svg.matchAll(pattern)) {
    out.push({ series: match[1], x: Number(match[2]), y: Number(match[3]) });
  }
  return out;
}

function heatCells(svg: string): { x: number; y: number; value: number }[] {
  const out: { x: number; y: number; value: number }[] = [];
  const pattern = /<rect[^>]*data-x="([^"]+)" data-y="([^"]+)" data-value="([^"]+)"/g;
  for (const match of svg.matchAll(pattern)) {
    out.push({ x: Number(match[1]), y: Number(match[2]), value: Number(match[3]) });
  }
  return out;
}

describe("learning_curve from shipped logs", () => {
  const metricsPath = `${SAMPLES}memorize/metrics.jsonl`;
  const configPath = `${SAMPLES}memorize/config.resolved.json`;

  it("draws every epoch of every metric exactly as logged", () => {
    const rows = readFileSync(metricsPath, "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    const figure = learningCurve(readMetrics(metricsPath), readChanceLevel(configPath));
    const drawn = circles(figure.svg);

    for (const name of ["train_class_acc", "test_class_acc", "rnd_label_acc"]) {
      const points = drawn.filter((p) => p.series === name);
      expect(points.length).toBe(rows.length);
      rows.forEach((row, i) => {
        expect(points[i].x).toBe(row.epoch);
        expect(points[i].y).toBe(row[name]);
      });
    }
  });

  it("draws the chance reference at 1/n", () => {
    const figure = learningCurve(readMetrics(metricsPath), readChanceLevel(configPath));
    expect(figure.svg).toContain(`data-chance="0.5"`);
  });

  it("renders identical bytes on identical inputs", () => {
    const a = learningCurve(readMetrics(metricsPath), 0.5).svg;
    const b = learningCurve(readMetrics(metricsPath), 0.5).svg;
    expect(a).toBe(b);
  });
});

describe("reg_sweep from shipped logs", () => {
  const path = `${SAMPLES}dropout_sweep/summary.csv`;

  it("plots final accuracies exactly as in the CSV", () => {
    const figure = regSweep(readSummary(path), path);
    const source = rawCsv(path);
    const drawn = circles(figure.svg);
    for (const row of source) {
      for (const metric of ["final_test_acc", "final_rnd_acc"]) {
        const point = drawn.find((p) => p.series === metric && p.x === Number(row.value));
        expect(point, `${metric} at ${row.value}`).toBeDefined();
        expect(point!.y).toBe(Number(row[metric]));
      }
    }
    expect(drawn.length).toBe(source.length * 2);
  });

  it("orders points by axis value", () => {
    const figure = regSweep(readSummary(path), path);
    const xs = figure.series[0].x;
    expect([...xs].sort((a, b) => a - b)).toEqual(xs);
  });
});

describe("copy_depth from shipped logs", () => {
  const path = `${SAMPLES}copy_depth/summary.csv`;

  it("plots rnd accuracy per depth exactly, full depth resolved numerically", () => {
    const figure = copyDepth(readSummary(path), path);
    const source = rawCsv(path);
    const drawn = circles(figure.svg).filter((p) => p.series === "final_rnd_acc");
    expect(drawn.length).toBe(source.length);
    for (const row of source) {
      const point = drawn.find((p) => p.x === Number(row.value));
      expect(point).toBeDefined();
      expect(point!.y).toBe(Number(row.final_rnd_acc));
    }
    expect(Math.max(...drawn.map((p) => p.x))).toBe(10); // "full" resolved to layer count
  });
});

describe("grid_heatmap from shipped logs", () => {
  const path = `${SAMPLES}grid/summary.csv`;

  it("renders one cell per grid point with the exact CSV value", () => {
    const figure = gridHeatmap(readSummary(path), path);
    const source = rawCsv(path);
    const cells = heatCells(figure.svg);
    expect(cells.length).toBe(source.length);
    for (const row of source) {
      const cell = cells.find((c) => c.x === Number(row.value) && c.y === Number(row.value2));
      expect(cell, `cell (${row.value}, ${row.value2})`).toBeDefined();
      expect(cell!.value).toBe(Number(row.final_test_acc));
    }
  });

  it("can render the rnd-accuracy metric instead", () => {
    const figure = gridHeatmap(readSummary(path), path, "final_rnd_acc");
    const source = rawCsv(path);
    const cells = heatCells(figure.svg);
    for (const row of source) {
      const cell = cells.find((c) => c.x === Number(row.value) && c.y === Number(row.value2));
      expect(cell!.value).toBe(Number(row.final_rnd_acc));
    }
  });
});
