/**
 * The four figure types, each a pure function of the parsed log files.
 * Rendered data points are returned alongside the SVG so callers (and the
 * tests) can compare exactly what was drawn against the source values.
 */

import {
  MetricsRow,
  PlotError,
  SummaryRow,
  numeric,
} from "./data.js";
import * as svg from "./svg.js";

export interface RenderedFigure {
  svg: string;
  series: svg.Series[];
  cells?: svg.Cell[];
  chance?: number;
}

function lineFigure(
  series: svg.Series[],
  title: string,
  xLabel: string,
  chance: number | undefined,
  yMax: number,
): RenderedFigure {
  const xs = series.flatMap((s) => s.x);
  const area = svg.plotArea();
  const xScale = svg.linearScale(Math.min(...xs), Math.max(...xs), area.x0, area.x1);
  const yScale = svg.linearScale(0, yMax, area.y0, area.y1);
  const parts = [
    svg.axes(xScale, yScale, xLabel, "accuracy", title),
    svg.seriesPaths(series, xScale, yScale),
    svg.legend(series, chance === undefined ? [] : ["chance level"]),
  ];
  if (chance !== undefined) {
    parts.push(svg.chanceLine(chance, xScale, yScale));
  }
  return { svg: svg.document(parts.join("\n")), series, chance };
}

// -- learning_curve ---------------------------------------------------------

export function learningCurve(metrics: MetricsRow[], chance: number): RenderedFigure {
  const epochs = metrics.map((r) => r.epoch);
  const series: svg.Series[] = [
    { name: "train_class_acc", x: epochs, y: metrics.map((r) => r.train_class_acc) },
    { name: "test_class_acc", x: epochs, y: metrics.map((r) => r.test_class_acc) },
  ];
  if (metrics.some((r) => r.rnd_label_acc !== null)) {
    const rows = metrics.filter((r) => r.rnd_label_acc !== null);
    series.push({ name: "rnd_label_acc", x: rows.map((r) => r.epoch), y: rows.map((r) => r.rnd_label_acc as number) });
  }
  return lineFigure(series, "learning curves", "epoch", chance, 1);
}

// -- reg_sweep ---------------------------------------------------------------

function okRows(rows: SummaryRow[], path: string): SummaryRow[] {
  const good = rows.filter((r) => r.status === "ok");
  if (good.length === 0) {
    throw new PlotError(`summary file ${path} has no successful runs`);
  }
  return good;
}

export function regSweep(rows: SummaryRow[], path: string): RenderedFigure {
  const good = okRows(rows, path).slice();
  good.sort((a, b) => numeric(a, "value", path) - numeric(b, "value", path));
  const xs = good.map((r) => numeric(r, "value", path));
  const series: svg.Series[] = [
    { name: "final_test_acc", x: xs, y: good.map((r) => numeric(r, "final_test_acc", path)) },
    { name: "final_rnd_acc", x: xs, y: good.map((r) => numeric(r, "final_rnd_acc", path)) },
  ];
  const chance = 1 / numeric(good[0], "n_rnd", path);
  return lineFigure(series, `sweep over ${good[0].axis}`, good[0].axis, chance, 1);
}

// -- copy_depth ---------------------------------------------------------------

export function copyDepth(rows: SummaryRow[], path: string): RenderedFigure {
  const good = okRows(rows, path).filter((r) => r.axis === "copy_depth");
  if (good.length === 0) {
    throw new PlotError(`summary file ${path} has no copy_depth rows`);
  }
  good.sort((a, b) => numeric(a, "value", path) - numeric(b, "value", path));
  const xs = good.map((r) => numeric(r, "value", path));
  const series: svg.Series[] = [
    { name: "final_rnd_acc", x: xs, y: good.map((r) => numeric(r, "final_rnd_acc", path)) },
    { name: "final_test_acc", x: xs, y: good.map((r) => numeric(r, "final_test_acc", path)) },
  ];
  const chance = 1 / numeric(good[0], "n_rnd", path);
  return lineFigure(series, "memorization by copy depth", "copy depth (layers from output)", chance, 1);
}

// -- grid_heatmap --------------------------------------------------------------

export function gridHeatmap(rows: SummaryRow[], path: string, metric: "final_test_acc" | "final_rnd_acc" = "final_test_acc"): RenderedFigure {
  const good = okRows(rows, path);
  if (good.some((r) => r.axis2 === "")) {
    throw new PlotError(`summary file ${path} is not a two-axis grid (empty axis2)`);
  }
  const xsUnique = [...new Set(good.map((r) => numeric(r, "value", path)))].sort((a, b) => a - b);
  const ysUnique = [...new Set(good.map((r) => numeric(r, "value2", path)))].sort((a, b) => a - b);
  const cells: svg.Cell[] = good.map((r) => ({
    x: numeric(r, "value", path),
    y: numeric(r, "value2", path),
    value: numeric(r, metric, path),
  }));
  cells.sort((a, b) => a.x - b.x || a.y - b.y);

  const area = svg.plotArea();
  const cellW = (area.x1 - area.x0) / xsUnique.length;
  const cellH = (area.y0 - area.y1) / ysUnique.length;
  const values = cells.map((c) => c.value);
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const shade = (v: number) => {
    const t = hi === lo ? 0.5 : (v - lo) / (hi - lo);
    const channel = Math.round(235 - 160 * t);
    return `rgb(${channel},${Math.round(240 - 90 * (1 - t))},250)`;
  };

  const parts: string[] = [];
  for (const cell of cells) {
    const cx = area.x0 + xsUnique.indexOf(cell.x) * cellW;
    const cy = area.y0 - (ysUnique.indexOf(cell.y) + 1) * cellH;
    parts.push(
      `<rect x="${cx}" y="${cy}" width="${cellW}" height="${cellH}" fill="${shade(cell.value)}" stroke="#fff" ` +
        `data-x="${cell.x}" data-y="${cell.y}" data-value="${cell.value}"/>`,
    );
    parts.push(
      `<text x="${cx + cellW / 2}" y="${cy + cellH / 2 + 4}" text-anchor="middle" font-size="12">${cell.value}</text>`,
    );
  }
  xsUnique.forEach((x, i) => {
    parts.push(
      `<text x="${area.x0 + (i + 0.5) * cellW}" y="${area.y0 + 20}" text-anchor="middle" font-size="11">${x}</text>`,
    );
  });
  ysUnique.forEach((y, i) => {
    parts.push(
      `<text x="${area.x0 - 8}" y="${area.y0 - (i + 0.5) * cellH + 4}" text-anchor="end" font-size="11">${y}</text>`,
    );
  });
  const xLabel = good[0].axis;
  const yLabel = good[0].axis2;
  parts.push(
    `<text x="${(area.x0 + area.x1) / 2}" y="${svg.HEIGHT - 12}" text-anchor="middle" font-size="13">${svg.escapeXml(xLabel)}</text>`,
  );
  parts.push(
    `<text x="16" y="${(area.y0 + area.y1) / 2}" text-anchor="middle" font-size="13" transform="rotate(-90 16 ${(area.y0 + area.y1) / 2})">${svg.escapeXml(yLabel)}</text>`,
  );
  parts.push(
    `<text x="${(area.x0 + area.x1) / 2}" y="20" text-anchor="middle" font-size="14">${svg.escapeXml(`${metric} over ${xLabel} x ${yLabel}`)}</text>`,
  );
  return { svg: svg.document(parts.join("\n")), series: [], cells };
}
