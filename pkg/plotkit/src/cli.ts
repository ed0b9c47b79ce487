#!/usr/bin/env node
/**
 * plotkit CLI
 *
 * Usage:
 *   plotkit plot --figure learning_curve --in metrics.jsonl config.resolved.json --out fig.svg
 *   plotkit plot --figure reg_sweep     --in summary.csv --out fig.svg
 *   plotkit plot --figure copy_depth    --in summary.csv --out fig.svg
 *   plotkit plot --figure grid_heatmap  --in summary.csv --out fig.svg [--metric final_rnd_acc]
 *
 * The output file is only written when rendering succeeds.
 */

import { writeFileSync } from "node:fs";
import { PlotError, readChanceLevel, readMetrics, readSummary } from "./data.js";
import { RenderedFigure, copyDepth, gridHeatmap, learningCurve, regSweep } from "./figures.js";

export const FIGURES = ["learning_curve", "reg_sweep", "copy_depth", "grid_heatmap"] as const;
export type FigureId = (typeof FIGURES)[number];

export interface FigureSpec {
  figure: FigureId;
  inputs: string[];
  out: string;
  metric?: "final_test_acc" | "final_rnd_acc";
}

export function parseArgs(argv: string[]): FigureSpec {
  if (argv[0] !== "plot") {
    throw new PlotError(`unknown command ${JSON.stringify(argv[0])}; expected "plot"`);
  }
  let figure: string | undefined;
  let out: string | undefined;
  let metric: string | undefined;
  const inputs: string[] = [];
  for (let i = 1; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--figure") figure = argv[++i];
    else if (arg === "--out") out = argv[++i];
    else if (arg === "--metric") metric = argv[++i];
    else if (arg === "--in") {
      while (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
        inputs.push(argv[++i]);
      }
    } else {
      throw new PlotError(`unknown argument ${JSON.stringify(arg)}`);
    }
  }
  if (!figure || !(FIGURES as readonly string[]).includes(figure)) {
    throw new PlotError(`--figure must be one of ${FIGURES.join(", ")}`);
  }
  if (inputs.length === 0) throw new PlotError("--in needs at least one path");
  if (!out) throw new PlotError("--out is required");
  if (metric !== undefined && metric !== "final_test_acc" && metric !== "final_rnd_acc") {
    throw new PlotError(`--metric must be final_test_acc or final_rnd_acc`);
  }
  return { figure: figure as FigureId, inputs, out, metric: metric as FigureSpec["metric"] };
}

export function render(spec: FigureSpec): RenderedFigure {
  switch (spec.figure) {
    case "learning_curve": {
      if (spec.inputs.length !== 2) {
        throw new PlotError("learning_curve needs --in metrics.jsonl config.resolved.json");
      }
      const metrics = readMetrics(spec.inputs[0]);
      const chance = readChanceLevel(spec.inputs[1]);
      return learningCurve(metrics, chance);
    }
    case "reg_sweep":
      return regSweep(readSummary(spec.inputs[0]), spec.inputs[0]);
    case "copy_depth":
      return copyDepth(readSummary(spec.inputs[0]), spec.inputs[0]);
    case "grid_heatmap":
      return gridHeatmap(readSummary(spec.inputs[0]), spec.inputs[0], spec.metric);
  }
}

export function main(argv: string[]): number {
  let spec: FigureSpec;
  try {
    spec = parseArgs(argv);
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 2;
  }
  try {
    const figure = render(spec);
    writeFileSync(spec.out, figure.svg);
    console.log(`wrote ${spec.out}`);
    return 0;
  } catch (err) {
    if (err instanceof PlotError) {
      console.error(`plot error: ${err.message}`);
      return 1;
    }
    throw err;
  }
}

const invokedDirectly = process.argv[1] && import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
