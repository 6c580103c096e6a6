#!/usr/bin/env node
/**
 * plot <kind> <csv..> -o <img>
 *
 * Kinds: heatmap, freq_bar, grouped_bar, stacked_bar, cumulative_curve.
 * grouped_bar accepts several comparison CSVs (one bar group per file);
 * the other kinds take exactly one input. Output is SVG.
 *
 * Exit codes follow the simulator CLI: 0 success, 2 configuration error,
 * 3 data error, 4 internal invariant violation.
 */
import yargs from "yargs";

import { loadComparison, loadCurve, loadFrequency, loadHeatmap } from "./csv.js";
import {
  FIGURE_KINDS,
  FigureKind,
  FigureOptions,
  curveFigure,
  freqBarFigure,
  groupedBarFigure,
  heatmapFigure,
  stackedBarFigure,
} from "./figures.js";
import { ConfigError, exitCodeFor } from "./errors.js";
import { renderSvg, writeSvg } from "./render.js";

interface PlotArgs {
  kind: string;
  csv: string[];
  out: string;
  log: boolean;
  column: string;
  metric: string;
  title?: string;
  width: number;
  height: number;
}

export function buildFigure(kind: FigureKind, paths: string[], opts: FigureOptions) {
  if (kind !== "grouped_bar" && paths.length !== 1) {
    throw new ConfigError(`${kind} takes exactly one CSV, got ${paths.length}`);
  }
  switch (kind) {
    case "heatmap":
      return heatmapFigure(loadHeatmap(paths[0]!), opts);
    case "freq_bar":
      return freqBarFigure(loadFrequency(paths[0]!), opts);
    case "grouped_bar":
      return groupedBarFigure(paths.map(loadComparison), opts);
    case "stacked_bar":
      return stackedBarFigure(loadComparison(paths[0]!), opts);
    case "cumulative_curve":
      return curveFigure(loadCurve(paths[0]!), opts);
  }
}

function plot(args: PlotArgs): void {
  if (!(FIGURE_KINDS as readonly string[]).includes(args.kind)) {
    throw new ConfigError(
      `unknown figure kind ${args.kind!}; pick one of ${FIGURE_KINDS.join(", ")}`,
    );
  }
  if (args.column !== "count" && args.column !== "normalized") {
    throw new ConfigError(`--column must be count or normalized, got ${args.column}`);
  }
  const option = buildFigure(args.kind as FigureKind, args.csv, {
    title: args.title,
    logScale: args.log,
    column: args.column,
    metric: args.metric,
  });
  const svg = renderSvg(option, { width: args.width, height: args.height });
  writeSvg(args.out, svg);
  console.log(`wrote ${args.out}`);
}

export async function main(argv: string[]): Promise<number> {
  const parser = yargs(argv)
    .scriptName("plot")
    .command<PlotArgs>(
      "$0 <kind> <csv..>",
      "render a figure from simulator CSV exports",
      (y) =>
        y
          .positional("kind", { type: "string", demandOption: true })
          .positional("csv", { type: "string", array: true, demandOption: true })
          .option("out", { alias: "o", type: "string", demandOption: true })
          .option("log", { type: "boolean", default: false, describe: "log color scale (heatmap)" })
          .option("column", { type: "string", default: "count", describe: "freq_bar column" })
          .option("metric", {
            type: "string",
            default: "throughput_tokens_per_s",
            describe: "grouped_bar comparison column",
          })
          .option("title", { type: "string" })
          .option("width", { type: "number", default: 860 })
          .option("height", { type: "number", default: 640 }),
      (args) => plot(args),
    )
    .strict()
    .fail((msg, err) => {
      throw err ?? new ConfigError(msg);
    })
    .exitProcess(false);
  try {
    await parser.parseAsync();
    return 0;
  } catch (err) {
    const code = exitCodeFor(err);
    const tag = code === 2 ? "config error" : code === 3 ? "data error" : "internal error";
    console.error(`${tag}: ${err instanceof Error ? err.message : String(err)}`);
    return code;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].replace(/^.*\//, "/"));
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
