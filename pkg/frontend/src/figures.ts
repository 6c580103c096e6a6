/**
 * Figure builders: loaded CSV data in, echarts option out.
 *
 * The builders are pure and keep the plotted values identical to the CSV
 * values; anything cosmetic (color mapping, log scaling) happens in extra
 * dimensions or axis settings, never by transforming the data itself.
 */
import type { EChartsOption } from "echarts";

import {
  ComparisonData,
  CurveData,
  FrequencyData,
  HeatmapData,
} from "./csv.js";
import { ConfigError, InvariantError } from "./errors.js";

export const FIGURE_KINDS = [
  "heatmap",
  "freq_bar",
  "grouped_bar",
  "stacked_bar",
  "cumulative_curve",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureOptions {
  title?: string;
  /** heatmap: map color on log10(value), data values stay raw */
  logScale?: boolean;
  /** freq_bar: which column to draw */
  column?: "count" | "normalized";
  /** grouped_bar: comparison column to normalize against base */
  metric?: string;
}

const STRATEGY_ORDER = ["base", "allo_only", "pred_only", "allo_pred"];

function strategyRank(name: string): number {
  const i = STRATEGY_ORDER.indexOf(name);
  return i === -1 ? STRATEGY_ORDER.length : i;
}

export function heatmapFigure(data: HeatmapData, opts: FigureOptions = {}): EChartsOption {
  const n = data.values.length;
  const flat = data.values.flat();
  const max = Math.max(...flat, 0);
  // color on dimension 3 when log-scaled; dimension 2 is always the raw value
  const positives = flat.filter((v) => v > 0);
  const floor = positives.length > 0 ? Math.min(...positives) : 1;
  const points = data.values.flatMap((row, i) =>
    row.map((v, j) =>
      opts.logScale ? [j, i, v, Math.log10(Math.max(v, floor))] : [j, i, v],
    ),
  );
  const labels = [...Array(n).keys()].map(String);
  return {
    title: { text: opts.title ?? data.meta.stat ?? "heatmap" },
    tooltip: {},
    xAxis: { type: "category", data: labels, name: "expert" },
    yAxis: { type: "category", data: labels, name: "expert", inverse: true },
    visualMap: {
      type: "continuous",
      dimension: opts.logScale ? 3 : 2,
      min: opts.logScale ? Math.log10(floor) : 0,
      max: opts.logScale ? Math.log10(Math.max(max, floor)) : max,
      calculable: true,
      orient: "vertical",
      right: 0,
      top: "center",
    },
    series: [{ type: "heatmap", data: points }],
  };
}

export function freqBarFigure(data: FrequencyData, opts: FigureOptions = {}): EChartsOption {
  const column = opts.column ?? "count";
  const values = column === "normalized" ? data.normalized : data.counts;
  return {
    title: { text: opts.title ?? `expert ${column}` },
    tooltip: {},
    xAxis: { type: "category", data: data.experts.map(String), name: "expert" },
    yAxis: { type: "value", name: column },
    series: [{ type: "bar", data: [...values] }],
  };
}

/**
 * One bar group per comparison file, one series per strategy, every value
 * divided by the group's base so base always plots at 1.0.
 */
export function groupedBarFigure(
  groups: ComparisonData[],
  opts: FigureOptions = {},
): EChartsOption {
  const metric = opts.metric ?? "throughput_tokens_per_s";
  const strategies = [
    ...new Set(groups.flatMap((g) => g.rows.map((r) => r.strategy))),
  ].sort((a, b) => strategyRank(a) - strategyRank(b) || a.localeCompare(b));

  const normalized = groups.map((g) => {
    const base = g.rows.find((r) => r.strategy === "base");
    if (!base) throw new ConfigError(`${g.label}: no base row to normalize against`);
    const denom = base.metrics[metric];
    if (denom === undefined) throw new ConfigError(`${g.label}: no column ${metric}`);
    if (denom === 0) throw new InvariantError(`${g.label}: base ${metric} is zero`);
    const byStrategy = new Map(g.rows.map((r) => [r.strategy, r.metrics[metric]]));
    return (s: string) => {
      const v = byStrategy.get(s);
      return v === undefined ? null : v / denom;
    };
  });

  return {
    title: { text: opts.title ?? `${metric} vs base` },
    tooltip: {},
    legend: { data: strategies, top: "bottom" },
    xAxis: { type: "category", data: groups.map((g) => g.label) },
    yAxis: { type: "value", name: `${metric} / base` },
    series: strategies.map((s) => ({
      type: "bar",
      name: s,
      data: normalized.map((lookup) => lookup(s)),
    })),
  };
}

const DRAM_SEGMENTS = [
  ["dram_local_read_bytes", "local read"],
  ["dram_remote_read_bytes", "remote read"],
  ["dram_local_write_bytes", "local write"],
] as const;

/** DRAM traffic per strategy, one stacked bar each; segments are raw bytes. */
export function stackedBarFigure(data: ComparisonData, opts: FigureOptions = {}): EChartsOption {
  const rows = [...data.rows].sort(
    (a, b) => strategyRank(a.strategy) - strategyRank(b.strategy),
  );
  return {
    title: { text: opts.title ?? "DRAM traffic breakdown" },
    tooltip: {},
    legend: { data: DRAM_SEGMENTS.map(([, label]) => label), top: "bottom" },
    xAxis: { type: "category", data: rows.map((r) => r.strategy) },
    yAxis: { type: "value", name: "bytes" },
    series: DRAM_SEGMENTS.map(([column, label]) => ({
      type: "bar",
      name: label,
      stack: "dram",
      data: rows.map((r) => {
        const v = r.metrics[column];
        if (v === undefined) {
          throw new InvariantError(`${data.label}: row ${r.strategy} lost ${column}`);
        }
        return v;
      }),
    })),
  };
}

export function curveFigure(data: CurveData, opts: FigureOptions = {}): EChartsOption {
  return {
    title: { text: opts.title ?? "cumulative activation share" },
    tooltip: {},
    xAxis: { type: "value", name: "expert rank" },
    yAxis: { type: "value", name: "cumulative fraction", max: 1 },
    series: [
      {
        type: "line",
        data: data.ranks.map((r, i) => [r, data.cumulative[i]!]),
        showSymbol: false,
      },
    ],
  };
}
