/** Server-side SVG rendering; no DOM, deterministic for fixed inputs. */
import { mkdirSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";
import * as echarts from "echarts";
import type { EChartsOption } from "echarts";

export interface RenderSettings {
  width?: number;
  height?: number;
}

export function renderSvg(option: EChartsOption, settings: RenderSettings = {}): string {
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width: settings.width ?? 860,
    height: settings.height ?? 640,
  });
  try {
    // animations would bake a transient frame into the SVG
    chart.setOption({ animation: false, ...option });
    return chart.renderToSVGString();
  } finally {
    chart.dispose();
  }
}

export function writeSvg(path: string, svg: string): void {
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, svg, "utf-8");
}
