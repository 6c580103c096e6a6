export {
  loadComparison,
  loadCurve,
  loadFrequency,
  loadHeatmap,
  readTable,
} from "./csv.js";
export type { ComparisonData, CurveData, FrequencyData, HeatmapData } from "./csv.js";
export {
  FIGURE_KINDS,
  curveFigure,
  freqBarFigure,
  groupedBarFigure,
  heatmapFigure,
  stackedBarFigure,
} from "./figures.js";
export type { FigureKind, FigureOptions } from "./figures.js";
export { renderSvg, writeSvg } from "./render.js";
export { ConfigError, DataError, InvariantError, exitCodeFor } from "./errors.js";
