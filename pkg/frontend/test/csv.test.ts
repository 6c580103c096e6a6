import { describe, expect, it } from "vitest";

import {
  loadComparison,
  loadCurve,
  loadFrequency,
  loadHeatmap,
  readTable,
} from "../src/csv.js";
import { DataError } from "../src/errors.js";
import { fixture, rawRows } from "./helpers.js";

describe("readTable", () => {
  it("splits # header lines from the body", () => {
    const t = readTable(fixture("fix_frequency_0_both.csv"));
    expect(t.meta.type).toBe("frequency");
    expect(t.meta.seed).toBe("5");
    expect(t.meta.config).toContain('"batch_size": 8');
    expect(t.rows[0]).toEqual(["expert", "count", "normalized"]);
  });

  it("missing file is a data error", () => {
    expect(() => readTable(fixture("nope.csv"))).toThrow(DataError);
  });
});

describe("loadHeatmap", () => {
  it("reads the full matrix", () => {
    const hm = loadHeatmap(fixture("fix_cross_layer_0_both.csv"));
    expect(hm.values).toHaveLength(8);
    const raw = rawRows("fix_cross_layer_0_both.csv");
    expect(hm.values).toEqual(raw.map((r) => r.map(Number)));
    expect(hm.meta.kind).toBe("conditional_prob");
  });

  it("rejects non-numeric bodies", () => {
    expect(() => loadHeatmap(fixture("fix_frequency_0_both.csv"))).toThrow(DataError);
  });
});

describe("loadFrequency", () => {
  it("maps the named columns", () => {
    const fv = loadFrequency(fixture("fix_frequency_0_both.csv"));
    expect(fv.experts).toEqual([0, 1, 2, 3, 4, 5, 6, 7]);
    expect(fv.counts.reduce((a, b) => a + b, 0)).toBe(
      rawRows("fix_frequency_0_both.csv")
        .slice(1)
        .reduce((a, r) => a + Number(r[1]), 0),
    );
  });

  it("names the missing columns on schema mismatch", () => {
    expect(() => loadFrequency(fixture("comparison_batch8.csv"))).toThrow(
      /missing column\(s\) expert, count, normalized/,
    );
  });
});

describe("loadCurve", () => {
  it("keeps ranks aligned with fractions", () => {
    const c = loadCurve(fixture("fix_cumulative_0_both.csv"));
    expect(c.ranks).toEqual([...Array(8).keys()].map((i) => i + 1));
    expect(c.cumulative.at(-1)).toBeCloseTo(1.0, 12);
  });
});

describe("loadComparison", () => {
  it("labels groups by the embedded batch size", () => {
    expect(loadComparison(fixture("comparison_batch8.csv")).label).toBe("batch=8");
    expect(loadComparison(fixture("comparison_batch16.csv")).label).toBe("batch=16");
  });

  it("keeps one row per strategy with numeric metrics", () => {
    const cmp = loadComparison(fixture("comparison_batch8.csv"));
    expect(cmp.rows.map((r) => r.strategy)).toEqual([
      "base",
      "allo_only",
      "pred_only",
      "allo_pred",
    ]);
    for (const row of cmp.rows) {
      expect(row.metrics.total_hops).toBeGreaterThan(0);
    }
  });

  it("schema mismatch is a data error naming the columns", () => {
    expect(() => loadComparison(fixture("fix_frequency_0_both.csv"))).toThrow(
      /missing column\(s\) .*throughput_tokens_per_s/,
    );
  });
});
