"""Routing statistics over traces: co-activation structure in space and time.

Three product types:

  Heatmap           E x E matrix; kind is "counts", "conditional_prob" or
                    "normalized_coactivation"
  FrequencyVector   per-expert activation counts plus mean-normalized values
  CumulativeCurve   descending share curve ("top m entries hold x of the mass")

Layer arguments are MoE layer positions, i.e. indexes into
ModelSpec.moe_layer_ids, not raw layer ids. Phase is "prefill", "decode" or
"both"; "both" also counts the single token pair that straddles the
prefill/decode boundary, phase-restricted passes never do.

All accumulation is one request at a time, so the passes compose with
streaming ingestion, and merging per-request counts is associative.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .errors import ConfigError
from .traces import ModelSpec, Phase, RequestTrace, TraceSet

__all__ = [
    "Heatmap",
    "FrequencyVector",
    "CumulativeCurve",
    "cross_layer_heatmap",
    "cross_token_heatmap",
    "expert_frequency",
    "coactivation_heatmap",
    "spearman_rho",
    "cumulative_top_fraction",
    "cumulative_curve",
    "stat_filename",
    "export_heatmap_csv",
    "export_frequency_csv",
    "export_curve_csv",
    "export_json",
]

PHASES = ("prefill", "decode", "both")


@dataclass(frozen=True, eq=False)
class Heatmap:
    values: np.ndarray
    kind: str  # counts | conditional_prob | normalized_coactivation
    stat: str = ""
    layer: int | None = None
    phase: str = "both"
    row_support: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ConfigError(f"heatmap values must be square, got shape {v.shape}")

    @property
    def num_experts(self) -> int:
        return self.values.shape[0]

    def to_dict(self) -> dict:
        return {
            "type": "heatmap",
            "kind": self.kind,
            "stat": self.stat,
            "layer": self.layer,
            "phase": self.phase,
            "values": self.values.tolist(),
        }


@dataclass(frozen=True, eq=False)
class FrequencyVector:
    counts: np.ndarray
    normalized: np.ndarray  # counts / mean(counts); averages to 1.0
    layer: int | None = None
    phase: str = "both"

    def to_dict(self) -> dict:
        return {
            "type": "frequency",
            "layer": self.layer,
            "phase": self.phase,
            "counts": self.counts.tolist(),
            "normalized": self.normalized.tolist(),
        }


@dataclass(frozen=True, eq=False)
class CumulativeCurve:
    shares: np.ndarray      # individual shares, sorted descending, sum 1.0
    cumulative: np.ndarray  # running sum; monotone, ends at 1.0

    def to_dict(self) -> dict:
        return {
            "type": "cumulative_curve",
            "shares": self.shares.tolist(),
            "cumulative": self.cumulative.tolist(),
        }


ArrayLike = Union[Heatmap, FrequencyVector, np.ndarray]


def _values_of(x: ArrayLike) -> np.ndarray:
    if isinstance(x, Heatmap):
        return x.values
    if isinstance(x, FrequencyVector):
        return x.counts
    return np.asarray(x)


def _check_phase(phase: str) -> str:
    if phase not in PHASES:
        raise ConfigError(f"phase must be one of {PHASES}, got {phase!r}")
    return phase


def _sel_array(req: RequestTrace, spec: ModelSpec) -> np.ndarray:
    """(tokens, moe_layers, top_k) int64 view of one request's selections."""
    if not req.tokens:
        return np.empty((0, spec.num_moe_layers, spec.top_k), dtype=np.int64)
    return np.asarray([tok.selections for tok in req.tokens], dtype=np.int64)


def _phase_slice(req: RequestTrace) -> tuple[int, int]:
    """(prefill_count, total) for a request; prefill tokens come first."""
    p = sum(1 for t in req.tokens if t.phase is Phase.PREFILL)
    return p, len(req.tokens)


def _token_rows(req: RequestTrace, phase: str) -> np.ndarray:
    p, t = _phase_slice(req)
    if phase == "prefill":
        return np.arange(0, p)
    if phase == "decode":
        return np.arange(p, t)
    return np.arange(0, t)


def _pair_starts(req: RequestTrace, phase: str) -> np.ndarray:
    """Indices t such that (t, t+1) is an in-scope adjacent token pair."""
    p, t = _phase_slice(req)
    if phase == "prefill":
        return np.arange(0, max(p - 1, 0))
    if phase == "decode":
        return np.arange(p, max(t - 1, p))
    return np.arange(0, max(t - 1, 0))


def _finish_conditional(
    counts: np.ndarray,
    support: np.ndarray,
    top_k: int,
    kind: str,
    normalize_by_top_k: bool,
    stat: str,
    layer: int,
    phase: str,
) -> Heatmap:
    if kind == "counts":
        return Heatmap(counts, "counts", stat=stat, layer=layer, phase=phase, row_support=support)
    if kind != "conditional_prob":
        raise ConfigError(f"kind must be 'counts' or 'conditional_prob', got {kind!r}")
    probs = np.zeros_like(counts, dtype=np.float64)
    rows = support > 0
    probs[rows] = counts[rows] / support[rows, None]
    if normalize_by_top_k:
        probs /= top_k
    return Heatmap(probs, "conditional_prob", stat=stat, layer=layer, phase=phase, row_support=support)


def cross_layer_heatmap(
    ts: TraceSet,
    from_layer: int,
    phase: str = "both",
    kind: str = "conditional_prob",
    normalize_by_top_k: bool = False,
) -> Heatmap:
    """P(expert j active at the next MoE layer | expert i active at from_layer).

    from_layer indexes moe_layer_ids and must not be the last entry. With the
    default normalization each supported row sums to top_k (each conditioning
    activation co-occurs with top_k successors); normalize_by_top_k rescales
    rows to sum to 1.
    """
    _check_phase(phase)
    spec = ts.model
    if not (0 <= from_layer < spec.num_moe_layers - 1):
        raise ConfigError(
            f"from_layer must be in [0, {spec.num_moe_layers - 1}) so a successor exists, "
            f"got {from_layer}"
        )
    E = spec.num_experts
    counts = np.zeros((E, E), dtype=np.int64)
    support = np.zeros(E, dtype=np.int64)
    for req in ts:
        rows = _token_rows(req, phase)
        if rows.size == 0:
            continue
        arr = _sel_array(req, spec)
        a = arr[rows, from_layer]       # (T, k)
        b = arr[rows, from_layer + 1]   # (T, k)
        np.add.at(counts, (a[:, :, None], b[:, None, :]), 1)
        support += np.bincount(a.ravel(), minlength=E)
    return _finish_conditional(
        counts, support, spec.top_k, kind, normalize_by_top_k, "cross_layer", from_layer, phase
    )


def cross_token_heatmap(
    ts: TraceSet,
    layer: int,
    phase: str = "both",
    kind: str = "conditional_prob",
    normalize_by_top_k: bool = False,
) -> Heatmap:
    """P(expert j active for the next token | expert i active now), same layer.

    Token pairs never cross request boundaries; with phase "prefill" or
    "decode" they never straddle the phase boundary either.
    """
    _check_phase(phase)
    spec = ts.model
    if not (0 <= layer < spec.num_moe_layers):
        raise ConfigError(f"layer must be in [0, {spec.num_moe_layers}), got {layer}")
    E = spec.num_experts
    counts = np.zeros((E, E), dtype=np.int64)
    support = np.zeros(E, dtype=np.int64)
    for req in ts:
        starts = _pair_starts(req, phase)
        if starts.size == 0:
            continue
        arr = _sel_array(req, spec)
        a = arr[starts, layer]
        b = arr[starts + 1, layer]
        np.add.at(counts, (a[:, :, None], b[:, None, :]), 1)
        support += np.bincount(a.ravel(), minlength=E)
    return _finish_conditional(
        counts, support, spec.top_k, kind, normalize_by_top_k, "cross_token", layer, phase
    )


def expert_frequency(ts: TraceSet, layer: int, phase: str = "both") -> FrequencyVector:
    """Activation counts per expert at one MoE layer, plus mean-normalized form."""
    _check_phase(phase)
    spec = ts.model
    if not (0 <= layer < spec.num_moe_layers):
        raise ConfigError(f"layer must be in [0, {spec.num_moe_layers}), got {layer}")
    E = spec.num_experts
    counts = np.zeros(E, dtype=np.int64)
    for req in ts:
        rows = _token_rows(req, phase)
        if rows.size == 0:
            continue
        arr = _sel_array(req, spec)
        counts += np.bincount(arr[rows, layer].ravel(), minlength=E)
    mean = counts.mean()
    normalized = counts / mean if mean > 0 else np.zeros(E, dtype=np.float64)
    return FrequencyVector(counts=counts, normalized=normalized, layer=layer, phase=phase)


def coactivation_heatmap(
    ts: TraceSet,
    layer: int,
    phase: str = "both",
    normalizer: str = "pair_uniform",
) -> Heatmap:
    """How much more often experts i and j fire together than uniform chance.

    value[i][j] = (co-occurrence count / tokens) / p with
    p = 2 / (E * (E - 1)) for the default "pair_uniform" normalizer, or the
    exact uniform-subset pair probability top_k*(top_k-1) / (E*(E-1)) for
    normalizer="subset_exact". Symmetric with a zero diagonal. 1.0 means
    "as often as uniform routing would".
    """
    _check_phase(phase)
    spec = ts.model
    if spec.top_k < 2:
        raise ConfigError(f"coactivation needs top_k >= 2, got top_k={spec.top_k}")
    if not (0 <= layer < spec.num_moe_layers):
        raise ConfigError(f"layer must be in [0, {spec.num_moe_layers}), got {layer}")
    E = spec.num_experts
    counts = np.zeros((E, E), dtype=np.int64)
    n_tokens = 0
    pair_slots = list(combinations(range(spec.top_k), 2))
    for req in ts:
        rows = _token_rows(req, phase)
        if rows.size == 0:
            continue
        arr = _sel_array(req, spec)[rows, layer]  # (T, k), each row sorted, distinct
        n_tokens += arr.shape[0]
        for ci, cj in pair_slots:
            np.add.at(counts, (arr[:, ci], arr[:, cj]), 1)
    if normalizer == "pair_uniform":
        p = 2.0 / (E * (E - 1))
    elif normalizer == "subset_exact":
        p = spec.top_k * (spec.top_k - 1) / (E * (E - 1))
    else:
        raise ConfigError(f"normalizer must be 'pair_uniform' or 'subset_exact', got {normalizer!r}")
    sym = counts + counts.T
    values = (sym / n_tokens) / p if n_tokens else np.zeros((E, E), dtype=np.float64)
    return Heatmap(values, "normalized_coactivation", stat="coactivation", layer=layer, phase=phase)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    boundary = np.r_[True, sx[1:] != sx[:-1]]
    group = np.cumsum(boundary) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    ranks = np.empty(x.shape, dtype=np.float64)
    ranks[order] = avg[group]
    return ranks


def spearman_rho(a: ArrayLike, b: ArrayLike) -> float | None:
    """Spearman rank correlation of two equally-shaped value sets.

    Flattens inputs, ranks with tie-averaging, then takes the Pearson
    correlation of the ranks. Returns None (not NaN) when either input has
    zero rank variance, i.e. the correlation is undefined.
    """
    av = _values_of(a).ravel().astype(np.float64)
    bv = _values_of(b).ravel().astype(np.float64)
    if av.shape != bv.shape:
        raise ConfigError(f"inputs must have equal size, got {av.size} vs {bv.size}")
    if av.size < 2:
        return None
    ra = _average_ranks(av)
    rb = _average_ranks(bv)
    da = ra - ra.mean()
    db = rb - rb.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    return float(da @ db) / denom


def cumulative_top_fraction(values: ArrayLike, fraction: float) -> float:
    """Share of total mass held by the top ceil(fraction * N) entries.

    For a heatmap, N is all E*E entries; for a vector, all E entries.
    """
    v = _values_of(values).ravel().astype(np.float64)
    if not (0.0 < fraction <= 1.0):
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    total = v.sum()
    if v.size == 0 or total <= 0:
        raise ConfigError("cumulative_top_fraction needs a non-empty input with positive total")
    m = math.ceil(fraction * v.size)
    top = np.sort(v)[::-1][:m]
    return float(top.sum() / total)


def cumulative_curve(values: ArrayLike) -> CumulativeCurve:
    """Full descending share curve for a count matrix or vector."""
    v = _values_of(values).ravel().astype(np.float64)
    total = v.sum()
    if v.size == 0 or total <= 0:
        raise ConfigError("cumulative_curve needs a non-empty input with positive total")
    shares = np.sort(v)[::-1] / total
    return CumulativeCurve(shares=shares, cumulative=np.cumsum(shares))


# --- export ---------------------------------------------------------------
#
# CSV files open with '#'-prefixed header lines (key=value metadata), then
# plain rows. Heatmaps are row-major numeric matrices; vectors and curves are
# column-labelled tables. Downstream plotting reads exactly these shapes.


def stat_filename(model_name: str, stat: str, layer: int | None, phase: str) -> str:
    layer_part = "all" if layer is None else str(layer)
    return f"{model_name}_{stat}_{layer_part}_{phase}.csv"


def _write_header(fh, meta: dict) -> None:
    for key, val in meta.items():
        fh.write(f"# {key}={val}\n")


def export_heatmap_csv(hm: Heatmap, path: str | Path, extra_meta: dict | None = None) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as fh:
        meta = {"type": "heatmap", "kind": hm.kind, "stat": hm.stat,
                "layer": hm.layer, "phase": hm.phase, "experts": hm.num_experts}
        meta.update(extra_meta or {})
        _write_header(fh, meta)
        w = csv.writer(fh)
        for row in hm.values:
            w.writerow([_fmt(x) for x in row])


def export_frequency_csv(fv: FrequencyVector, path: str | Path, extra_meta: dict | None = None) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as fh:
        meta = {"type": "frequency", "layer": fv.layer, "phase": fv.phase}
        meta.update(extra_meta or {})
        _write_header(fh, meta)
        w = csv.writer(fh)
        w.writerow(["expert", "count", "normalized"])
        for e, (c, nz) in enumerate(zip(fv.counts, fv.normalized)):
            w.writerow([e, int(c), _fmt(nz)])


def export_curve_csv(curve: CumulativeCurve, path: str | Path, extra_meta: dict | None = None) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as fh:
        meta = {"type": "cumulative_curve"}
        meta.update(extra_meta or {})
        _write_header(fh, meta)
        w = csv.writer(fh)
        w.writerow(["rank", "share", "cumulative_fraction"])
        for i, (s, c) in enumerate(zip(curve.shares, curve.cumulative), start=1):
            w.writerow([i, _fmt(s), _fmt(c)])


def export_json(obj: Heatmap | FrequencyVector | CumulativeCurve, path: str | Path,
                extra_meta: dict | None = None) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    d = obj.to_dict()
    if extra_meta:
        d["meta"] = extra_meta
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(d, fh, sort_keys=True)
        fh.write("\n")


def _fmt(x) -> str:
    """Stable numeric formatting: integral values print as ints."""
    xf = float(x)
    if xf.is_integer():
        return str(int(xf))
    return repr(xf)
