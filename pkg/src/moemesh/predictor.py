"""Cross-token expert prediction and duplicate admission control.

A per-layer E x E transition count matrix is maintained online: entry (i, j)
counts how often expert j was selected for the token right after a token that
selected expert i. Given the experts a die just computed, the predictor reads
those rows and nominates the top_n likeliest successors per row. An expert is
duplicated onto a die only when it was both predicted and actually fetched
remotely this kernel; its bytes are already crossing the fabric, so admission
costs one local DRAM write and no extra link traffic.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError
from .placement import DuplicationState, ExpertDistributionTable, admit_duplicate
from .traces import TraceSet

__all__ = [
    "PredictorConfig",
    "OnlineHeatmapState",
    "PredictionTable",
    "DupDecisions",
    "observe_transition",
    "predict_next",
    "duplication_decisions",
    "seed_from_prefill",
]

log = logging.getLogger(__name__)

MODES = ("online", "prefill_seeded")

# per-die sets of (layer, expert) pairs
DieExpertSets = Mapping[int, Iterable[tuple[int, int]]]


@dataclass(frozen=True)
class PredictorConfig:
    top_n: int = 2
    mode: str = "online"
    decay: float = 1.0  # 1.0 keeps exact integer counts; <1 forgets old traffic

    def __post_init__(self) -> None:
        if self.top_n < 1:
            raise ConfigError(f"top_n must be >= 1, got {self.top_n}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (0.0 < self.decay <= 1.0):
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")


@dataclass
class OnlineHeatmapState:
    """Per-layer cross-token transition counts, float to allow decay."""

    counts: np.ndarray  # (moe_layers, E, E)

    @classmethod
    def zeros(cls, num_moe_layers: int, num_experts: int) -> "OnlineHeatmapState":
        return cls(np.zeros((num_moe_layers, num_experts, num_experts), dtype=np.float64))


@dataclass
class PredictionTable:
    """Per-die bookkeeping bits: cp_en marks experts predicted for the next
    token; is_local mirrors duplicate residency."""

    cp_en: np.ndarray    # (dies, moe_layers, E) bool
    is_local: np.ndarray

    @classmethod
    def zeros(cls, num_dies: int, num_moe_layers: int, num_experts: int) -> "PredictionTable":
        shape = (num_dies, num_moe_layers, num_experts)
        return cls(np.zeros(shape, dtype=bool), np.zeros(shape, dtype=bool))


def observe_transition(
    hm: OnlineHeatmapState,
    layer: int,
    prev_selection: Iterable[int],
    cur_selection: Iterable[int],
    cfg: PredictorConfig,
) -> None:
    """Fold one adjacent-token transition into the layer's counts.

    The layer's matrix is first scaled by decay, then every (i in prev,
    j in cur) pair gains 1. Empty selections still decay.
    """
    m = hm.counts[layer]
    if cfg.decay < 1.0:
        m *= cfg.decay
    prev = np.fromiter(prev_selection, dtype=np.int64)
    cur = np.fromiter(cur_selection, dtype=np.int64)
    if prev.size and cur.size:
        m[np.ix_(prev, cur)] += 1.0


def _row_top(hm: OnlineHeatmapState, layer: int, expert: int, top_n: int) -> np.ndarray:
    """Indices of the top_n nonzero row entries, ties to the lower expert id."""
    row = hm.counts[layer, expert]
    nz = np.flatnonzero(row > 0)
    if nz.size == 0:
        return nz
    order = np.lexsort((nz, -row[nz]))
    return nz[order[:top_n]]


def predict_next(
    active: DieExpertSets,
    hm: OnlineHeatmapState,
    cfg: PredictorConfig,
) -> dict[int, set[tuple[int, int]]]:
    """For each die, the union over its active experts of the top_n likeliest
    next-token experts at the same layer. Rows with no observations contribute
    nothing, so a cold-started predictor predicts nothing."""
    out: dict[int, set[tuple[int, int]]] = {}
    for die in sorted(active):
        preds: set[tuple[int, int]] = set()
        for layer, expert in sorted(active[die]):
            for j in _row_top(hm, layer, expert, cfg.top_n):
                preds.add((layer, int(j)))
        out[die] = preds
    return out


@dataclass(frozen=True)
class DupDecisions:
    admitted: dict[int, tuple[tuple[int, int], ...]]  # die -> ((layer, expert), ...)
    predictions: int
    evictions: int


def duplication_decisions(
    predicted: Mapping[int, set[tuple[int, int]]],
    remote_reads: Mapping[int, set[tuple[int, int]]],
    pt: PredictionTable,
    state: DuplicationState,
    table: ExpertDistributionTable,
    now: int,
    layer: int | None = None,
) -> DupDecisions:
    """Admit, per die, exactly the predicted experts that were fetched remotely
    this kernel and are not already resident. Updates cp_en for predictions and
    keeps is_local in step with residency (including evictions). When a layer
    is given, that layer's stale cp_en bits are cleared even for dies that got
    no predictions this round."""
    admitted: dict[int, tuple[tuple[int, int], ...]] = {}
    n_pred = 0
    n_evict = 0
    for die in sorted(predicted):
        preds = predicted[die]
        n_pred += len(preds)
        stale = {l for l, _ in preds} if layer is None else {layer}
        for l in stale:
            pt.cp_en[die, l, :] = False
        for l, expert in preds:
            pt.cp_en[die, l, expert] = True
        adm: list[tuple[int, int]] = []
        remote = remote_reads.get(die, set())
        for pl, expert in sorted(preds):
            if (pl, expert) not in remote:
                continue
            if table.homes[pl, expert, die] or state.is_resident(die, pl, expert):
                continue
            rep = admit_duplicate(state, table, die, pl, expert, now)
            if not rep.admitted:
                continue
            adm.append((pl, expert))
            pt.is_local[die, pl, expert] = True
            for vl, ve in rep.evicted:
                pt.is_local[die, vl, ve] = False
                n_evict += 1
        admitted[die] = tuple(adm)
    return DupDecisions(admitted=admitted, predictions=n_pred, evictions=n_evict)


def seed_from_prefill(ts: TraceSet, cfg: PredictorConfig) -> OnlineHeatmapState:
    """Warm-start the transition counts from the trace's prefill tokens.

    Replays every adjacent prefill token pair of every request through
    observe_transition; with decay=1 the result equals the prefill-only
    cross-token count heatmap. A trace without prefill tokens yields an empty
    state and a warning.
    """
    spec = ts.model
    hm = OnlineHeatmapState.zeros(spec.num_moe_layers, spec.num_experts)
    saw_prefill = False
    for req in ts:
        pf = req.prefill
        if pf:
            saw_prefill = True
        for t in range(len(pf) - 1):
            for layer in range(spec.num_moe_layers):
                observe_transition(
                    hm, layer, pf[t].selections[layer], pf[t + 1].selections[layer], cfg
                )
    if not saw_prefill:
        log.warning("seed_from_prefill: trace has no prefill tokens; predictor starts cold")
    return hm
