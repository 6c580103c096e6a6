"""Decode-phase kernel simulation over a die mesh.

Each decode step runs one kernel per MoE layer. A kernel takes the batch's
expert selections, turns them into an allocation plan under the configured
strategy, and charges time to dies and directed links:

  die busy   = sum over its entries of compute time + weight DRAM-read time,
               plus local write time for duplicates admitted this kernel
  link busy  = routed bytes / d2d_bw (weight fetches from the nearest holder,
               activation dispatch and combine between token homes and
               compute dies, X-then-Y routes)
  makespan   = max over all dies and links

Hop counting is per discrete transfer event times its Manhattan distance: one
event per remote weight slice, and one per req_blk-token activation block per
(source die, target die) pair per direction. Duplicate admissions ride on the
remote fetch already in flight, so they add DRAM write time and bytes only.

Strategies: "base" (placement-ignorant allocation, no prediction),
"allo_only", "pred_only", "allo_pred".
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .allocator import (
    AllocationPlan,
    CostParams,
    allocate,
    baseline_allocate,
)
from .errors import ConfigError, InvariantError
from .mesh import MeshTopology
from .placement import (
    DuplicationState,
    ExpertDistributionTable,
    initial_round_robin,
    touch_duplicate,
)
from .predictor import (
    OnlineHeatmapState,
    PredictionTable,
    PredictorConfig,
    duplication_decisions,
    observe_transition,
    predict_next,
    seed_from_prefill,
)
from .traces import ModelSpec, TraceSet

__all__ = [
    "STRATEGIES",
    "SimConfig",
    "KernelResult",
    "RunReport",
    "ComparisonRow",
    "kernel_requests",
    "simulate_kernel",
    "run",
    "compare",
    "export_report_json",
    "export_kernels_csv",
    "export_comparison_csv",
]

STRATEGIES = ("base", "allo_only", "pred_only", "allo_pred")


@dataclass(frozen=True)
class SimConfig:
    topo: MeshTopology
    model: ModelSpec
    strategy: str
    batch_size: int
    cost: CostParams = field(default_factory=CostParams)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1 when given, got {self.max_steps}")

    @property
    def uses_allocator(self) -> bool:
        return self.strategy in ("allo_only", "allo_pred")

    @property
    def uses_predictor(self) -> bool:
        return self.strategy in ("pred_only", "allo_pred")

    def to_dict(self) -> dict:
        return {
            "topology": {
                "x_dies": self.topo.x_dies,
                "y_dies": self.topo.y_dies,
                "die": {
                    "compute_flops": self.topo.die.compute_flops,
                    "dram_bw": self.topo.die.dram_bw,
                    "dram_capacity": self.topo.die.dram_capacity,
                    "d2d_bw": self.topo.die.d2d_bw,
                    "reserved_cache_fraction": self.topo.die.reserved_cache_fraction,
                },
            },
            "model": self.model.to_dict(),
            "strategy": self.strategy,
            "batch_size": self.batch_size,
            "cost": {
                "req_blk": self.cost.req_blk,
                "candidate_dis": self.cost.candidate_dis,
                "split_divisor": self.cost.effective_split_divisor,
                "w_compute": self.cost.w_compute,
                "w_weights": self.cost.w_weights,
                "w_activations": self.cost.w_activations,
            },
            "predictor": {
                "top_n": self.predictor.top_n,
                "mode": self.predictor.mode,
                "decay": self.predictor.decay,
            },
            "seed": self.seed,
            "max_steps": self.max_steps,
        }


@dataclass(frozen=True)
class KernelResult:
    step: int
    layer: int
    makespan_s: float
    hop_count: int
    dram_local_read_bytes: int
    dram_remote_read_bytes: int
    dram_local_write_bytes: int
    total_entries: int = 0
    remote_entries: int = 0
    dup_hit_entries: int = 0


@dataclass(frozen=True)
class PredictorStats:
    predictions: int = 0
    admissions: int = 0
    evictions: int = 0
    dup_hit_entries: int = 0
    remote_entries: int = 0

    @property
    def hit_rate(self) -> float | None:
        denom = self.dup_hit_entries + self.remote_entries
        return self.dup_hit_entries / denom if denom else None


@dataclass(frozen=True)
class RunReport:
    strategy: str
    config: dict
    kernels: tuple[KernelResult, ...]
    total_generated_tokens: int
    total_makespan_s: float
    throughput_tokens_per_s: float
    total_hops: int
    dram_local_read_bytes: int
    dram_remote_read_bytes: int
    dram_local_write_bytes: int
    predictor_stats: PredictorStats
    hop_reduction_vs_base: float | None = None

    def dram_fractions(self) -> dict[str, float]:
        total = (
            self.dram_local_read_bytes
            + self.dram_remote_read_bytes
            + self.dram_local_write_bytes
        )
        if total == 0:
            return {"local_read": 0.0, "remote_read": 0.0, "local_write": 0.0}
        return {
            "local_read": self.dram_local_read_bytes / total,
            "remote_read": self.dram_remote_read_bytes / total,
            "local_write": self.dram_local_write_bytes / total,
        }

    def validate(self) -> None:
        """Aggregates must equal reductions over the per-kernel results."""
        if self.total_hops != sum(k.hop_count for k in self.kernels):
            raise InvariantError("total_hops disagrees with per-kernel results")
        for name in ("dram_local_read_bytes", "dram_remote_read_bytes", "dram_local_write_bytes"):
            if getattr(self, name) != sum(getattr(k, name) for k in self.kernels):
                raise InvariantError(f"{name} disagrees with per-kernel results")
        if not math.isclose(
            self.total_makespan_s, sum(k.makespan_s for k in self.kernels), rel_tol=1e-12
        ):
            raise InvariantError("total makespan disagrees with per-kernel results")


def kernel_requests(ts: TraceSet, step: int, layer: int) -> dict[int, int]:
    """Expert request counts over all requests holding a decode token at step.

    Sums to (participating tokens) * top_k; requests shorter than the step
    simply drop out.
    """
    spec = ts.model
    if not (0 <= layer < spec.num_moe_layers):
        raise ConfigError(f"layer must be in [0, {spec.num_moe_layers}), got {layer}")
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    counts: dict[int, int] = {}
    for req in ts:
        dec = req.decode
        if step >= len(dec):
            continue
        for e in dec[step].selections[layer]:
            counts[e] = counts.get(e, 0) + 1
    return counts


def _nearest_holder(resident_mask: np.ndarray, die: int, topo: MeshTopology) -> int:
    """Lowest-id nearest die whose resident bit is set."""
    holders = np.flatnonzero(resident_mask)
    if holders.size == 0:
        raise InvariantError("no die holds the expert; placement table is broken")
    best, best_dist = -1, 1 << 30
    for h in holders.tolist():
        d = topo.manhattan(h, die)
        if d < best_dist:
            best, best_dist = h, d
    return best


def simulate_kernel(
    plan: AllocationPlan,
    resident: np.ndarray,          # (E, dies) bool snapshot at kernel start
    duplicates: np.ndarray,        # (E, dies) bool snapshot (subset of resident)
    topo: MeshTopology,
    spec: ModelSpec,
    *,
    step: int = 0,
    layer: int = 0,
    act_block: int = 50,
    admit_write_bytes: Mapping[int, int] | None = None,
) -> KernelResult:
    """Price one kernel's plan against the bottleneck fabric model."""
    die = topo.die
    die_busy = np.zeros(topo.num_dies, dtype=np.float64)
    link_busy: dict[tuple[int, int], float] = {}
    hops = 0
    local_rd = remote_rd = local_wr = 0
    remote_entries = 0
    dup_hits = 0

    def add_route(src: int, dst: int, nbytes: float) -> None:
        for link in topo.route_path(src, dst):
            link_busy[link] = link_busy.get(link, 0.0) + nbytes / die.d2d_bw

    for entry in plan.entries:
        e, d, n = entry.expert, entry.die, entry.tokens
        die_busy[d] += n * spec.flops_per_token_per_expert / die.compute_flops
        if resident[e, d]:
            die_busy[d] += spec.expert_bytes / die.dram_bw
            local_rd += spec.expert_bytes
            if duplicates[e, d]:
                dup_hits += 1
        else:
            # remote weights stream in at link rate, slower than local DRAM
            die_busy[d] += spec.expert_bytes / min(die.dram_bw, die.d2d_bw)
            remote_entries += 1
            remote_rd += spec.expert_bytes
            src = _nearest_holder(resident[e], d, topo)
            hops += spec.slices_per_expert * topo.manhattan(src, d)
            add_route(src, d, spec.expert_bytes)

    # Activation movement, coalesced per (source, target) die pair.
    act_pairs = np.zeros((topo.num_dies, topo.num_dies), dtype=np.int64)
    for b in plan.blocks:
        for h, c in b.home_counts:
            if h != b.die:
                act_pairs[h, b.die] += c
    for h, d in np.argwhere(act_pairs).tolist():
        cnt = int(act_pairs[h, d])
        dist = topo.manhattan(h, d)
        n_blocks = math.ceil(cnt / act_block)
        hops += 2 * n_blocks * dist  # dispatch there, combine back
        nbytes = cnt * spec.activation_bytes
        add_route(h, d, nbytes)
        add_route(d, h, nbytes)

    if admit_write_bytes:
        for d in sorted(admit_write_bytes):
            nbytes = admit_write_bytes[d]
            if nbytes:
                die_busy[d] += nbytes / die.dram_bw
                local_wr += nbytes

    makespan = float(die_busy.max()) if die_busy.size else 0.0
    if link_busy:
        makespan = max(makespan, max(link_busy.values()))
    return KernelResult(
        step=step,
        layer=layer,
        makespan_s=makespan,
        hop_count=hops,
        dram_local_read_bytes=local_rd,
        dram_remote_read_bytes=remote_rd,
        dram_local_write_bytes=local_wr,
        total_entries=len(plan.entries),
        remote_entries=remote_entries,
        dup_hit_entries=dup_hits,
    )


def _batch_requests(
    sel_now: np.ndarray, homes_now: np.ndarray, top_k: int
) -> tuple[dict[int, int], dict[int, np.ndarray]]:
    """Counts and per-expert token home lists (batch order) for one kernel."""
    flat_e = sel_now.ravel()
    flat_h = np.repeat(homes_now, top_k)
    order = np.argsort(flat_e, kind="stable")
    se, sh = flat_e[order], flat_h[order]
    reqs: dict[int, int] = {}
    token_homes: dict[int, np.ndarray] = {}
    bounds = np.flatnonzero(np.r_[True, se[1:] != se[:-1]])
    bounds = np.r_[bounds, se.size]
    for i in range(bounds.size - 1):
        lo, hi = bounds[i], bounds[i + 1]
        e = int(se[lo])
        reqs[e] = int(hi - lo)
        token_homes[e] = sh[lo:hi]
    return reqs, token_homes


def run(ts: TraceSet, cfg: SimConfig) -> RunReport:
    """Simulate the decode phase of the first batch_size requests.

    Deterministic: two runs of the same (trace, config) produce bit-identical
    reports. Work conservation is asserted for every kernel.
    """
    if cfg.model != ts.model:
        raise ConfigError("config model does not match the trace's model")
    if cfg.batch_size > len(ts.requests):
        raise ConfigError(
            f"batch_size={cfg.batch_size} exceeds available requests ({len(ts.requests)})"
        )
    spec = ts.model
    topo = cfg.topo
    D = topo.num_dies
    M = spec.num_moe_layers
    E = spec.num_experts

    batch = ts.requests[: cfg.batch_size]
    decode_len = [len(r.decode) for r in batch]
    prefill_len = [len(r.prefill) for r in batch]
    if max(decode_len, default=0) == 0:
        raise ConfigError("trace has no decode tokens to simulate")
    # (tokens, layers, k) per request; token home = initial batch index mod dies
    sel = [np.asarray([tok.selections for tok in r.tokens], dtype=np.int64) for r in batch]
    home = np.arange(len(batch), dtype=np.int64) % D

    table = initial_round_robin(spec, topo)
    dup = DuplicationState(
        num_dies=D,
        capacity_bytes=topo.die.duplicate_capacity_bytes,
        expert_bytes=spec.expert_bytes,
    )
    pt = PredictionTable.zeros(D, M, E)
    if cfg.uses_predictor and cfg.predictor.mode == "prefill_seeded":
        hm = seed_from_prefill(TraceSet(model=spec, requests=batch), cfg.predictor)
    else:
        hm = OnlineHeatmapState.zeros(M, E)

    kernels: list[KernelResult] = []
    stats = {"predictions": 0, "admissions": 0, "evictions": 0}
    total_tokens = 0
    tick = 0
    max_steps = cfg.max_steps if cfg.max_steps is not None else max(decode_len)

    for step in range(max_steps):
        active = [r for r in range(len(batch)) if decode_len[r] > step]
        if not active:
            break
        total_tokens += len(active)
        for layer in range(M):
            sel_now = np.stack([sel[r][prefill_len[r] + step, layer] for r in active])
            homes_now = home[active]
            reqs, token_homes = _batch_requests(sel_now, homes_now, spec.top_k)
            if sum(reqs.values()) != len(active) * spec.top_k:
                raise InvariantError("kernel request counts do not conserve batch tokens")

            if cfg.uses_allocator:
                plan = allocate(reqs, table, topo, token_homes, cfg.cost, spec, layer)
            else:
                plan = baseline_allocate(reqs, token_homes, spec)

            resident = (table.homes[layer] | table.duplicates[layer]).copy()
            duplicates_snap = table.duplicates[layer].copy()

            admit_bytes: dict[int, int] = {}
            if cfg.uses_predictor:
                # fold in the newest observed transition, then predict for t+1
                for r in active:
                    t_now = prefill_len[r] + step
                    if t_now > 0:
                        observe_transition(
                            hm, layer, sel[r][t_now - 1, layer], sel[r][t_now, layer],
                            cfg.predictor,
                        )
                active_per_die: dict[int, set[tuple[int, int]]] = {}
                remote_per_die: dict[int, set[tuple[int, int]]] = {}
                for entry in plan.entries:
                    active_per_die.setdefault(entry.die, set()).add((layer, entry.expert))
                    if not resident[entry.expert, entry.die]:
                        remote_per_die.setdefault(entry.die, set()).add((layer, entry.expert))
                for entry in plan.entries:  # refresh LRU ticks of duplicates we read
                    if duplicates_snap[entry.expert, entry.die]:
                        touch_duplicate(dup, entry.die, layer, entry.expert, tick)
                preds = predict_next(active_per_die, hm, cfg.predictor)
                decisions = duplication_decisions(
                    preds, remote_per_die, pt, dup, table, tick, layer=layer
                )
                stats["predictions"] += decisions.predictions
                stats["evictions"] += decisions.evictions
                for d, adm in decisions.admitted.items():
                    if adm:
                        stats["admissions"] += len(adm)
                        admit_bytes[d] = len(adm) * spec.expert_bytes

            kr = simulate_kernel(
                plan, resident, duplicates_snap, topo, spec,
                step=step, layer=layer, act_block=cfg.cost.req_blk,
                admit_write_bytes=admit_bytes,
            )
            kernels.append(kr)
            tick += 1

    total_makespan = sum(k.makespan_s for k in kernels)
    pstats = PredictorStats(
        predictions=stats["predictions"],
        admissions=stats["admissions"],
        evictions=stats["evictions"],
        dup_hit_entries=sum(k.dup_hit_entries for k in kernels),
        remote_entries=sum(k.remote_entries for k in kernels),
    )
    report = RunReport(
        strategy=cfg.strategy,
        config=cfg.to_dict(),
        kernels=tuple(kernels),
        total_generated_tokens=total_tokens,
        total_makespan_s=total_makespan,
        throughput_tokens_per_s=total_tokens / total_makespan if total_makespan > 0 else 0.0,
        total_hops=sum(k.hop_count for k in kernels),
        dram_local_read_bytes=sum(k.dram_local_read_bytes for k in kernels),
        dram_remote_read_bytes=sum(k.dram_remote_read_bytes for k in kernels),
        dram_local_write_bytes=sum(k.dram_local_write_bytes for k in kernels),
        predictor_stats=pstats,
    )
    report.validate()
    return report


@dataclass(frozen=True)
class ComparisonRow:
    strategy: str
    throughput_tokens_per_s: float
    throughput_ratio_vs_base: float
    total_hops: int
    hop_reduction_vs_base: float | None
    dram_local_read_bytes: int
    dram_remote_read_bytes: int
    dram_local_write_bytes: int
    local_read_fraction: float
    remote_read_fraction: float
    local_write_fraction: float
    predictor_hit_rate: float | None


def _fingerprint(report: RunReport) -> dict:
    fp = dict(report.config)
    fp.pop("strategy", None)
    return fp


def compare(reports: Mapping[str, RunReport] | Sequence[RunReport]) -> list[ComparisonRow]:
    """Side-by-side table of runs that differ only in strategy; base first."""
    if not isinstance(reports, Mapping):
        reports = {r.strategy: r for r in reports}
    if "base" not in reports:
        raise ConfigError("compare needs a 'base' report to take ratios against")
    base = reports["base"]
    base_fp = _fingerprint(base)
    for name, rep in reports.items():
        if rep.strategy != name:
            raise ConfigError(f"report keyed {name!r} carries strategy {rep.strategy!r}")
        if _fingerprint(rep) != base_fp:
            raise ConfigError(
                f"report {name!r} was produced under a different configuration than 'base'"
            )
    rows = []
    order = [s for s in STRATEGIES if s in reports]
    order += [s for s in sorted(reports) if s not in order]
    for name in order:
        rep = reports[name]
        frac = rep.dram_fractions()
        rows.append(
            ComparisonRow(
                strategy=name,
                throughput_tokens_per_s=rep.throughput_tokens_per_s,
                throughput_ratio_vs_base=(
                    rep.throughput_tokens_per_s / base.throughput_tokens_per_s
                    if base.throughput_tokens_per_s > 0
                    else math.inf
                ),
                total_hops=rep.total_hops,
                hop_reduction_vs_base=(
                    base.total_hops / rep.total_hops if rep.total_hops > 0 else None
                ),
                dram_local_read_bytes=rep.dram_local_read_bytes,
                dram_remote_read_bytes=rep.dram_remote_read_bytes,
                dram_local_write_bytes=rep.dram_local_write_bytes,
                local_read_fraction=frac["local_read"],
                remote_read_fraction=frac["remote_read"],
                local_write_fraction=frac["local_write"],
                predictor_hit_rate=rep.predictor_stats.hit_rate,
            )
        )
    return rows


# --- export ---------------------------------------------------------------


def export_report_json(report: RunReport, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    d = {
        "strategy": report.strategy,
        "config": report.config,
        "total_generated_tokens": report.total_generated_tokens,
        "total_makespan_s": report.total_makespan_s,
        "throughput_tokens_per_s": report.throughput_tokens_per_s,
        "total_hops": report.total_hops,
        "dram_local_read_bytes": report.dram_local_read_bytes,
        "dram_remote_read_bytes": report.dram_remote_read_bytes,
        "dram_local_write_bytes": report.dram_local_write_bytes,
        "dram_fractions": report.dram_fractions(),
        "predictor": {
            "predictions": report.predictor_stats.predictions,
            "admissions": report.predictor_stats.admissions,
            "evictions": report.predictor_stats.evictions,
            "dup_hit_entries": report.predictor_stats.dup_hit_entries,
            "remote_entries": report.predictor_stats.remote_entries,
            "hit_rate": report.predictor_stats.hit_rate,
        },
        "kernels": [
            {
                "step": k.step,
                "layer": k.layer,
                "makespan_s": k.makespan_s,
                "hop_count": k.hop_count,
                "dram_local_read_bytes": k.dram_local_read_bytes,
                "dram_remote_read_bytes": k.dram_remote_read_bytes,
                "dram_local_write_bytes": k.dram_local_write_bytes,
            }
            for k in report.kernels
        ],
    }
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(d, fh, sort_keys=True, indent=1)
        fh.write("\n")


def export_kernels_csv(report: RunReport, path: str | Path, meta: dict | None = None) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow(["step", "layer", "strategy", "makespan", "hops", "local_rd", "remote_rd", "local_wr"])
        for k in report.kernels:
            w.writerow([
                k.step, k.layer, report.strategy, repr(k.makespan_s), k.hop_count,
                k.dram_local_read_bytes, k.dram_remote_read_bytes, k.dram_local_write_bytes,
            ])


def export_comparison_csv(rows: Sequence[ComparisonRow], path: str | Path, meta: dict | None = None) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow([
            "strategy", "throughput_tokens_per_s", "throughput_ratio_vs_base",
            "total_hops", "hop_reduction_vs_base",
            "dram_local_read_bytes", "dram_remote_read_bytes", "dram_local_write_bytes",
            "local_read_fraction", "remote_read_fraction", "local_write_fraction",
            "predictor_hit_rate",
        ])
        for r in rows:
            w.writerow([
                r.strategy, repr(r.throughput_tokens_per_s), repr(r.throughput_ratio_vs_base),
                r.total_hops,
                "" if r.hop_reduction_vs_base is None else repr(r.hop_reduction_vs_base),
                r.dram_local_read_bytes, r.dram_remote_read_bytes, r.dram_local_write_bytes,
                repr(r.local_read_fraction), repr(r.remote_read_fraction), repr(r.local_write_fraction),
                "" if r.predictor_hit_rate is None else repr(r.predictor_hit_rate),
            ])
