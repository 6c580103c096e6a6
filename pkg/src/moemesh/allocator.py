"""Per-kernel task allocation: which die computes which expert's token blocks.

Two policies:

  allocate            placement-aware: splits each expert's tokens into blocks
                      of at most req_blk and greedily places each block on the
                      cheapest nearby candidate die, steering later blocks away
                      from accumulated load.
  baseline_allocate   placement-ignorant reference: every token's expert task
                      runs on the token's own home die, whether or not that die
                      holds the weights. This is the status-quo behavior the
                      placement-aware policy is measured against.

The cost of running a block on a die is

  cost = load(die) + T_compute + T_weights + T_activations

  T_compute     = tokens * flops_per_token_per_expert / compute_flops
  T_weights     = 0 if the die holds the expert, else
                  expert_bytes * manhattan(nearest holder, die) / d2d_bw
  T_activations = activation_bytes * sum over tokens of
                  manhattan(token home, die) / d2d_bw

load(die) accumulates the non-load cost terms of blocks already placed there
within the kernel; it resets every kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvariantError
from .mesh import MeshTopology
from .placement import ExpertDistributionTable, dies_holding
from .traces import ModelSpec

__all__ = [
    "CostParams",
    "CostState",
    "BlockAssignment",
    "PlanEntry",
    "AllocationPlan",
    "PlanCost",
    "gen_candidate_list",
    "block_cost",
    "allocate",
    "baseline_allocate",
    "plan_cost",
]

# expert id -> request (token) count for one kernel
ExpertRequestCounts = Mapping[int, int]
# expert id -> home die of each of its tokens, in batch order
TokenHomes = Mapping[int, Sequence[int]]


@dataclass(frozen=True)
class CostParams:
    req_blk: int = 50
    candidate_dis: int = 1
    split_divisor: int | None = None  # None means req_blk
    w_compute: float = 1.0
    w_weights: float = 1.0
    w_activations: float = 1.0

    def __post_init__(self) -> None:
        if self.req_blk < 1:
            raise ConfigError(f"req_blk must be >= 1, got {self.req_blk}")
        if self.candidate_dis < 0:
            raise ConfigError(f"candidate_dis must be >= 0, got {self.candidate_dis}")
        if self.split_divisor is not None and self.split_divisor < 1:
            raise ConfigError(f"split_divisor must be >= 1, got {self.split_divisor}")

    @property
    def effective_split_divisor(self) -> int:
        return self.req_blk if self.split_divisor is None else self.split_divisor


@dataclass(frozen=True)
class BlockAssignment:
    """One block of an expert's tokens bound to one die.

    home_counts aggregates the block's token homes as (home_die, tokens)
    pairs, ascending by die; that is all the cost model and the kernel
    simulation need to price activation movement.
    """

    expert: int
    die: int
    tokens: int
    home_counts: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class PlanEntry:
    expert: int
    die: int
    tokens: int


@dataclass(frozen=True)
class AllocationPlan:
    """Merged (expert, die, tokens) entries plus the block-level provenance."""

    entries: tuple[PlanEntry, ...]
    blocks: tuple[BlockAssignment, ...]

    def total_tokens(self) -> int:
        return sum(e.tokens for e in self.entries)

    def tokens_per_expert(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.entries:
            out[e.expert] = out.get(e.expert, 0) + e.tokens
        return out


@dataclass
class CostState:
    """Everything block_cost needs to price a placement."""

    spec: ModelSpec
    topo: MeshTopology
    table: ExpertDistributionTable
    params: CostParams
    layer: int
    load: np.ndarray  # per-die accumulated cost, seconds

    def __post_init__(self) -> None:
        if self.load.shape != (self.topo.num_dies,):
            raise ConfigError("load vector must have one entry per die")


def _nearest_holder_distance(state: CostState, expert: int, die: int) -> int:
    holders = dies_holding(state.table, state.layer, expert)
    if not holders:
        raise InvariantError(f"expert {expert} at layer {state.layer} has no holder die")
    return min(state.topo.manhattan(h, die) for h in holders)


def gen_candidate_list(
    expert: int,
    state: CostState,
    req_num: int,
) -> list[int]:
    """Candidate dies for one expert: every holder plus dies within
    candidate_dis of a holder, sorted by current load (ties: lower die id),
    truncated to max_split_num = clamp(ceil(req_num / split_divisor), 1, len).
    """
    topo = state.topo
    holders = dies_holding(state.table, state.layer, expert)
    if not holders:
        raise InvariantError(f"expert {expert} at layer {state.layer} has no holder die")
    cand: set[int] = set()
    for h in holders:
        cand.update(topo.dies_within(h, state.params.candidate_dis))
    ordered = sorted(cand, key=lambda d: (state.load[d], d))
    max_split = max(1, min(math.ceil(req_num / state.params.effective_split_divisor), len(ordered)))
    return ordered[:max_split]


def block_cost(
    die: int,
    expert: int,
    home_counts: Sequence[tuple[int, int]],
    state: CostState,
) -> float:
    """Cost of running one block (tokens grouped by home die) on a die."""
    spec = state.spec
    topo = state.topo
    n_tokens = sum(c for _, c in home_counts)
    t_compute = n_tokens * spec.flops_per_token_per_expert / topo.die.compute_flops
    if state.table.homes[state.layer, expert, die] or state.table.duplicates[state.layer, expert, die]:
        t_weights = 0.0
    else:
        hops = _nearest_holder_distance(state, expert, die)
        t_weights = spec.expert_bytes * hops / topo.die.d2d_bw
    act_hops = sum(c * topo.manhattan(h, die) for h, c in home_counts)
    t_act = spec.activation_bytes * act_hops / topo.die.d2d_bw
    p = state.params
    return float(
        state.load[die]
        + p.w_compute * t_compute
        + p.w_weights * t_weights
        + p.w_activations * t_act
    )


def _group_homes(homes: Sequence[int]) -> tuple[tuple[int, int], ...]:
    out: dict[int, int] = {}
    for h in homes:
        h = int(h)  # callers may hand numpy integers; keep plans plain
        out[h] = out.get(h, 0) + 1
    return tuple(sorted(out.items()))


def _validate_inputs(reqs: ExpertRequestCounts, token_homes: TokenHomes, spec: ModelSpec) -> None:
    for e, n in reqs.items():
        if not (0 <= e < spec.num_experts):
            raise ConfigError(f"expert id {e} out of range [0, {spec.num_experts})")
        if n < 0:
            raise ConfigError(f"negative request count for expert {e}")
        homes = token_homes.get(e, ())
        if len(homes) != n:
            raise ConfigError(
                f"expert {e}: token_homes has {len(homes)} entries but request count is {n}"
            )


def _merge_blocks(blocks: Sequence[BlockAssignment]) -> tuple[PlanEntry, ...]:
    merged: dict[tuple[int, int], int] = {}
    for b in blocks:
        merged[(b.expert, b.die)] = merged.get((b.expert, b.die), 0) + b.tokens
    return tuple(
        PlanEntry(expert=e, die=d, tokens=n) for (e, d), n in sorted(merged.items())
    )


def allocate(
    reqs: ExpertRequestCounts,
    table: ExpertDistributionTable,
    topo: MeshTopology,
    token_homes: TokenHomes,
    params: CostParams,
    spec: ModelSpec,
    layer: int = 0,
) -> AllocationPlan:
    """Placement-aware allocation for one kernel.

    Experts are processed in descending request count (ties: lower expert id);
    each block of at most req_blk tokens goes to the candidate with the lowest
    modeled cost (ties: lower die id), and the chosen die's load absorbs the
    block's cost terms before the next block is placed.
    """
    _validate_inputs(reqs, token_homes, spec)
    state = CostState(
        spec=spec, topo=topo, table=table, params=params, layer=layer,
        load=np.zeros(topo.num_dies, dtype=np.float64),
    )
    blocks: list[BlockAssignment] = []
    for expert in sorted(reqs, key=lambda e: (-reqs[e], e)):
        count = reqs[expert]
        if count == 0:
            continue
        homes = list(token_homes[expert])
        candidates = gen_candidate_list(expert, state, count)
        offset = 0
        while offset < count:
            n = min(params.req_blk, count - offset)
            hc = _group_homes(homes[offset : offset + n])
            best_die, best_cost = -1, math.inf
            for d in candidates:
                c = block_cost(d, expert, hc, state)
                if c < best_cost or (c == best_cost and d < best_die):
                    best_die, best_cost = d, c
            blocks.append(BlockAssignment(expert=int(expert), die=best_die, tokens=int(n), home_counts=hc))
            state.load[best_die] = best_cost  # cost already includes prior load
            offset += n
    plan = AllocationPlan(entries=_merge_blocks(blocks), blocks=tuple(blocks))
    _check_conservation(plan, reqs)
    return plan


def baseline_allocate(
    reqs: ExpertRequestCounts,
    token_homes: TokenHomes,
    spec: ModelSpec,
) -> AllocationPlan:
    """Placement-ignorant reference: each token's task stays on its home die.

    Activations never move; every die fetches whatever expert weights its
    tokens happen to need.
    """
    _validate_inputs(reqs, token_homes, spec)
    blocks: list[BlockAssignment] = []
    for expert in sorted(reqs):
        if reqs[expert] == 0:
            continue
        per_die: dict[int, int] = {}
        for h in token_homes[expert]:
            per_die[int(h)] = per_die.get(int(h), 0) + 1
        for die, n in sorted(per_die.items()):
            blocks.append(
                BlockAssignment(expert=int(expert), die=die, tokens=n, home_counts=((die, n),))
            )
    plan = AllocationPlan(entries=_merge_blocks(blocks), blocks=tuple(blocks))
    _check_conservation(plan, reqs)
    return plan


def _check_conservation(plan: AllocationPlan, reqs: ExpertRequestCounts) -> None:
    got = plan.tokens_per_expert()
    want = {e: n for e, n in reqs.items() if n > 0}
    if got != want:
        raise InvariantError(f"plan loses or invents tokens: planned {got}, requested {want}")


@dataclass(frozen=True)
class PlanCost:
    """Cost-model evaluation of a finished plan (order-free replay)."""

    per_die: np.ndarray
    max_die_cost: float
    total_cost: float


def plan_cost(
    plan: AllocationPlan,
    table: ExpertDistributionTable,
    topo: MeshTopology,
    params: CostParams,
    spec: ModelSpec,
    layer: int = 0,
) -> PlanCost:
    """Accumulated per-die cost of a plan under the same terms allocate used.

    Each block contributes its non-load cost terms to its die; the bottleneck
    die's total is the figure of merit.
    """
    state = CostState(
        spec=spec, topo=topo, table=table, params=params, layer=layer,
        load=np.zeros(topo.num_dies, dtype=np.float64),
    )
    per_die = np.zeros(topo.num_dies, dtype=np.float64)
    for b in plan.blocks:
        inc = block_cost(b.die, b.expert, b.home_counts, state)  # load stays 0
        per_die[b.die] += inc
    return PlanCost(
        per_die=per_die,
        max_die_cost=float(per_die.max()) if per_die.size else 0.0,
        total_cost=float(per_die.sum()),
    )
