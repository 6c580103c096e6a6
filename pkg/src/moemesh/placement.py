"""Expert placement: home dies, duplicated copies, and the per-die LRU cache.

Placement is tracked at whole-expert granularity per (MoE layer position,
expert id). Every expert has at least one home die; duplicates are extra
copies living in a reserved slice of a die's DRAM
(dram_capacity * reserved_cache_fraction) and are evicted least-recently-used.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvariantError
from .mesh import MeshTopology
from .traces import ModelSpec

__all__ = [
    "ExpertDistributionTable",
    "DuplicationState",
    "AdmitReport",
    "initial_round_robin",
    "dies_holding",
    "admit_duplicate",
    "touch_duplicate",
    "table_to_json",
    "table_from_json",
]


@dataclass
class ExpertDistributionTable:
    """Boolean (layers, experts, dies) masks of home and duplicate locations."""

    homes: np.ndarray
    duplicates: np.ndarray

    def __post_init__(self) -> None:
        if self.homes.shape != self.duplicates.shape or self.homes.ndim != 3:
            raise ConfigError("homes and duplicates must share a (layers, experts, dies) shape")

    @property
    def num_moe_layers(self) -> int:
        return self.homes.shape[0]

    @property
    def num_experts(self) -> int:
        return self.homes.shape[1]

    @property
    def num_dies(self) -> int:
        return self.homes.shape[2]

    def validate(self) -> None:
        if not self.homes.any(axis=2).all():
            raise InvariantError("every (layer, expert) needs at least one home die")
        if (self.homes & self.duplicates).any():
            raise InvariantError("home and duplicate die sets must be disjoint")

    def home_dies(self, layer: int, expert: int) -> list[int]:
        return np.flatnonzero(self.homes[layer, expert]).tolist()

    def duplicate_dies(self, layer: int, expert: int) -> list[int]:
        return np.flatnonzero(self.duplicates[layer, expert]).tolist()


def initial_round_robin(spec: ModelSpec, topo: MeshTopology) -> ExpertDistributionTable:
    """Home expert e of every MoE layer on die e mod num_dies; no duplicates."""
    shape = (spec.num_moe_layers, spec.num_experts, topo.num_dies)
    homes = np.zeros(shape, dtype=bool)
    for e in range(spec.num_experts):
        homes[:, e, e % topo.num_dies] = True
    return ExpertDistributionTable(homes=homes, duplicates=np.zeros(shape, dtype=bool))


def dies_holding(table: ExpertDistributionTable, layer: int, expert: int) -> list[int]:
    """Home union duplicate dies, ascending."""
    mask = table.homes[layer, expert] | table.duplicates[layer, expert]
    return np.flatnonzero(mask).tolist()


@dataclass(frozen=True)
class AdmitReport:
    admitted: bool
    evicted: tuple[tuple[int, int], ...] = ()
    reason: str = ""


@dataclass
class DuplicationState:
    """Per-die duplicate residency with last-use ticks and byte accounting.

    used_bytes never exceeds capacity_bytes; all experts share one weight
    footprint (expert_bytes), so occupancy is residents * expert_bytes.
    """

    num_dies: int
    capacity_bytes: int
    expert_bytes: int
    residents: list[dict[tuple[int, int], int]] = field(default_factory=list)
    used_bytes: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.residents:
            self.residents = [dict() for _ in range(self.num_dies)]
        if not self.used_bytes:
            self.used_bytes = [0] * self.num_dies

    def is_resident(self, die: int, layer: int, expert: int) -> bool:
        return (layer, expert) in self.residents[die]


def touch_duplicate(state: DuplicationState, die: int, layer: int, expert: int, now: int) -> None:
    """Refresh the last-use tick of a resident duplicate (it was just read)."""
    key = (layer, expert)
    if key not in state.residents[die]:
        raise ConfigError(f"expert (layer={layer}, expert={expert}) is not resident on die {die}")
    state.residents[die][key] = now


def admit_duplicate(
    state: DuplicationState,
    table: ExpertDistributionTable,
    die: int,
    layer: int,
    expert: int,
    now: int,
) -> AdmitReport:
    """Place a duplicate of (layer, expert) on die, evicting LRU entries as needed.

    Admitting an expert the die already holds (home or duplicate) is a caller
    bug and raises; an expert that cannot fit even in an empty cache is
    rejected with a reason instead.
    """
    key = (layer, expert)
    if table.homes[layer, expert, die] or key in state.residents[die]:
        raise ConfigError(
            f"expert (layer={layer}, expert={expert}) is already resident on die {die}"
        )
    if state.expert_bytes > state.capacity_bytes:
        return AdmitReport(
            admitted=False,
            reason=f"expert_bytes={state.expert_bytes} exceeds duplicate cache "
                   f"capacity={state.capacity_bytes}",
        )
    evicted: list[tuple[int, int]] = []
    res = state.residents[die]
    while state.used_bytes[die] + state.expert_bytes > state.capacity_bytes:
        # LRU victim; ties broken by (layer, expert) for determinism
        victim = min(res, key=lambda k: (res[k], k))
        del res[victim]
        state.used_bytes[die] -= state.expert_bytes
        table.duplicates[victim[0], victim[1], die] = False
        evicted.append(victim)
    res[key] = now
    state.used_bytes[die] += state.expert_bytes
    table.duplicates[layer, expert, die] = True
    return AdmitReport(admitted=True, evicted=tuple(evicted))


def table_to_json(table: ExpertDistributionTable, path: str | Path | None = None) -> dict:
    """Diagnostic dump: per (layer, expert) lists of home and duplicate dies."""
    d = {
        "layers": table.num_moe_layers,
        "experts": table.num_experts,
        "dies": table.num_dies,
        "homes": [
            [table.home_dies(l, e) for e in range(table.num_experts)]
            for l in range(table.num_moe_layers)
        ],
        "duplicates": [
            [table.duplicate_dies(l, e) for e in range(table.num_experts)]
            for l in range(table.num_moe_layers)
        ],
    }
    if path is not None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(d, fh, sort_keys=True)
            fh.write("\n")
    return d


def table_from_json(d: dict | str | Path) -> ExpertDistributionTable:
    if not isinstance(d, dict):
        with open(d, encoding="utf-8") as fh:
            d = json.load(fh)
    shape = (d["layers"], d["experts"], d["dies"])
    homes = np.zeros(shape, dtype=bool)
    dups = np.zeros(shape, dtype=bool)
    for l in range(shape[0]):
        for e in range(shape[1]):
            homes[l, e, d["homes"][l][e]] = True
            dups[l, e, d["duplicates"][l][e]] = True
    table = ExpertDistributionTable(homes=homes, duplicates=dups)
    table.validate()
    return table
