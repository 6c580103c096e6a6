"""Multi-die 2D mesh fabric: die capabilities, coordinates, routing.

Dies are numbered row-major: id = y * x_dies + x. Links are directed pairs of
adjacent die ids; each direction has its own bandwidth budget (full duplex).
Routing is dimension-ordered, X first then Y, so a path is unique and its
length equals the Manhattan distance.

Units are SI decimal: bytes/s for bandwidths, bytes for capacities, FLOP/s
(dense FP8) for compute.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["DieSpec", "MeshTopology", "preset", "PRESETS"]


@dataclass(frozen=True, slots=True)
class DieSpec:
    compute_flops: float           # dense FP8 FLOP/s
    dram_bw: float                 # local DRAM bandwidth, bytes/s
    dram_capacity: int             # bytes
    d2d_bw: float                  # per-direction die-to-die link bandwidth, bytes/s
    reserved_cache_fraction: float = 0.10

    def __post_init__(self) -> None:
        if min(self.compute_flops, self.dram_bw, self.dram_capacity, self.d2d_bw) <= 0:
            raise ConfigError("die rates and capacity must all be positive")
        if not (0.0 <= self.reserved_cache_fraction < 1.0):
            raise ConfigError(
                f"reserved_cache_fraction must be in [0, 1), got {self.reserved_cache_fraction}"
            )

    @property
    def duplicate_capacity_bytes(self) -> int:
        """DRAM bytes set aside for duplicated experts."""
        return int(self.dram_capacity * self.reserved_cache_fraction)


@dataclass(frozen=True, slots=True)
class MeshTopology:
    x_dies: int
    y_dies: int
    die: DieSpec

    def __post_init__(self) -> None:
        if self.x_dies < 1 or self.y_dies < 1:
            raise ConfigError(f"mesh dims must be >= 1, got {self.x_dies}x{self.y_dies}")

    @property
    def num_dies(self) -> int:
        return self.x_dies * self.y_dies

    def coord(self, die_id: int) -> tuple[int, int]:
        if not (0 <= die_id < self.num_dies):
            raise ConfigError(f"die id {die_id} out of range [0, {self.num_dies})")
        return die_id % self.x_dies, die_id // self.x_dies

    def die_id(self, x: int, y: int) -> int:
        if not (0 <= x < self.x_dies and 0 <= y < self.y_dies):
            raise ConfigError(f"coordinate ({x},{y}) outside {self.x_dies}x{self.y_dies} mesh")
        return y * self.x_dies + x

    def manhattan(self, a: int, b: int) -> int:
        ax, ay = self.coord(a)
        bx, by = self.coord(b)
        return abs(ax - bx) + abs(ay - by)

    def dies_within(self, center: int, dis: int) -> list[int]:
        """All die ids at Manhattan distance <= dis from center, ascending.

        Includes the center itself; on an unbounded interior the count is
        2*dis^2 + 2*dis + 1.
        """
        if dis < 0:
            raise ConfigError(f"dis must be >= 0, got {dis}")
        cx, cy = self.coord(center)
        out = []
        for dy in range(-dis, dis + 1):
            span = dis - abs(dy)
            y = cy + dy
            if not (0 <= y < self.y_dies):
                continue
            for x in range(max(0, cx - span), min(self.x_dies - 1, cx + span) + 1):
                out.append(y * self.x_dies + x)
        out.sort()
        return out

    def route_path(self, src: int, dst: int) -> list[tuple[int, int]]:
        """Directed links of the X-then-Y route; len == manhattan(src, dst)."""
        sx, sy = self.coord(src)
        dx, dy = self.coord(dst)
        links = []
        x, y = sx, sy
        step = 1 if dx > sx else -1
        while x != dx:
            links.append((self.die_id(x, y), self.die_id(x + step, y)))
            x += step
        step = 1 if dy > sy else -1
        while y != dy:
            links.append((self.die_id(x, y), self.die_id(x, y + step)))
            y += step
        return links


# Published wafer-scale configurations. Same die in both; they differ in count
# and aspect ratio.
_WAFER_DIE = DieSpec(
    compute_flops=1000e12,
    dram_bw=2e12,
    dram_capacity=256_000_000_000,
    d2d_bw=1.5e12,
    reserved_cache_fraction=0.10,
)

PRESETS: dict[str, MeshTopology] = {
    "dojo": MeshTopology(x_dies=5, y_dies=5, die=_WAFER_DIE),
    "tsmc_sow": MeshTopology(x_dies=3, y_dies=8, die=_WAFER_DIE),
}


def preset(name: str) -> MeshTopology:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown topology preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None
