"""Core trace data model: model shape, per-token expert selections, requests.

A trace records, for every token of every request, which experts each MoE
layer routed that token to. Everything downstream (statistics, placement,
simulation) consumes these types. All types are immutable after construction;
sharing them across threads is safe.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .errors import TraceSchemaError

__all__ = [
    "Phase",
    "ModelSpec",
    "TokenStep",
    "RequestTrace",
    "TraceSet",
    "SynthParams",
    "filter_by_tag",
]


class Phase(str, enum.Enum):
    PREFILL = "prefill"
    DECODE = "decode"


@dataclass(frozen=True)
class ModelSpec:
    """Static shape of the served model, as far as routing is concerned.

    expert_bytes is the weight footprint of one expert in one MoE layer and
    must divide evenly into slices_per_expert transfer slices.
    flops_per_token_per_expert covers one token passing through one expert.
    """

    name: str
    num_layers: int
    moe_layer_ids: tuple[int, ...]
    num_experts: int
    top_k: int
    expert_bytes: int
    activation_bytes: int
    flops_per_token_per_expert: float
    slices_per_expert: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "moe_layer_ids", tuple(int(x) for x in self.moe_layer_ids))
        if self.num_layers <= 0:
            raise TraceSchemaError(f"num_layers must be positive, got {self.num_layers}")
        ids = self.moe_layer_ids
        if not ids:
            raise TraceSchemaError("moe_layer_ids must not be empty")
        if any(not (0 <= l < self.num_layers) for l in ids):
            raise TraceSchemaError(f"moe_layer_ids {ids} out of range [0, {self.num_layers})")
        if any(a >= b for a, b in zip(ids, ids[1:])):
            raise TraceSchemaError(f"moe_layer_ids must be strictly increasing, got {ids}")
        if self.num_experts < 1:
            raise TraceSchemaError(f"num_experts must be >= 1, got {self.num_experts}")
        if not (1 <= self.top_k <= self.num_experts):
            raise TraceSchemaError(
                f"top_k must be in [1, num_experts={self.num_experts}], got {self.top_k}"
            )
        if self.slices_per_expert < 1:
            raise TraceSchemaError(f"slices_per_expert must be >= 1, got {self.slices_per_expert}")
        if self.expert_bytes <= 0 or self.expert_bytes % self.slices_per_expert != 0:
            raise TraceSchemaError(
                f"expert_bytes={self.expert_bytes} must be positive and divisible by "
                f"slices_per_expert={self.slices_per_expert}"
            )
        if self.activation_bytes <= 0:
            raise TraceSchemaError(f"activation_bytes must be positive, got {self.activation_bytes}")
        if self.flops_per_token_per_expert <= 0:
            raise TraceSchemaError("flops_per_token_per_expert must be positive")

    @property
    def num_moe_layers(self) -> int:
        return len(self.moe_layer_ids)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_layers": self.num_layers,
            "moe_layer_ids": list(self.moe_layer_ids),
            "num_experts": self.num_experts,
            "top_k": self.top_k,
            "expert_bytes": self.expert_bytes,
            "activation_bytes": self.activation_bytes,
            "flops_per_token_per_expert": self.flops_per_token_per_expert,
            "slices_per_expert": self.slices_per_expert,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        try:
            return cls(
                name=str(d["name"]),
                num_layers=int(d["num_layers"]),
                moe_layer_ids=tuple(int(x) for x in d["moe_layer_ids"]),
                num_experts=int(d["num_experts"]),
                top_k=int(d["top_k"]),
                expert_bytes=int(d["expert_bytes"]),
                activation_bytes=int(d["activation_bytes"]),
                flops_per_token_per_expert=float(d["flops_per_token_per_expert"]),
                slices_per_expert=int(d.get("slices_per_expert", 2)),
            )
        except KeyError as e:
            raise TraceSchemaError(f"model header missing field {e.args[0]!r}") from None


def _canonical_selection(sel: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted(int(x) for x in sel))


@dataclass(frozen=True)
class TokenStep:
    """One token's routing decision: for each MoE layer (in moe_layer_ids
    order) the set of experts it was sent to, stored sorted ascending."""

    phase: Phase
    selections: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "phase", Phase(self.phase))
        object.__setattr__(
            self, "selections", tuple(_canonical_selection(s) for s in self.selections)
        )


@dataclass(frozen=True)
class RequestTrace:
    """All tokens of one request, prefill first, then decode."""

    request_id: str
    tokens: tuple[TokenStep, ...]
    tags: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", dict(self.tags))

    @property
    def prefill(self) -> tuple[TokenStep, ...]:
        return tuple(t for t in self.tokens if t.phase is Phase.PREFILL)

    @property
    def decode(self) -> tuple[TokenStep, ...]:
        return tuple(t for t in self.tokens if t.phase is Phase.DECODE)


def validate_request(req: RequestTrace, spec: ModelSpec) -> None:
    """Raise TraceSchemaError naming request/token/layer on the first violation."""
    seen_decode = False
    n_layers = spec.num_moe_layers
    for ti, tok in enumerate(req.tokens):
        if tok.phase is Phase.DECODE:
            seen_decode = True
        elif seen_decode:
            raise TraceSchemaError(
                f"request {req.request_id!r} token {ti}: prefill token after decode began"
            )
        if len(tok.selections) != n_layers:
            raise TraceSchemaError(
                f"request {req.request_id!r} token {ti}: expected {n_layers} MoE layer "
                f"selections, got {len(tok.selections)}"
            )
        for li, sel in enumerate(tok.selections):
            if len(sel) != spec.top_k:
                raise TraceSchemaError(
                    f"request {req.request_id!r} token {ti} layer {li}: selection has "
                    f"{len(sel)} experts, expected top_k={spec.top_k}"
                )
            if len(set(sel)) != len(sel):
                raise TraceSchemaError(
                    f"request {req.request_id!r} token {ti} layer {li}: duplicate expert ids in {sel}"
                )
            if sel and (sel[0] < 0 or sel[-1] >= spec.num_experts):
                raise TraceSchemaError(
                    f"request {req.request_id!r} token {ti} layer {li}: expert id out of "
                    f"range [0, {spec.num_experts}) in {sel}"
                )


@dataclass(frozen=True)
class TraceSet:
    """An immutable bundle of requests routed through one model.

    skipped_records is loader metadata (how many malformed records a lenient
    load dropped); it does not participate in equality.
    """

    model: ModelSpec
    requests: tuple[RequestTrace, ...]
    skipped_records: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "requests", tuple(self.requests))

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self) -> Iterator[RequestTrace]:
        return iter(self.requests)

    def validate(self) -> None:
        for req in self.requests:
            validate_request(req, self.model)


def filter_by_tag(ts: TraceSet, key: str, value: str) -> TraceSet:
    """Subset of requests whose tags[key] == value; may be empty. Model is kept."""
    kept = tuple(r for r in ts.requests if r.tags.get(key) == value)
    return TraceSet(model=ts.model, requests=kept)


@dataclass(frozen=True)
class SynthParams:
    """Knobs for the synthetic trace generator.

    zipf_s: popularity skew exponent; 0 means uniform.
    stickiness: per-slot probability that an expert chosen by the previous
        token is kept at the same layer, so it is also the expected fraction
        of the selection carried over token to token.
    layer_coupling: probability a selection at MoE layer i+1 is drawn from a
        fixed per-expert successor list instead of the popularity distribution.
    prefill_tokens: prefill tokens per request, generated by the same process
        ahead of the decode tokens.
    """

    num_requests: int
    tokens_per_request: int
    zipf_s: float = 1.0
    stickiness: float = 0.0
    layer_coupling: float = 0.0
    seed: int = 0
    prefill_tokens: int = 0

    def __post_init__(self) -> None:
        if self.num_requests < 1:
            raise ValueError(f"num_requests must be >= 1, got {self.num_requests}")
        if self.tokens_per_request < 1:
            raise ValueError(f"tokens_per_request must be >= 1, got {self.tokens_per_request}")
        if self.zipf_s < 0:
            raise ValueError(f"zipf_s must be >= 0, got {self.zipf_s}")
        if not (0.0 <= self.stickiness <= 1.0):
            raise ValueError(f"stickiness must be in [0, 1], got {self.stickiness}")
        if not (0.0 <= self.layer_coupling <= 1.0):
            raise ValueError(f"layer_coupling must be in [0, 1], got {self.layer_coupling}")
        if self.prefill_tokens < 0:
            raise ValueError(f"prefill_tokens must be >= 0, got {self.prefill_tokens}")
