"""Synthetic routing-trace generator.

Expert popularity per layer follows a Zipf law with exponent zipf_s over a
per-layer random permutation of expert ids, so layers are skewed but not
identically. Two temporal knobs shape the trace:

  stickiness      per-slot P(an expert from the previous token is kept, same
                  layer); the expected adjacent-token overlap fraction is >= s
  layer_coupling  P(a selection at MoE layer i+1 comes from a fixed per-expert
                  successor table keyed on layer i's selection)

Output is deterministic for fixed (spec, params). When both knobs are zero
every token-layer draw is independent and a vectorized sampler is used; the
two samplers draw from the same without-replacement distribution.
"""
from __future__ import annotations

import numpy as np

from .traces import ModelSpec, Phase, RequestTrace, SynthParams, TokenStep, TraceSet

__all__ = ["generate_synthetic", "zipf_weights"]


def zipf_weights(num_experts: int, s: float) -> np.ndarray:
    """Normalized rank weights w_r proportional to (r+1)**-s, rank 0 hottest."""
    ranks = np.arange(1, num_experts + 1, dtype=np.float64)
    w = ranks ** -float(s)
    return w / w.sum()


def _layer_popularity(rng: np.random.Generator, spec: ModelSpec, s: float) -> np.ndarray:
    """(num_moe_layers, E) probability per expert id; ranks permuted per layer."""
    E = spec.num_experts
    w = zipf_weights(E, s)
    probs = np.empty((spec.num_moe_layers, E), dtype=np.float64)
    for li in range(spec.num_moe_layers):
        perm = rng.permutation(E)
        probs[li, perm] = w
    return probs


def _gumbel_topk(rng: np.random.Generator, p: np.ndarray, n: int, k: int) -> np.ndarray:
    """n independent top-k-without-replacement draws from p, rows sorted by id."""
    out = np.empty((n, k), dtype=np.int64)
    logp = np.log(p)
    chunk = max(1, 8_000_000 // p.size)  # bound the (chunk, E) key matrix to ~64 MB
    pos = 0
    while pos < n:
        m = min(chunk, n - pos)
        keys = logp[None, :] + rng.gumbel(size=(m, p.size))
        if k == 1:
            idx = np.argmax(keys, axis=1)[:, None]
        else:
            idx = np.argpartition(keys, -k, axis=1)[:, -k:]
        out[pos : pos + m] = np.sort(idx, axis=1)
        pos += m
    return out


def _generate_fast(rng, spec, params, probs, total_tokens):
    """Independent path: one vectorized draw per layer."""
    per_layer = [
        _gumbel_topk(rng, probs[li], total_tokens, spec.top_k)
        for li in range(spec.num_moe_layers)
    ]
    return np.stack(per_layer, axis=1)  # (tokens, layers, k)


def _generate_sequential(rng, spec, params, probs, tokens_per_req):
    """Markov path honoring stickiness and layer_coupling, one request at a time."""
    E = spec.num_experts
    k = spec.top_k
    L = spec.num_moe_layers
    cums = [np.cumsum(probs[li]) for li in range(L)]
    # fixed successor table: succ[li][e] answers "layer li-1 chose e, what next"
    succ = [None] + [rng.choice(E, size=E, p=probs[li]) for li in range(1, L)]
    by_pop = [np.argsort(-probs[li], kind="stable") for li in range(L)]

    def draw_pop(li: int) -> int:
        return min(int(np.searchsorted(cums[li], rng.random(), side="right")), E - 1)

    all_reqs = np.empty((params.num_requests, tokens_per_req, L, k), dtype=np.int64)
    for r in range(params.num_requests):
        prev_tok: list[np.ndarray | None] = [None] * L
        for t in range(tokens_per_req):
            cur: list[np.ndarray] = []
            for li in range(L):
                sel: list[int] = []
                if prev_tok[li] is not None and params.stickiness > 0.0:
                    kept = prev_tok[li][rng.random(k) < params.stickiness]
                    sel.extend(int(e) for e in kept)
                attempts = 0
                while len(sel) < k:
                    if (
                        li > 0
                        and params.layer_coupling > 0.0
                        and rng.random() < params.layer_coupling
                    ):
                        cand = int(succ[li][cur[li - 1][rng.integers(k)]])
                    else:
                        cand = draw_pop(li)
                    if cand not in sel:
                        sel.append(cand)
                    attempts += 1
                    if attempts > 200 * k:
                        # degenerate weights; finish deterministically by popularity
                        for e in by_pop[li]:
                            if len(sel) == k:
                                break
                            if int(e) not in sel:
                                sel.append(int(e))
                arr = np.sort(np.asarray(sel, dtype=np.int64))
                cur.append(arr)
                all_reqs[r, t, li] = arr
            prev_tok = cur
    return all_reqs


def generate_synthetic(spec: ModelSpec, params: SynthParams) -> TraceSet:
    """Build a TraceSet of num_requests requests, each prefill_tokens prefill
    tokens followed by tokens_per_request decode tokens."""
    rng = np.random.default_rng(params.seed)
    probs = _layer_popularity(rng, spec, params.zipf_s)
    tokens_per_req = params.prefill_tokens + params.tokens_per_request
    total = params.num_requests * tokens_per_req

    if params.stickiness == 0.0 and params.layer_coupling == 0.0:
        flat = _generate_fast(rng, spec, params, probs, total)
        sels = flat.reshape(params.num_requests, tokens_per_req, spec.num_moe_layers, spec.top_k)
    else:
        sels = _generate_sequential(rng, spec, params, probs, tokens_per_req)

    pad = len(str(params.num_requests - 1))
    requests = []
    for r in range(params.num_requests):
        toks = []
        for t in range(tokens_per_req):
            phase = Phase.PREFILL if t < params.prefill_tokens else Phase.DECODE
            toks.append(
                TokenStep(
                    phase=phase,
                    selections=tuple(tuple(sels[r, t, li].tolist()) for li in range(spec.num_moe_layers)),
                )
            )
        requests.append(RequestTrace(request_id=f"synth-{r:0{pad}d}", tokens=tuple(toks)))
    return TraceSet(model=spec, requests=tuple(requests))
