"""Brute-force reference implementations for the test suite.

Everything here is written against plain Python containers (nested lists,
dicts, tuples) and avoids numpy on purpose: these are slow, obviously-correct
enumerators the fast library code is checked against. Traces are passed in
"plain" form, one request = {"prefill": [tok, ...], "decode": [tok, ...]}
where a token is a list (one entry per MoE layer) of expert-id tuples.
"""
from itertools import combinations, product
import math

__all__ = [
    "to_plain",
    "scope_tokens",
    "adjacent_pairs",
    "o_cross_layer",
    "o_cross_token",
    "o_coactivation",
    "o_frequency",
    "o_conditional",
    "o_spearman_closed",
    "o_spearman_avg_rank",
    "o_lru_replay",
    "o_best_max_cost",
    "o_assignment_cost",
]


def to_plain(ts):
    """TraceSet -> plain list of {"prefill": [...], "decode": [...]} dicts."""
    out = []
    for req in ts:
        out.append(
            {
                "prefill": [list(t.selections) for t in req.prefill],
                "decode": [list(t.selections) for t in req.decode],
            }
        )
    return out


def scope_tokens(req, phase):
    if phase == "prefill":
        return list(req["prefill"])
    if phase == "decode":
        return list(req["decode"])
    if phase == "both":
        return list(req["prefill"]) + list(req["decode"])
    raise ValueError(phase)


def adjacent_pairs(req, phase):
    """(prev, cur) token pairs in scope. Within "both" the prefill->decode
    boundary pair is included; within a single phase pairs stay inside it."""
    toks = scope_tokens(req, phase)
    return [(toks[t], toks[t + 1]) for t in range(len(toks) - 1)]


def _zeros(n):
    return [[0 for _ in range(n)] for _ in range(n)]


def o_cross_layer(reqs, num_experts, from_layer, phase="both"):
    """counts[i][j]: token selected i at from_layer and j at from_layer+1.
    Returns (counts, row_support)."""
    counts = _zeros(num_experts)
    support = [0] * num_experts
    for req in reqs:
        for tok in scope_tokens(req, phase):
            a, b = tok[from_layer], tok[from_layer + 1]
            for i in a:
                support[i] += 1
                for j in b:
                    counts[i][j] += 1
    return counts, support


def o_cross_token(reqs, num_experts, layer, phase="both"):
    """counts[i][j]: expert i at token t, expert j at token t+1, same layer."""
    counts = _zeros(num_experts)
    support = [0] * num_experts
    for req in reqs:
        for prev, cur in adjacent_pairs(req, phase):
            a, b = prev[layer], cur[layer]
            for i in a:
                support[i] += 1
                for j in b:
                    counts[i][j] += 1
    return counts, support


def o_coactivation(reqs, num_experts, layer, phase="both"):
    """Symmetric pair counts: both experts in the same token's selection."""
    sym = _zeros(num_experts)
    tokens = 0
    for req in reqs:
        for tok in scope_tokens(req, phase):
            tokens += 1
            for a, b in combinations(tok[layer], 2):
                sym[a][b] += 1
                sym[b][a] += 1
    return sym, tokens


def o_frequency(reqs, num_experts, layer, phase="both"):
    counts = [0] * num_experts
    for req in reqs:
        for tok in scope_tokens(req, phase):
            for e in tok[layer]:
                counts[e] += 1
    return counts


def o_conditional(counts, support, top_k=None):
    """Row-normalized counts; optionally divided again by top_k."""
    n = len(counts)
    out = [[0.0] * n for _ in range(n)]
    for i in range(n):
        if support[i] == 0:
            continue
        denom = support[i] * (top_k if top_k else 1)
        for j in range(n):
            out[i][j] = counts[i][j] / denom
    return out


def _plain_ranks(xs):
    """1-based ranks, ties averaged."""
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    ranks = [0.0] * len(xs)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def o_spearman_closed(a, b):
    """Tie-free closed form; caller guarantees distinct values per vector."""
    n = len(a)
    ra = _plain_ranks(a)
    rb = _plain_ranks(b)
    d2 = sum((x - y) ** 2 for x, y in zip(ra, rb))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def o_spearman_avg_rank(a, b):
    """Average-rank Spearman = Pearson on tie-averaged ranks; None if flat."""
    ra = _plain_ranks(a)
    rb = _plain_ranks(b)
    n = len(ra)
    ma = sum(ra) / n
    mb = sum(rb) / n
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((x - mb) ** 2 for x in rb)
    if va == 0.0 or vb == 0.0:
        return None
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    return cov / math.sqrt(va * vb)


def o_lru_replay(events, capacity_slots):
    """Replay (kind, key, tick) events over a single-die LRU of fixed slots.

    kind "admit": insert key, evicting the least-recently-used entry when
    full; "touch": refresh key's tick. Returns (resident keys, evictions).
    """
    tick_of = {}
    evicted = []
    for kind, key, tick in events:
        if kind == "touch":
            if key in tick_of:
                tick_of[key] = tick
        elif kind == "admit":
            if key in tick_of:
                raise AssertionError(f"admit of resident key {key}")
            if len(tick_of) >= capacity_slots:
                victim = min(tick_of, key=lambda k: (tick_of[k], k))
                del tick_of[victim]
                evicted.append(victim)
            tick_of[key] = tick
        else:
            raise ValueError(kind)
    return set(tick_of), evicted


def o_assignment_cost(assignment, blocks, ctx):
    """Max per-die accumulated cost of one block->die assignment.

    blocks: list of (expert, tokens, home_counts); ctx supplies the hardware
    and placement: dict with manhattan(a,b), holders(expert) -> [dies],
    expert_bytes, act_bytes, flops, compute, d2d, weights (wc, ww, wa).
    Every block pays its own weight-fetch term when its die holds no copy,
    matching the per-block plan evaluator this oracle is checked against.
    """
    wc, ww, wa = ctx["weights"]
    per_die = {}
    for die, (expert, tokens, home_counts) in zip(assignment, blocks):
        cost = wc * tokens * ctx["flops"] / ctx["compute"]
        holders = ctx["holders"](expert)
        if die not in holders:
            dist = min(ctx["manhattan"](h, die) for h in holders)
            cost += ww * ctx["expert_bytes"] * dist / ctx["d2d"]
        hopsum = sum(c * ctx["manhattan"](h, die) for h, c in home_counts)
        cost += wa * ctx["act_bytes"] * hopsum / ctx["d2d"]
        per_die[die] = per_die.get(die, 0.0) + cost
    return max(per_die.values()) if per_die else 0.0


def o_best_max_cost(blocks, num_dies, ctx):
    """Exhaustive minimum over every block->die assignment of the max per-die
    cost. Exponential; callers keep len(blocks) small."""
    best = math.inf
    for assignment in product(range(num_dies), repeat=len(blocks)):
        c = o_assignment_cost(assignment, blocks, ctx)
        if c < best:
            best = c
    return best
