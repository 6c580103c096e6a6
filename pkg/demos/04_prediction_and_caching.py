"""
Predicting the next token's experts
===================================

Feed a sticky trace through the online transition heatmap and watch the
predictor warm up: hit rate on the very next token, and how admissions
into each die's duplicate cache taper off once the hot set is resident.
"""
import numpy as np

from moemesh import (
    DuplicationState,
    ExpertDistributionTable,
    ModelSpec,
    OnlineHeatmapState,
    PredictionTable,
    PredictorConfig,
    SynthParams,
    duplication_decisions,
    generate_synthetic,
    observe_transition,
    predict_next,
)

spec = ModelSpec(
    name="demo",
    num_layers=2,
    moe_layer_ids=(0, 1),
    num_experts=32,
    top_k=4,
    expert_bytes=2,
    activation_bytes=1,
    flops_per_token_per_expert=1.0,
)
ts = generate_synthetic(
    spec,
    SynthParams(num_requests=16, tokens_per_request=64, zipf_s=1.0, stickiness=0.7, seed=3),
)

cfg = PredictorConfig(top_n=4)
hm = OnlineHeatmapState.zeros(spec.num_moe_layers, spec.num_experts)

# single observing die: every expert homes on die 1, die 0 caches up to 12
homes = np.zeros((spec.num_moe_layers, spec.num_experts, 2), dtype=bool)
homes[:, :, 1] = True
table = ExpertDistributionTable(homes=homes, duplicates=np.zeros_like(homes))
state = DuplicationState(num_dies=2, capacity_bytes=24, expert_bytes=2)
pt = PredictionTable.zeros(2, spec.num_moe_layers, spec.num_experts)

hits = total = 0
admissions = []
for step in range(63):
    step_adm = 0
    for li in range(spec.num_moe_layers):
        prev = {e for r in ts.requests for e in r.tokens[step].selections[li]}
        cur = {e for r in ts.requests for e in r.tokens[step + 1].selections[li]}
        observe_transition(hm, li, prev, cur, cfg)
        preds = predict_next({0: {(li, e) for e in prev}}, hm, cfg)
        got = {e for (_, e) in preds[0]}
        hits += len(got & cur)
        total += len(cur)
        dec = duplication_decisions(preds, {0: preds[0]}, pt, state, table, now=step)
        step_adm += len(dec.admitted[0])
    admissions.append(step_adm)

print(f"next-token prediction hit rate over the run: {hits / total:.2f}")
q = len(admissions) // 4
print(f"cache admissions per step: first quarter {np.mean(admissions[:q]):.1f}, "
      f"last quarter {np.mean(admissions[-q:]):.1f}")
print(f"die 0 ended with {len(state.residents[0])} duplicates "
      f"of {spec.num_experts * spec.num_moe_layers} expert-layers")
