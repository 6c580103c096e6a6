"""
Routing statistics
==================

Profile a skewed, sticky trace: which experts fire together, how routing
carries over from token to token, and how similar prefill and decode
routing really are. Exports end up as CSVs under demo_out/ so the plots
package can render them.
"""
import numpy as np

from moemesh import (
    ModelSpec,
    SynthParams,
    coactivation_heatmap,
    cross_token_heatmap,
    cumulative_curve,
    cumulative_top_fraction,
    expert_frequency,
    generate_synthetic,
    spearman_rho,
)
from moemesh.profiler import (
    export_curve_csv,
    export_frequency_csv,
    export_heatmap_csv,
    stat_filename,
)

spec = ModelSpec(
    name="demo",
    num_layers=8,
    moe_layer_ids=(1, 3, 5, 7),
    num_experts=32,
    top_k=4,
    expert_bytes=1 << 20,
    activation_bytes=512,
    flops_per_token_per_expert=2e6,
)
ts = generate_synthetic(
    spec,
    SynthParams(
        num_requests=128, tokens_per_request=32, prefill_tokens=16,
        zipf_s=1.1, stickiness=0.6, seed=7,
    ),
)

layer = 0

# pairs that fire together far more often than uniform chance
co = coactivation_heatmap(ts, layer)
hot = np.unravel_index(np.argmax(co.values), co.values.shape)
print(f"strongest coactivation: experts {hot[0]} and {hot[1]} at "
      f"{co.values[hot]:.1f}x uniform chance")

# token-to-token stickiness shows up as a heavy diagonal
ct = cross_token_heatmap(ts, layer)
diag = np.diag(ct.values)[ct.row_support > 0]
print(f"P(expert stays active next token): mean {diag.mean():.2f}")

# a few hot experts soak up most of the traffic
fv = expert_frequency(ts, layer)
share = cumulative_top_fraction(fv.counts, 0.25)
print(f"top 25% of experts serve {share:.1%} of activations")

# prefill and decode route alike here; rho near 1 says one profile works
# for both phases
rho = spearman_rho(
    expert_frequency(ts, layer, phase="prefill").counts,
    expert_frequency(ts, layer, phase="decode").counts,
)
print(f"prefill vs decode frequency rank correlation: {rho:.3f}")

outdir = "demo_out"
export_heatmap_csv(co, f"{outdir}/{stat_filename(spec.name, 'coactivation', layer, 'both')}")
export_heatmap_csv(ct, f"{outdir}/{stat_filename(spec.name, 'cross_token', layer, 'both')}")
export_frequency_csv(fv, f"{outdir}/{stat_filename(spec.name, 'frequency', layer, 'both')}")
export_curve_csv(
    cumulative_curve(fv.counts),
    f"{outdir}/{stat_filename(spec.name, 'cumulative', layer, 'both')}",
)
print(f"wrote 4 CSVs to {outdir}/")
