"""moemesh: trace-driven analysis and simulation of mixture-of-experts
serving on multi-die mesh accelerators.

The package splits into a statistics side (traces, profiler) and a systems
side (mesh, placement, allocator, predictor, engine), glued by a CLI.
"""

from .allocator import (
    AllocationPlan,
    CostParams,
    allocate,
    baseline_allocate,
    plan_cost,
)
from .engine import (
    KernelResult,
    RunReport,
    SimConfig,
    STRATEGIES,
    compare,
    kernel_requests,
    run,
    simulate_kernel,
)
from .errors import ConfigError, InvariantError, TraceSchemaError
from .mesh import DieSpec, MeshTopology, preset
from .placement import (
    DuplicationState,
    ExpertDistributionTable,
    admit_duplicate,
    dies_holding,
    initial_round_robin,
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
from .profiler import (
    CumulativeCurve,
    FrequencyVector,
    Heatmap,
    coactivation_heatmap,
    cross_layer_heatmap,
    cross_token_heatmap,
    cumulative_curve,
    cumulative_top_fraction,
    expert_frequency,
    spearman_rho,
)
from .synth import generate_synthetic
from .traceio import iter_requests, load_traces, save_traces
from .traces import (
    ModelSpec,
    Phase,
    RequestTrace,
    SynthParams,
    TokenStep,
    TraceSet,
    filter_by_tag,
)

__version__ = "0.1.0"
