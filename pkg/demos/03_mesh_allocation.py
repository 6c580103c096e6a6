"""
Placement-aware allocation on a mesh
====================================

One hot expert, one congested die: compare where a placement-ignorant
baseline sends the work against the cost-model allocator.
"""
from moemesh import (
    CostParams,
    DieSpec,
    MeshTopology,
    ModelSpec,
    allocate,
    baseline_allocate,
    plan_cost,
)
from moemesh.placement import initial_round_robin

spec = ModelSpec(
    name="demo",
    num_layers=1,
    moe_layer_ids=(0,),
    num_experts=8,
    top_k=1,
    expert_bytes=8 << 20,
    activation_bytes=1024,
    flops_per_token_per_expert=5e7,
)
die = DieSpec(compute_flops=1e14, dram_bw=2e11, dram_capacity=1 << 30, d2d_bw=1e11)
topo = MeshTopology(x_dies=3, y_dies=3, die=die)
table = initial_round_robin(spec, topo)

# 200 tokens all want expert 0, spread evenly over the mesh; a placement-
# ignorant baseline runs each token at home and fetches weights 200/req_blk
# times, the allocator pulls blocks toward the die that holds the weights
reqs = {0: 200}
token_homes = {0: [t % topo.num_dies for t in range(200)]}

base = baseline_allocate(reqs, token_homes, spec)
params = CostParams(req_blk=50, candidate_dis=2)
smart = allocate(reqs, table, topo, token_homes, params, spec)


def describe(tag, plan):
    per_die = {e.die: e.tokens for e in plan.entries}
    cost = plan_cost(plan, table, topo, params, spec)
    print(f"{tag}: tokens per die {per_die}")
    print(f"       bottleneck die cost {cost.max_die_cost * 1e6:.1f} us, "
          f"total {cost.total_cost * 1e6:.1f} us")


print(f"expert 0 weights live on die {[d for d in range(9) if table.homes[0, 0, d]]}")
describe("baseline ", base)
describe("allocator", smart)
