import pytest

from moemesh import ModelSpec, SynthParams, generate_synthetic


@pytest.fixture(scope="session")
def tiny_spec():
    # deliberately small: E=8, top_k=2, 4 MoE layers out of 6
    return ModelSpec(
        name="tiny",
        num_layers=6,
        moe_layer_ids=(1, 2, 4, 5),
        num_experts=8,
        top_k=2,
        expert_bytes=1024,
        activation_bytes=64,
        flops_per_token_per_expert=1e6,
    )


@pytest.fixture(scope="session")
def tiny_trace(tiny_spec):
    # 8 tokens per request: 3 prefill + 5 decode
    params = SynthParams(
        num_requests=10,
        tokens_per_request=5,
        prefill_tokens=3,
        zipf_s=0.8,
        stickiness=0.4,
        layer_coupling=0.3,
        seed=1234,
    )
    return generate_synthetic(tiny_spec, params)
