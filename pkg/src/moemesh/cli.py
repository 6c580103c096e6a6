"""Command line front end.

Subcommands:

  gen        generate a synthetic trace file
  profile    export routing statistics (heatmaps, frequencies, curves, rank
             correlations) as CSV
  simulate   run the kernel simulation for one or more strategies
  compare    join previously written run reports into a comparison CSV

Configuration comes from a YAML file (-c/--config); command line flags
override file values, which override built-in defaults. The output directory
resolves as flag > MOEMESH_OUT environment variable > file > current
directory. A single top-level seed feeds all randomness; every output file
carries the resolved configuration and seed in its header.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from . import engine, profiler
from .allocator import CostParams
from .errors import ConfigError, InvariantError, TraceSchemaError
from .mesh import DieSpec, MeshTopology, PRESETS, preset
from .predictor import PredictorConfig
from .synth import generate_synthetic
from .traceio import load_traces, save_traces
from .traces import ModelSpec, SynthParams, TraceSet

OUTPUT_DIR_ENV = "MOEMESH_OUT"

_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": None,
    "model": None,          # required
    "topology": {"preset": "dojo"},
    "synth": None,
    "trace": None,
    "cost": {},
    "predictor": {},
    "sim": {"batch_size": 32, "strategies": ["base", "allo_only", "pred_only", "allo_pred"],
            "max_steps": None},
    "profile": {"layers": [0], "phases": ["both"],
                "stats": ["cross_layer", "cross_token", "coactivation", "frequency",
                          "cumulative", "spearman"]},
}


def _deep_merge(base: dict, extra: Mapping) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    cfg = dict(_DEFAULTS)
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid YAML: {e}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping at top level")
    unknown = set(data) - set(_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return _deep_merge(cfg, data)


def _build_model(cfg: dict) -> ModelSpec:
    m = cfg.get("model")
    if not m:
        raise ConfigError("config needs a 'model' section")
    try:
        return ModelSpec.from_dict(m)
    except TraceSchemaError as e:
        raise ConfigError(f"bad model section: {e}") from None


def _cfg_float(val, name: str) -> float:
    # YAML 1.1 reads "1.0e7" (no sign after e) as a string; be forgiving
    # about the representation, strict about the value
    try:
        return float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {val!r}") from None


def _cfg_int(val, name: str) -> int:
    f = _cfg_float(val, name)
    if f != int(f):
        raise ConfigError(f"{name} must be an integer, got {val!r}")
    return int(f)


def _build_die(d: Mapping, base: DieSpec) -> DieSpec:
    return DieSpec(
        compute_flops=_cfg_float(d.get("compute_flops", base.compute_flops), "die.compute_flops"),
        dram_bw=_cfg_float(d.get("dram_bw", base.dram_bw), "die.dram_bw"),
        dram_capacity=_cfg_int(d.get("dram_capacity", base.dram_capacity), "die.dram_capacity"),
        d2d_bw=_cfg_float(d.get("d2d_bw", base.d2d_bw), "die.d2d_bw"),
        reserved_cache_fraction=_cfg_float(
            d.get("reserved_cache_fraction", base.reserved_cache_fraction),
            "die.reserved_cache_fraction",
        ),
    )


def _build_topology(cfg: dict) -> MeshTopology:
    t = cfg.get("topology") or {}
    if "preset" in t and t["preset"] is not None:
        topo = preset(t["preset"])
        die_over = t.get("die") or {}
        dims_over = {k: t[k] for k in ("x_dies", "y_dies") if k in t}
        if die_over or dims_over:
            topo = MeshTopology(
                x_dies=_cfg_int(dims_over.get("x_dies", topo.x_dies), "topology.x_dies"),
                y_dies=_cfg_int(dims_over.get("y_dies", topo.y_dies), "topology.y_dies"),
                die=_build_die(die_over, topo.die),
            )
        return topo
    needed = {"x_dies", "y_dies", "die"}
    if not needed <= set(t):
        raise ConfigError(
            f"topology needs either a preset ({sorted(PRESETS)}) or x_dies/y_dies/die"
        )
    d = t["die"]
    for field in ("compute_flops", "dram_bw", "dram_capacity", "d2d_bw"):
        if field not in d:
            raise ConfigError(f"topology.die missing field {field!r}")
    default = DieSpec(
        compute_flops=1.0, dram_bw=1.0, dram_capacity=1, d2d_bw=1.0,
        reserved_cache_fraction=0.10,
    )
    return MeshTopology(
        x_dies=_cfg_int(t["x_dies"], "topology.x_dies"),
        y_dies=_cfg_int(t["y_dies"], "topology.y_dies"),
        die=_build_die(d, default),
    )


def _build_synth_params(cfg: dict) -> SynthParams:
    s = cfg.get("synth")
    if not s:
        raise ConfigError("this command needs a 'synth' section (or a trace path)")
    if "seed" in s:
        raise ConfigError("synth.seed is not allowed; all randomness flows from the top-level seed")
    try:
        return SynthParams(
            num_requests=int(s["num_requests"]),
            tokens_per_request=int(s["tokens_per_request"]),
            zipf_s=float(s.get("zipf_s", 1.0)),
            stickiness=float(s.get("stickiness", 0.0)),
            layer_coupling=float(s.get("layer_coupling", 0.0)),
            seed=int(cfg["seed"]),
            prefill_tokens=int(s.get("prefill_tokens", 0)),
        )
    except KeyError as e:
        raise ConfigError(f"synth section missing field {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigError(f"bad synth section: {e}") from None


def _resolve_outdir(cfg: dict, flag_value: str | None) -> Path:
    if flag_value:
        out = flag_value
    elif os.environ.get(OUTPUT_DIR_ENV):
        out = os.environ[OUTPUT_DIR_ENV]
    elif cfg.get("output_dir"):
        out = cfg["output_dir"]
    else:
        out = "."
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _trace_source(cfg: dict, spec: ModelSpec) -> TraceSet:
    """Exactly one of trace.path / synth must be configured."""
    trace = cfg.get("trace") or {}
    path = trace.get("path")
    synth = cfg.get("synth")
    if path and synth:
        raise ConfigError("specify the trace source exactly once: either trace.path or synth")
    if path:
        ts = load_traces(path, spec)
        return ts
    if synth:
        return generate_synthetic(spec, _build_synth_params(cfg))
    raise ConfigError("no trace source: set trace.path or a synth section")


def _config_meta(cfg: dict) -> dict:
    return {
        "config": json.dumps(_jsonable(cfg), sort_keys=True),
        "seed": cfg["seed"],
    }


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


# --- subcommands ------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    for key, name in (("requests", "num_requests"), ("tokens", "tokens_per_request"),
                      ("prefill", "prefill_tokens")):
        val = getattr(args, key)
        if val is not None:
            cfg["synth"] = dict(cfg.get("synth") or {})
            cfg["synth"][name] = val
    spec = _build_model(cfg)
    params = _build_synth_params(cfg)
    outdir = _resolve_outdir(cfg, args.out_dir)
    ts = generate_synthetic(spec, params)
    path = Path(args.out) if args.out else outdir / f"{spec.name}_trace.jsonl"
    if not path.is_absolute() and args.out:
        path = outdir / path
    save_traces(ts, path, extra_header={"meta": _config_meta(cfg)})
    n_tokens = sum(len(r.tokens) for r in ts)
    print(f"wrote {path}: {len(ts)} requests, {n_tokens} tokens, "
          f"E={spec.num_experts}, top_k={spec.top_k}, moe_layers={spec.num_moe_layers}")
    return 0


def _profile_layers(cfg: dict, spec: ModelSpec) -> list[int]:
    layers = [_cfg_int(l, "profile.layers") for l in cfg["profile"].get("layers", [0])]
    for l in layers:
        if not (0 <= l < spec.num_moe_layers):
            raise ConfigError(f"profile layer {l} out of range [0, {spec.num_moe_layers})")
    return layers


def cmd_profile(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trace:
        cfg["trace"] = {"path": args.trace}
        cfg["synth"] = None
    if args.layers:
        cfg["profile"]["layers"] = [_cfg_int(x, "--layers") for x in args.layers.split(",")]
    if args.phases:
        cfg["profile"]["phases"] = args.phases.split(",")
    spec = _build_model(cfg)
    ts = _trace_source(cfg, spec)
    outdir = _resolve_outdir(cfg, args.out_dir)
    meta = _config_meta(cfg)
    layers = _profile_layers(cfg, spec)
    phases = cfg["profile"]["phases"]
    stats = cfg["profile"]["stats"]
    name = spec.name
    written: list[Path] = []

    for layer in layers:
        for phase in phases:
            if "cross_token" in stats:
                hm = profiler.cross_token_heatmap(ts, layer, phase)
                p = outdir / profiler.stat_filename(name, "cross_token", layer, phase)
                profiler.export_heatmap_csv(hm, p, extra_meta=meta)
                written.append(p)
            if "cross_layer" in stats and layer < spec.num_moe_layers - 1:
                hm = profiler.cross_layer_heatmap(ts, layer, phase)
                p = outdir / profiler.stat_filename(name, "cross_layer", layer, phase)
                profiler.export_heatmap_csv(hm, p, extra_meta=meta)
                written.append(p)
            if "coactivation" in stats and spec.top_k >= 2:
                hm = profiler.coactivation_heatmap(ts, layer, phase)
                p = outdir / profiler.stat_filename(name, "coactivation", layer, phase)
                profiler.export_heatmap_csv(hm, p, extra_meta=meta)
                written.append(p)
            if "frequency" in stats:
                fv = profiler.expert_frequency(ts, layer, phase)
                p = outdir / profiler.stat_filename(name, "frequency", layer, phase)
                profiler.export_frequency_csv(fv, p, extra_meta=meta)
                written.append(p)
            if "cumulative" in stats:
                fv = profiler.expert_frequency(ts, layer, phase)
                if fv.counts.sum() > 0:
                    curve = profiler.cumulative_curve(fv)
                    p = outdir / profiler.stat_filename(name, "cumulative", layer, phase)
                    profiler.export_curve_csv(curve, p, extra_meta=meta)
                    written.append(p)

    if "spearman" in stats:
        p = outdir / profiler.stat_filename(name, "spearman", None, "both")
        with open(p, "w", encoding="utf-8") as fh:
            for k, v in meta.items():
                fh.write(f"# {k}={v}\n")
            fh.write("layer,cross_layer_rho,cross_token_rho\n")
            for layer in range(spec.num_moe_layers):
                cells = []
                if layer < spec.num_moe_layers - 1:
                    a = profiler.cross_layer_heatmap(ts, layer, "prefill", kind="counts")
                    b = profiler.cross_layer_heatmap(ts, layer, "decode", kind="counts")
                    rho = profiler.spearman_rho(a, b)
                    cells.append("undefined" if rho is None else repr(rho))
                else:
                    cells.append("")
                a = profiler.cross_token_heatmap(ts, layer, "prefill", kind="counts")
                b = profiler.cross_token_heatmap(ts, layer, "decode", kind="counts")
                rho = profiler.spearman_rho(a, b)
                cells.append("undefined" if rho is None else repr(rho))
                fh.write(f"{layer},{cells[0]},{cells[1]}\n")
        written.append(p)

    for p in written:
        print(f"wrote {p}")
    return 0


def _sim_config(cfg: dict, spec: ModelSpec, topo: MeshTopology, strategy: str) -> engine.SimConfig:
    sim = cfg["sim"]
    cost_d = cfg.get("cost") or {}
    pred_d = cfg.get("predictor") or {}
    try:
        cost = CostParams(**cost_d)
        pred = PredictorConfig(**pred_d)
    except TypeError as e:
        raise ConfigError(f"bad cost/predictor section: {e}") from None
    max_steps = sim.get("max_steps")
    return engine.SimConfig(
        topo=topo,
        model=spec,
        strategy=strategy,
        batch_size=_cfg_int(sim["batch_size"], "sim.batch_size"),
        cost=cost,
        predictor=pred,
        seed=_cfg_int(cfg["seed"], "seed"),
        max_steps=None if max_steps is None else _cfg_int(max_steps, "sim.max_steps"),
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trace:
        cfg["trace"] = {"path": args.trace}
        cfg["synth"] = None
    if args.batch_size is not None:
        cfg["sim"]["batch_size"] = args.batch_size
    if args.strategies:
        cfg["sim"]["strategies"] = args.strategies.split(",")
    spec = _build_model(cfg)
    topo = _build_topology(cfg)
    strategies = cfg["sim"]["strategies"]
    if not strategies:
        raise ConfigError("sim.strategies must name at least one strategy")
    ts = _trace_source(cfg, spec)
    outdir = _resolve_outdir(cfg, args.out_dir)
    meta = _config_meta(cfg)

    reports: dict[str, engine.RunReport] = {}
    for strategy in strategies:
        rep = engine.run(ts, _sim_config(cfg, spec, topo, strategy))
        reports[strategy] = rep
        jp = outdir / f"{spec.name}_run_{strategy}.json"
        engine.export_report_json(rep, jp)
        kp = outdir / f"{spec.name}_kernels_{strategy}.csv"
        engine.export_kernels_csv(rep, kp, meta=meta)
        print(f"{strategy}: throughput={rep.throughput_tokens_per_s:.1f} tok/s, "
              f"hops={rep.total_hops}, wrote {jp}")
    if "base" in reports and len(reports) > 1:
        rows = engine.compare(reports)
        cp = outdir / f"{spec.name}_comparison.csv"
        engine.export_comparison_csv(rows, cp, meta=meta)
        print(f"wrote {cp}")
    return 0


def _report_from_json(path: str | Path) -> engine.RunReport:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise TraceSchemaError(f"report file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise TraceSchemaError(f"{path} is not valid JSON: {e}") from None
    try:
        kernels = tuple(
            engine.KernelResult(
                step=k["step"], layer=k["layer"], makespan_s=k["makespan_s"],
                hop_count=k["hop_count"],
                dram_local_read_bytes=k["dram_local_read_bytes"],
                dram_remote_read_bytes=k["dram_remote_read_bytes"],
                dram_local_write_bytes=k["dram_local_write_bytes"],
            )
            for k in d["kernels"]
        )
        pred = d.get("predictor", {})
        rep = engine.RunReport(
            strategy=d["strategy"],
            config=d["config"],
            kernels=kernels,
            total_generated_tokens=d["total_generated_tokens"],
            total_makespan_s=d["total_makespan_s"],
            throughput_tokens_per_s=d["throughput_tokens_per_s"],
            total_hops=d["total_hops"],
            dram_local_read_bytes=d["dram_local_read_bytes"],
            dram_remote_read_bytes=d["dram_remote_read_bytes"],
            dram_local_write_bytes=d["dram_local_write_bytes"],
            predictor_stats=engine.PredictorStats(
                predictions=pred.get("predictions", 0),
                admissions=pred.get("admissions", 0),
                evictions=pred.get("evictions", 0),
                dup_hit_entries=pred.get("dup_hit_entries", 0),
                remote_entries=pred.get("remote_entries", 0),
            ),
        )
    except KeyError as e:
        raise TraceSchemaError(f"{path}: report missing field {e.args[0]!r}") from None
    rep.validate()
    return rep


def cmd_compare(args: argparse.Namespace) -> int:
    reports = {}
    for path in args.reports:
        rep = _report_from_json(path)
        if rep.strategy in reports:
            raise ConfigError(f"duplicate report for strategy {rep.strategy!r}")
        reports[rep.strategy] = rep
    rows = engine.compare(reports)
    out = Path(args.out) if args.out else Path("comparison.csv")
    seed = reports.get("base").config.get("seed") if "base" in reports else None
    meta = {"config": json.dumps(reports["base"].config, sort_keys=True), "seed": seed}
    engine.export_comparison_csv(rows, out, meta=meta)
    print(f"wrote {out}")
    for r in rows:
        red = "n/a" if r.hop_reduction_vs_base is None else f"{r.hop_reduction_vs_base:.2f}x"
        print(f"{r.strategy}: {r.throughput_ratio_vs_base:.2f}x throughput, hop reduction {red}")
    return 0


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="moemesh",
        description="Trace-driven MoE serving analysis and mesh simulation",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("-c", "--config", help="YAML config file")
        p.add_argument("-o", "--out-dir", help=f"output directory (or ${OUTPUT_DIR_ENV})")
        p.add_argument("--seed", type=int, help="override the config seed")

    g = sub.add_parser("gen", help="generate a synthetic trace")
    common(g)
    g.add_argument("--requests", type=int, help="override synth.num_requests")
    g.add_argument("--tokens", type=int, help="override synth.tokens_per_request")
    g.add_argument("--prefill", type=int, help="override synth.prefill_tokens")
    g.add_argument("--out", help="trace file name (default <model>_trace.jsonl)")
    g.set_defaults(fn=cmd_gen)

    p = sub.add_parser("profile", help="export routing statistics as CSV")
    common(p)
    p.add_argument("--trace", help="trace file (overrides config trace source)")
    p.add_argument("--layers", help="comma-separated MoE layer positions")
    p.add_argument("--phases", help="comma-separated phases (prefill,decode,both)")
    p.set_defaults(fn=cmd_profile)

    s = sub.add_parser("simulate", help="run the kernel simulation")
    common(s)
    s.add_argument("--trace", help="trace file (overrides config trace source)")
    s.add_argument("--batch-size", type=int, help="override sim.batch_size")
    s.add_argument("--strategies", help="comma-separated strategies to run")
    s.set_defaults(fn=cmd_simulate)

    c = sub.add_parser("compare", help="combine run report JSONs into a comparison CSV")
    c.add_argument("reports", nargs="+", help="run report JSON files")
    c.add_argument("--out", help="output CSV path (default comparison.csv)")
    c.set_defaults(fn=cmd_compare)

    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (TraceSchemaError, FileNotFoundError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except InvariantError as e:
        print(f"internal invariant violation: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
