"""Command-line surface for datasets, runs, sweeps, and reports.

Subcommands: generate, run, sweep, decompose, estimate, crossover, cost,
fit. Every command takes a --seed; all randomness below it is derived by
stable hashing, so rerunning a command with the same flags and inputs
reproduces its output byte for byte (pass --normalize-timestamps to pin the
manifest timestamp too). Config files are plain ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from typing import List, Optional

from . import records
from .chunker import plan_chunks
from .costmodel import LatencyCurve, PriceSheet, cost_report
from .degradation import DcLossModel, crossover, fit_power_law, format_model, parse_model
from .estimator import (
    EstimatorConfig,
    estimate_chunk_size,
    exhaustive_search,
    format_chunk_size,
    parse_chunk_size,
    render_report_cell,
)
from .fidelity import DecomposedScores, LossBreakdown, classify_regime, measure_triple, to_losses
from .llm_client import EndpointConfig
from .orchestrator import PipelineConfig, run_pipeline, run_single
from .seeds import derive_seed
from .tasks import MetricKind, gen_alias_chain, gen_kv, gen_math
from .workers import LiveBackend, NoisyBackend, OracleBackend


class CliError(ValueError):
    pass


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed; all randomness derives from it")
    common.add_argument("--out", help="output file path")
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--normalize-timestamps", action="store_true",
                        help="pin manifest timestamps for byte-exact comparisons")

    parser = argparse.ArgumentParser(prog="chunklab",
                                     description="divide and conquer pipelines over long inputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a JSONL dataset")
    p.add_argument("--task", choices=["kv", "math", "alias_chain"], required=True)
    p.add_argument("--n", type=int, required=True, help="instance count")
    p.add_argument("--pairs", type=int, default=1000, help="kv: key:value pair count")
    p.add_argument("--aligned", action=argparse.BooleanOptionalAction, default=True,
                   help="kv: one token per pair (aligned) or two (unaligned)")
    p.add_argument("--count", type=int, default=1000, help="math: list length")
    p.add_argument("--k", type=int, default=1, help="math: order statistic rank")
    p.add_argument("--direction", choices=["smallest", "largest"], default="smallest")
    p.add_argument("--sigma", type=float, default=1e6, help="math: Gaussian scale")
    p.add_argument("--chain-length", type=int, default=16, help="alias_chain: name count")
    p.add_argument("--filler-tokens", type=int, default=1000)
    p.add_argument("--budget", type=int, default=None, help="alias_chain: artifact budget")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", parents=[common], help="run pipelines over a dataset")
    _add_run_flags(p)
    p.add_argument("--dc", action="store_true", help="run the divide and conquer pipeline")
    p.add_argument("--single", action="store_true", help="run the whole-input baseline")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="score curve over chunk sizes (CSV)")
    _add_run_flags(p, chunk_size=False)
    p.add_argument("--chunk-sizes", required=True,
                   help="comma list, K suffix allowed: 1K,2K,4096")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decompose", parents=[common], help="stage-loss report over a results file")
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("estimate", parents=[common], help="pick a chunk size by sparse sampling")
    _add_run_flags(p, chunk_size=False)
    p.add_argument("--candidates", required=True, help="comma list of chunk sizes")
    p.add_argument("--budget-m", type=int, default=5)
    p.add_argument("--tie-break", choices=["larger", "smaller"], default="larger")
    p.add_argument("--exhaustive", action="store_true",
                   help="evaluate every instance instead of sampling")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("crossover", parents=[common],
                       help="first length where single-pass loss exceeds pipeline loss for good")
    p.add_argument("--strong", required=True, help="model spec, e.g. powerlaw:1e-6,2")
    p.add_argument("--chunk-size", type=parse_chunk_size, required=True)
    p.add_argument("--unit-loss", type=float, default=0.0, help="per-chunk unit loss")
    p.add_argument("--overhead-slope", type=float, default=0.0)
    p.add_argument("--overhead-intercept", type=float, default=0.0)
    p.add_argument("--search-max", type=parse_chunk_size, default=None)
    p.set_defaults(func=cmd_crossover)

    p = sub.add_parser("cost", parents=[common], help="predicted latency and price comparison")
    p.add_argument("--total-length", type=parse_chunk_size, required=True)
    p.add_argument("--chunk-count", type=int, required=True)
    p.add_argument("--l-agg", type=int, required=True)
    p.add_argument("--final-output-tokens", type=int, required=True)
    p.add_argument("--worker-output-total", type=int, required=True)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("fit", parents=[common], help="fit a power law to (length, error) points")
    p.add_argument("--points", help="comma list of length:error pairs")
    p.add_argument("--points-file", help="CSV with header length,error")
    p.set_defaults(func=cmd_fit)
    return parser


def _add_run_flags(p: argparse.ArgumentParser, chunk_size: bool = True) -> None:
    p.add_argument("--dataset", required=True)
    if chunk_size:
        p.add_argument("--chunk-size", type=parse_chunk_size, default=1024)
    p.add_argument("--overlap", type=int, default=0)
    p.add_argument("--tokenizer", choices=["whitespace"], default="whitespace")
    p.add_argument("--metric", choices=[m.value for m in MetricKind], default="exact_match")
    p.add_argument("--max-parallel", type=int, default=1)
    for role in ("worker", "manager"):
        p.add_argument(f"--{role}", choices=["oracle", "noisy", "live"], default="oracle")
        p.add_argument(f"--{role}-model", help=f"degradation model for a noisy {role}")
        p.add_argument(f"--{role}-seed", type=int, default=None)


# ---------------------------------------------------------------------------
# Shared helpers


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"bad config line {raw!r}, expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def build_backend(role: str, args, cfg: dict):
    choice = getattr(args, role)
    if choice == "oracle":
        return OracleBackend()
    if choice == "noisy":
        model_text = getattr(args, f"{role}_model") or cfg.get(f"{role}_model")
        if not model_text:
            raise CliError(f"--{role}-model is required when --{role} noisy")
        seed = getattr(args, f"{role}_seed")
        if seed is None:
            seed = derive_seed(args.seed, role, "backend")
        return NoisyBackend(parse_model(model_text), seed)
    missing = [k for k in ("base_url", "model_name") if k not in cfg]
    if missing:
        raise CliError(f"live backends need config keys: {', '.join(missing)}")
    endpoint = EndpointConfig(
        base_url=cfg["base_url"],
        model_name=cfg["model_name"],
        api_key_env=cfg.get("api_key_env", "CHUNKLAB_API_KEY"),
        timeout=float(cfg.get("timeout", 60.0)),
        max_retries=int(cfg.get("max_retries", 3)),
        max_concurrent=int(cfg.get("max_concurrent", 4)),
    )
    style = cfg.get("prompt_style", "manual") if role == "manager" else "manual"
    return LiveBackend(endpoint, style)


def _manifest_config(args) -> dict:
    skip = {"func", "command", "normalize_timestamps", "out", "config", "seed", "dataset"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _require_out(args) -> str:
    if not args.out:
        raise CliError("this command needs --out")
    return args.out


def _size_list(text: str) -> List[int]:
    sizes = [parse_chunk_size(part) for part in text.split(",") if part.strip()]
    if not sizes:
        raise CliError("empty chunk size list")
    return sizes


def _print_json(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


# ---------------------------------------------------------------------------
# Commands


def cmd_generate(args) -> int:
    out = _require_out(args)
    instances = []
    for i in range(args.n):
        inst_seed = derive_seed(args.seed, "instance", i)
        if args.task == "kv":
            instances.append(gen_kv(args.pairs, inst_seed, aligned=args.aligned))
        elif args.task == "math":
            instances.append(
                gen_math(args.count, args.k, args.direction, inst_seed, sigma=args.sigma)
            )
        else:
            instances.append(
                gen_alias_chain(args.chain_length, args.filler_tokens, inst_seed,
                                artifact_budget=args.budget)
            )
    manifest = records.new_manifest(
        "generate", _manifest_config(args), args.seed, None, [out],
        args.normalize_timestamps,
    )
    records.write_jsonl(out, manifest, (records.instance_record(i) for i in instances))
    print(f"wrote {len(instances)} instances to {out}")
    return 0


def cmd_run(args) -> int:
    out = _require_out(args)
    if not args.dc and not args.single:
        args.dc = True
    cfg = load_config(args.config)
    worker = build_backend("worker", args, cfg)
    manager = build_backend("manager", args, cfg)
    metric = MetricKind(args.metric)
    instances = records.instances_from_file(args.dataset)

    completed = set()
    if os.path.exists(out):
        _, rows = records.read_jsonl(out)
        completed = {r["instance_id"] for r in rows if r.get("record") == "run"}
    else:
        manifest = records.new_manifest(
            "run", _manifest_config(args), args.seed, args.dataset, [out],
            args.normalize_timestamps,
        )
        records.write_jsonl(out, manifest, [])

    ran = skipped = 0
    new_rows = []
    for instance in instances:
        if records.instance_id(instance) in completed:
            skipped += 1
            continue
        single = run_single(instance, worker, metric) if args.single else None
        if args.dc:
            pipeline_cfg = PipelineConfig(
                plan=plan_chunks(instance.total_length, args.chunk_size, args.overlap),
                worker=worker,
                manager=manager,
                max_parallel_workers=args.max_parallel,
                metric=metric,
            )
            run = run_pipeline(instance, pipeline_cfg)
            new_rows.append(records.run_record(instance, run, single))
        else:
            answer, error = single
            new_rows.append({
                "record": "run",
                "instance_id": records.instance_id(instance),
                "kind": instance.kind.value,
                "instance_seed": instance.seed,
                "total_length": instance.total_length,
                "metric": metric.value,
                "worker": records.describe_backend(worker),
                "status": "ok",
                "scores": None,
                "single_answer": answer,
                "single_error": error,
                "single_score": 1.0 - error,
            })
        ran += 1
    records.append_jsonl(out, new_rows)
    print(f"ran {ran} instances, skipped {skipped} already in {out}")
    return 0


def cmd_sweep(args) -> int:
    out = _require_out(args)
    cfg = load_config(args.config)
    worker = build_backend("worker", args, cfg)
    manager = build_backend("manager", args, cfg)
    metric = MetricKind(args.metric)
    instances = records.instances_from_file(args.dataset)
    if not instances:
        raise CliError(f"no instances in {args.dataset}")

    header = ["chunk_size", "n", "mean_score", "mean_l_task", "mean_l_agg",
              "mean_l_model", "mean_l_sys", "regime", "regime_indeterminate"]
    rows = []
    for size in _size_list(args.chunk_sizes):
        scores = []
        losses = []
        for instance in instances:
            pipeline_cfg = PipelineConfig(
                plan=plan_chunks(instance.total_length, size, args.overlap),
                worker=worker,
                manager=manager,
                max_parallel_workers=args.max_parallel,
                metric=metric,
            )
            run = run_pipeline(instance, pipeline_cfg)
            if run.status != "ok":
                continue
            rec = records.run_record(instance, run)
            scores.append(rec["dc_score"])
            if rec["losses"] is not None:
                losses.append(rec["losses"])
        if not scores:
            raise CliError(f"every run failed at chunk size {size}")
        mean_score = sum(scores) / len(scores)
        if losses:
            mean = {k: sum(l[k] for l in losses) / len(losses)
                    for k in ("l_task", "l_agg", "l_model")}
            breakdown = LossBreakdown(mean["l_task"], mean["l_agg"], mean["l_model"],
                                      mean["l_task"] + mean["l_agg"] + mean["l_model"])
            call = classify_regime(breakdown)
            rows.append([size, len(scores), mean_score, breakdown.l_task,
                         breakdown.l_agg, breakdown.l_model, breakdown.l_sys,
                         call.label.value, call.indeterminate])
        else:
            rows.append([size, len(scores), mean_score, "", "", "", "", "", ""])
    records.write_curve_csv(out, header, rows)
    for row in rows:
        print(f"chunk {row[0]:>8}: mean score {row[2]:.4f} over {row[1]} runs")
    print(f"wrote {out}")
    return 0


def cmd_decompose(args) -> int:
    _, rows = records.read_jsonl(args.results)
    runs = [r for r in rows if r.get("record") == "run"]
    if not runs:
        raise CliError(f"no run records in {args.results}")
    lacking = sum(1 for r in runs if r.get("scores") is None)
    if lacking:
        raise CliError(
            f"{lacking} of {len(runs)} runs lack ladder scores (live mode?); "
            "decompose needs simulator-mode records"
        )
    grouped: dict = {}
    for r in runs:
        grouped.setdefault(r["kind"], []).append(r)
    report_rows = []
    for kind in sorted(grouped):
        group = grouped[kind]
        triples = []
        clamped = 0
        for r in group:
            measured = measure_triple(DecomposedScores(**r["scores"]))
            triples.append(measured.triple)
            clamped += bool(measured.clamped_stages)
        mean = {
            "l_task": sum(to_losses(t).l_task for t in triples) / len(triples),
            "l_agg": sum(to_losses(t).l_agg for t in triples) / len(triples),
            "l_model": sum(to_losses(t).l_model for t in triples) / len(triples),
        }
        breakdown = LossBreakdown(mean["l_task"], mean["l_agg"], mean["l_model"],
                                  mean["l_task"] + mean["l_agg"] + mean["l_model"])
        call = classify_regime(breakdown)
        report_rows.append({
            "record": "report",
            "report_type": "decompose",
            "kind": kind,
            "runs": len(group),
            "clamped_runs": clamped,
            "mean_losses": {**mean, "l_sys": breakdown.l_sys},
            "regime": call.label.value,
            "regime_indeterminate": call.indeterminate,
        })
        print(f"{kind}: {len(group)} runs, regime {call.label.value}"
              f"{' (indeterminate)' if call.indeterminate else ''}, "
              f"mean l_sys {breakdown.l_sys:.4f}")
    if args.out:
        manifest = records.new_manifest(
            "decompose", _manifest_config(args), args.seed, args.results,
            [args.out], args.normalize_timestamps,
        )
        records.write_jsonl(args.out, manifest, report_rows)
    return 0


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    worker = build_backend("worker", args, cfg)
    manager = build_backend("manager", args, cfg)
    metric = MetricKind(args.metric)
    instances = records.instances_from_file(args.dataset)

    def factory(chunk_size: int, total_length: int) -> PipelineConfig:
        return PipelineConfig(
            plan=plan_chunks(total_length, chunk_size, args.overlap),
            worker=worker,
            manager=manager,
            max_parallel_workers=args.max_parallel,
            metric=metric,
        )

    est_cfg = EstimatorConfig(
        candidates=tuple(_size_list(args.candidates)),
        budget_m=args.budget_m,
        seed=args.seed,
        tie_break=args.tie_break,
    )
    search = exhaustive_search if args.exhaustive else estimate_chunk_size
    report = search(est_cfg, instances, factory)
    chosen_mean = next(
        m.mean_score for m in report.means if m.chunk_size == report.chosen
    )
    payload = {
        "record": "report",
        "report_type": "estimate",
        "chosen": report.chosen,
        "chosen_cell": render_report_cell(chosen_mean, report.chosen),
        "total_evaluations": report.total_evaluations,
        "means": [asdict(m) for m in report.means],
    }
    for m in report.means:
        shown = "failed" if m.mean_score is None else f"{m.mean_score:.4f}"
        print(f"{format_chunk_size(m.chunk_size):>8}  {shown}  ({m.samples} samples)")
    print(f"chosen: {payload['chosen_cell']}")
    if args.out:
        manifest = records.new_manifest(
            "estimate", _manifest_config(args), args.seed, args.dataset,
            [args.out], args.normalize_timestamps,
        )
        records.write_jsonl(args.out, manifest, [payload])
    return 0


def cmd_crossover(args) -> int:
    strong = parse_model(args.strong)
    dc = DcLossModel(args.unit_loss, args.overhead_slope, args.overhead_intercept)
    kwargs = {}
    if args.search_max is not None:
        kwargs["search_max"] = args.search_max
    t0 = crossover(strong, dc, args.chunk_size, **kwargs)
    payload = {
        "record": "report",
        "report_type": "crossover",
        "strong": format_model(strong),
        "chunk_size": args.chunk_size,
        "unit_loss": args.unit_loss,
        "overhead_slope": args.overhead_slope,
        "overhead_intercept": args.overhead_intercept,
        "t0": t0,
    }
    _print_json({k: v for k, v in payload.items() if k != "record"})
    if args.out:
        manifest = records.new_manifest(
            "crossover", _manifest_config(args), args.seed, None,
            [args.out], args.normalize_timestamps,
        )
        records.write_jsonl(args.out, manifest, [payload])
    return 0


_COST_KEYS = (
    "single_intercept", "single_per_token", "worker_intercept", "worker_per_token",
    "manager_intercept", "manager_per_token", "p_big_in", "p_big_out",
    "p_small_in", "p_small_out", "p_mgr_in", "p_mgr_out",
)


def cmd_cost(args) -> int:
    cfg = load_config(args.config)
    missing = [k for k in _COST_KEYS if k not in cfg]
    if missing:
        raise CliError(f"cost config is missing keys: {', '.join(missing)}")
    vals = {k: float(cfg[k]) for k in _COST_KEYS}
    report = cost_report(
        single=LatencyCurve(vals["single_intercept"], vals["single_per_token"]),
        worker=LatencyCurve(vals["worker_intercept"], vals["worker_per_token"]),
        manager=LatencyCurve(vals["manager_intercept"], vals["manager_per_token"]),
        prices=PriceSheet(vals["p_big_in"], vals["p_big_out"], vals["p_small_in"],
                          vals["p_small_out"], vals["p_mgr_in"], vals["p_mgr_out"]),
        total_length=args.total_length,
        chunk_count=args.chunk_count,
        l_agg=args.l_agg,
        final_output_tokens=args.final_output_tokens,
        worker_output_total=args.worker_output_total,
    )
    payload = {"record": "report", "report_type": "cost", **asdict(report)}
    payload["note"] = "latency model assumes enough concurrency for one worker wave"
    _print_json({k: v for k, v in payload.items() if k != "record"})
    if args.out:
        manifest = records.new_manifest(
            "cost", _manifest_config(args), args.seed, None,
            [args.out], args.normalize_timestamps,
        )
        records.write_jsonl(args.out, manifest, [payload])
    return 0


def cmd_fit(args) -> int:
    points = []
    if args.points:
        for part in args.points.split(","):
            part = part.strip()
            if not part:
                continue
            if ":" not in part:
                raise CliError(f"bad point {part!r}, expected length:error")
            length, error = part.split(":", 1)
            points.append((float(length), float(error)))
    elif args.points_file:
        with open(args.points_file, "r", encoding="utf-8") as fh:
            import csv as _csv
            reader = _csv.DictReader(fh)
            for row in reader:
                points.append((float(row["length"]), float(row["error"])))
    else:
        raise CliError("fit needs --points or --points-file")
    result = fit_power_law(points)
    payload = {
        "record": "report",
        "report_type": "fit",
        "model": format_model(result.model),
        "residual_sum_squares": result.residual_sum_squares,
        "points_used": result.points_used,
        "degenerate": result.degenerate,
    }
    _print_json({k: v for k, v in payload.items() if k != "record"})
    if args.out:
        manifest = records.new_manifest(
            "fit", _manifest_config(args), args.seed, None,
            [args.out], args.normalize_timestamps,
        )
        records.write_jsonl(args.out, manifest, [payload])
    return 0


if __name__ == "__main__":
    sys.exit(main())
