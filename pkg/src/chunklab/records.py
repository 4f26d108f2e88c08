"""Result files: manifests, JSONL run records, and CSV curves.

Every JSONL results file starts with exactly one manifest line describing
the command, its configuration, the seed, and the tool version; data lines
follow, one JSON object each, tagged by a ``record`` field. Serialization
sorts keys and uses compact separators so identical runs produce identical
bytes; a normalization flag pins the manifest timestamp for golden-file
comparisons.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from typing import IO, Iterable, List, Optional, Sequence, Tuple

from .degradation import format_model
from .fidelity import classify_regime, measure_triple, to_losses
from .orchestrator import PipelineRun
from .tasks import (
    Answer,
    TaskInstance,
    instance_from_record,
    instance_to_record,
    score,
)
from .workers import LiveBackend, NoisyBackend, OracleBackend

TOOL_VERSION = "0.1.0"
EPOCH_TIMESTAMP = "1970-01-01T00:00:00Z"


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    seed: Optional[int]
    dataset: Optional[str]
    outputs: tuple
    version: str
    timestamp: str


def new_manifest(
    command: str,
    config: dict,
    seed: Optional[int],
    dataset: Optional[str],
    outputs: Sequence[str],
    normalize_timestamps: bool = False,
) -> RunManifest:
    if normalize_timestamps:
        stamp = EPOCH_TIMESTAMP
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return RunManifest(
        command=command,
        config=dict(config),
        seed=seed,
        dataset=dataset,
        outputs=tuple(outputs),
        version=TOOL_VERSION,
        timestamp=stamp,
    )


def dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def manifest_record(manifest: RunManifest) -> dict:
    rec = asdict(manifest)
    rec["outputs"] = list(manifest.outputs)
    rec["record"] = "manifest"
    return rec


def write_jsonl(path: str, manifest: RunManifest, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_line(manifest_record(manifest)) + "\n")
        for rec in records:
            fh.write(dump_line(rec) + "\n")


def append_jsonl(path: str, records: Iterable[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dump_line(rec) + "\n")


def read_jsonl(path: str) -> Tuple[dict, List[dict]]:
    """(manifest, data records); enforces the manifest-first invariant."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise RecordError(f"{path} is empty, expected a manifest line")
    head = json.loads(lines[0])
    if head.get("record") != "manifest":
        raise RecordError(f"{path} does not start with a manifest line")
    return head, [json.loads(line) for line in lines[1:]]


# ---------------------------------------------------------------------------
# Instances


def instance_id(instance: TaskInstance) -> str:
    return f"{instance.kind.value}:{instance.seed}:{instance.total_length}"


def instance_record(instance: TaskInstance) -> dict:
    rec = instance_to_record(instance)
    rec["record"] = "instance"
    rec["instance_id"] = instance_id(instance)
    return rec


def instances_from_file(path: str) -> List[TaskInstance]:
    _, rows = read_jsonl(path)
    return [instance_from_record(r) for r in rows if r.get("record") == "instance"]


# ---------------------------------------------------------------------------
# Runs


def describe_backend(backend) -> dict:
    if isinstance(backend, OracleBackend):
        return {"kind": "oracle"}
    if isinstance(backend, NoisyBackend):
        return {"kind": "noisy", "model": format_model(backend.model), "seed": backend.seed}
    if isinstance(backend, LiveBackend):
        return {
            "kind": "live",
            "model_name": backend.endpoint.model_name,
            "prompt_style": backend.prompt_style,
        }
    raise RecordError(f"unknown backend {backend!r}")


def run_record(
    instance: TaskInstance,
    run: PipelineRun,
    single: Optional[Tuple[Answer, float]] = None,
) -> dict:
    """One JSONL line for a pipeline run, optionally paired with the
    single-pass baseline on the same instance."""
    cfg = run.config
    rec: dict = {
        "record": "run",
        "instance_id": instance_id(instance),
        "kind": instance.kind.value,
        "instance_seed": instance.seed,
        "total_length": instance.total_length,
        "chunk_size": cfg.plan.chunk_size,
        "overlap": cfg.plan.overlap,
        "num_chunks": cfg.plan.num_chunks,
        "max_parallel_workers": cfg.max_parallel_workers,
        "metric": cfg.metric.value,
        "worker": describe_backend(cfg.worker),
        "manager": describe_backend(cfg.manager),
        "manager_answer": run.manager_answer,
        "dc_score": score(instance, run.manager_answer, cfg.metric),
        "timings": list(run.timings),
        "token_totals": list(run.token_totals),
        "status": run.status,
        "flags": list(run.flags),
        "scores": None,
        "triple": None,
        "clamped_stages": [],
        "losses": None,
        "regime": None,
        "regime_indeterminate": None,
    }
    if run.scores is not None:
        measured = measure_triple(run.scores)
        losses = to_losses(measured.triple)
        call = classify_regime(losses)
        rec["scores"] = {
            "s_truth": run.scores.s_truth,
            "s_ideal_agg_ideal_art": run.scores.s_ideal_agg_ideal_art,
            "s_real_agg_ideal_art": run.scores.s_real_agg_ideal_art,
            "s_real_agg_real_art": run.scores.s_real_agg_real_art,
        }
        rec["triple"] = {
            "rho_task": measured.triple.rho_task,
            "rho_agg": measured.triple.rho_agg,
            "rho_model": measured.triple.rho_model,
        }
        rec["clamped_stages"] = list(measured.clamped_stages)
        rec["losses"] = {
            "l_task": losses.l_task,
            "l_agg": losses.l_agg,
            "l_model": losses.l_model,
            "l_sys": losses.l_sys,
        }
        rec["regime"] = call.label.value
        rec["regime_indeterminate"] = call.indeterminate
    if single is not None:
        answer, error = single
        rec["single_answer"] = answer
        rec["single_error"] = error
        rec["single_score"] = 1.0 - error
    return rec


# ---------------------------------------------------------------------------
# Curves


def write_curve_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            if len(row) != len(header):
                raise RecordError("curve row width does not match the header")
            writer.writerow(list(row))
