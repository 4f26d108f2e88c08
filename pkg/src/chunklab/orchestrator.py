"""Pipeline orchestration: parallel workers, one manager call, full scoring.

``run_pipeline`` executes the divide and conquer pipeline over a chunk plan:
every chunk goes to a worker backend (up to ``max_parallel_workers``
concurrently), the joined artifacts go to the manager backend exactly once,
and, when both backends are simulated, the run also evaluates the score
ladder needed for stage-by-stage fidelity measurement:

* truth answered with itself,
* ideal aggregation of ideal artifacts,
* the real manager on ideal artifacts,
* the real manager on the real artifacts.

The manager backend consumes the same randomness in the last two evaluations,
so they differ only through the artifacts. ``run_single`` is the whole-input
baseline: one call sees the full payload with no artifact schema in between.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from . import prompts
from .chunker import ChunkPlan, detokenize
from .fidelity import DecomposedScores
from .llm_client import ClientError, complete
from .seeds import derive_seed
from .tasks import (
    Answer,
    MetricKind,
    TaskInstance,
    exact_solve,
    ideal_aggregate,
    ideal_artifact,
    score,
)
from .workers import (
    Backend,
    LiveBackend,
    NoisyBackend,
    OracleBackend,
    WorkerOutput,
    corrupt_answer,
    corruption_probability,
    parse_manager_answer,
    run_manager,
    run_worker,
)


class OrchestratorError(ValueError):
    pass


@dataclass(frozen=True)
class PromptBundle:
    worker: str
    manager: str
    fallback: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    plan: ChunkPlan
    worker: Backend
    manager: Backend
    max_parallel_workers: int = 1
    metric: MetricKind = MetricKind.EXACT_MATCH
    prompt_bundle: Optional[PromptBundle] = None

    def __post_init__(self) -> None:
        if self.max_parallel_workers < 1:
            raise OrchestratorError("max_parallel_workers must be >= 1")


@dataclass(frozen=True)
class PipelineRun:
    config: PipelineConfig
    worker_outputs: tuple  # ordered by chunk_id, whatever the completion order
    manager_answer: Answer
    single_shot_answer: Optional[Answer]
    scores: Optional[DecomposedScores]  # simulator mode only
    timings: tuple  # (worker critical path seconds, manager seconds)
    token_totals: tuple  # (input, worker output, aggregation input, final output)
    status: str = "ok"
    flags: tuple = ()


def run_pipeline(instance: TaskInstance, config: PipelineConfig) -> PipelineRun:
    plan = config.plan
    if plan.total_length != instance.total_length:
        raise OrchestratorError(
            f"plan covers {plan.total_length} tokens, instance has "
            f"{instance.total_length}"
        )
    live_worker = isinstance(config.worker, LiveBackend)
    worker_prompt = config.prompt_bundle.worker if config.prompt_bundle else None

    def one_worker(chunk_id: int) -> WorkerOutput:
        span = plan.boundaries[chunk_id]
        chunk = instance.payload_tokens[span[0]:span[1]] if live_worker else None
        return run_worker(
            config.worker, instance, chunk, chunk_id, span=span, prompt=worker_prompt
        )

    outputs: List[Optional[WorkerOutput]] = [None] * plan.num_chunks
    try:
        if config.max_parallel_workers == 1:
            for cid in range(plan.num_chunks):
                outputs[cid] = one_worker(cid)
        else:
            with ThreadPoolExecutor(config.max_parallel_workers) as pool:
                for cid, out in enumerate(pool.map(one_worker, range(plan.num_chunks))):
                    outputs[cid] = out
    except ClientError as exc:
        return _aborted(config, outputs, f"worker_failure: {exc}")

    ordered = tuple(sorted((o for o in outputs if o is not None), key=lambda o: o.chunk_id))
    artifacts = [o.artifact for o in ordered]
    manager_prompt = config.prompt_bundle.manager if config.prompt_bundle else None
    try:
        manager_out = run_manager(config.manager, instance, artifacts, prompt=manager_prompt)
    except ClientError as exc:
        return _aborted(config, outputs, f"manager_failure: {exc}")

    scores = None
    if not live_worker and not isinstance(config.manager, LiveBackend):
        scores = _score_ladder(instance, config, ordered, manager_out.answer)

    run_flags = tuple(f for o in ordered for f in o.flags if f == "parse_failure")
    return PipelineRun(
        config=config,
        worker_outputs=ordered,
        manager_answer=manager_out.answer,
        single_shot_answer=None,
        scores=scores,
        timings=(_critical_path([o.latency for o in ordered],
                                config.max_parallel_workers),
                 manager_out.latency),
        token_totals=(
            sum(o.input_tokens for o in ordered),
            sum(o.output_tokens for o in ordered),
            manager_out.input_tokens,
            manager_out.output_tokens,
        ),
        status="ok",
        flags=run_flags + manager_out.flags,
    )


def _score_ladder(instance, config, ordered, manager_answer) -> DecomposedScores:
    metric = config.metric
    if isinstance(config.worker, OracleBackend):
        ideal_arts = [o.artifact for o in ordered]
    else:
        ideal_arts = [
            ideal_artifact(instance, None, cid, span=span)
            for cid, span in enumerate(config.plan.boundaries)
        ]
    s_truth = score(instance, instance.ground_truth, metric)
    s_ideal = score(instance, ideal_aggregate(instance, ideal_arts), metric)
    real_on_ideal = run_manager(config.manager, instance, ideal_arts).answer
    s_real_ideal = score(instance, real_on_ideal, metric)
    s_real_real = score(instance, manager_answer, metric)
    return DecomposedScores(s_truth, s_ideal, s_real_ideal, s_real_real)


def _aborted(config, outputs, reason: str) -> PipelineRun:
    done = tuple(sorted((o for o in outputs if o is not None), key=lambda o: o.chunk_id))
    return PipelineRun(
        config=config,
        worker_outputs=done,
        manager_answer=None,
        single_shot_answer=None,
        scores=None,
        timings=(_critical_path([o.latency for o in done], config.max_parallel_workers), 0.0),
        token_totals=(
            sum(o.input_tokens for o in done),
            sum(o.output_tokens for o in done),
            0,
            0,
        ),
        status="aborted",
        flags=(reason,),
    )


def _critical_path(latencies: Sequence[float], max_parallel: int) -> float:
    """Wave model: chunks dispatch in order, max_parallel at a time; the
    path length is the sum over waves of the slowest call in each wave."""
    total = 0.0
    for start in range(0, len(latencies), max_parallel):
        wave = latencies[start:start + max_parallel]
        total += max(wave) if wave else 0.0
    return total


def run_single(
    instance: TaskInstance,
    backend: Backend,
    metric: MetricKind = MetricKind.EXACT_MATCH,
) -> Tuple[Answer, float]:
    """Whole-input baseline; returns (answer, 1 - score).

    The artifact schema does not apply: an oracle backend reproduces the
    exact answer, and a noisy backend corrupts that answer directly with
    probability p(total_length).
    """
    if isinstance(backend, OracleBackend):
        answer: Answer = exact_solve(instance)
    elif isinstance(backend, NoisyBackend):
        answer = exact_solve(instance)
        rng = random.Random(derive_seed(backend.seed, instance.seed, "single"))
        if rng.random() < corruption_probability(backend.model, instance.total_length):
            answer = corrupt_answer(answer, instance.kind, rng)
    else:
        user = (
            f"{instance.query}\n\nDocument:\n{detokenize(instance.payload_tokens)}\n\n"
            "Finish with a single line of the form\nANSWER: <result>"
        )
        exchange = complete(
            backend.endpoint, system="You answer tasks over long documents.", user=user
        )
        answer, _ = parse_manager_answer(instance, exchange.response_text)
    return answer, 1.0 - score(instance, answer, metric)


def plan_prompts(
    instance: TaskInstance,
    planner: Optional[LiveBackend] = None,
    task_description: Optional[str] = None,
) -> PromptBundle:
    """Worker and manager prompts for the instance's task.

    Without a planner this returns the built-in templates for the task kind.
    With one, the meta prompt wraps the task description and the two
    generated prompts are extracted; extraction failure falls back to the
    built-ins with the fallback flag set.
    """
    worker, manager = prompts.default_prompt_pair(instance)
    if planner is None:
        return PromptBundle(worker, manager)
    meta = prompts.load_template("planner_meta.txt").replace(
        "{task}", task_description or instance.query
    )
    try:
        exchange = complete(
            planner.endpoint, system="You design prompts for pipelines.", user=meta
        )
    except ClientError:
        return PromptBundle(worker, manager, fallback=True)
    pair = prompts.parse_prompt_pair(exchange.response_text)
    if pair is None:
        return PromptBundle(worker, manager, fallback=True)
    return PromptBundle(pair[0], pair[1])


def refine_prompts(
    current: PromptBundle,
    failures: Sequence[Tuple[TaskInstance, Answer]],
    planner: LiveBackend,
) -> PromptBundle:
    """One refinement round driven by observed failures; never iterates."""
    if not failures:
        return current
    lines = "\n".join(
        f"{inst.query} | {wrong} | {inst.ground_truth}" for inst, wrong in failures
    )
    meta = (
        prompts.load_template("refine_meta.txt")
        .replace("{worker_prompt}", current.worker)
        .replace("{manager_prompt}", current.manager)
        .replace("{failures}", lines)
    )
    try:
        exchange = complete(
            planner.endpoint, system="You design prompts for pipelines.", user=meta
        )
    except ClientError:
        return replace(current, fallback=True)
    pair = prompts.parse_prompt_pair(exchange.response_text)
    if pair is None:
        return replace(current, fallback=True)
    return PromptBundle(pair[0], pair[1])
