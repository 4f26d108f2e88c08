"""Chunk-size selection by sparse sampling, and its exhaustive baseline.

Trying every candidate chunk size on every instance costs |dataset| * |grid|
pipeline runs. Because the score curve over chunk size has a single broad
optimum in practice, a small per-candidate sample is enough to land on or
next to the best grid point. ``estimate_chunk_size`` draws ``budget_m``
instances per candidate (fresh seeded draw each, without replacement) and
picks the best mean; ``exhaustive_search`` is the reference it is judged
against.

Instances are always evaluated in a canonical order derived from their own
identity, never in dataset order, so shuffling the dev set cannot change a
single bit of the report.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

from .orchestrator import PipelineConfig, run_pipeline
from .seeds import derive_seed
from .tasks import TaskInstance, score

PipelineFactory = Callable[[int, int], PipelineConfig]  # (chunk_size, total_length)


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    candidates: tuple
    budget_m: int
    seed: int
    tie_break: str = "larger"  # larger | smaller chunk wins score ties

    def __post_init__(self) -> None:
        cands = tuple(self.candidates)
        object.__setattr__(self, "candidates", cands)
        if not cands:
            raise EstimatorError("need at least one candidate chunk size")
        if any(b <= a for a, b in zip(cands, cands[1:])):
            raise EstimatorError("candidates must be strictly increasing")
        if self.budget_m < 1:
            raise EstimatorError("budget_m must be >= 1")
        if self.tie_break not in ("larger", "smaller"):
            raise EstimatorError("tie_break must be 'larger' or 'smaller'")


@dataclass(frozen=True)
class CandidateMean:
    chunk_size: int
    mean_score: Optional[float]  # None when every sampled run failed
    samples: int
    failures: int = 0


@dataclass(frozen=True)
class EstimateReport:
    chosen: int
    means: tuple  # CandidateMean per candidate, in candidate order
    total_evaluations: int


def estimate_chunk_size(
    config: EstimatorConfig,
    dev_set: Sequence[TaskInstance],
    pipeline_factory: PipelineFactory,
) -> EstimateReport:
    if len(dev_set) < config.budget_m:
        raise EstimatorError(
            f"dev set holds {len(dev_set)} instances, budget_m is {config.budget_m}"
        )
    canon = _canonical(dev_set)
    means = []
    for candidate in config.candidates:
        rng = random.Random(derive_seed(config.seed, "estimate", candidate))
        picked = sorted(rng.sample(range(len(canon)), config.budget_m))
        means.append(_evaluate(candidate, [canon[i] for i in picked], pipeline_factory))
    return _report(config, means, config.budget_m * len(config.candidates))


def exhaustive_search(
    config: EstimatorConfig,
    dev_set: Sequence[TaskInstance],
    pipeline_factory: PipelineFactory,
) -> EstimateReport:
    if not dev_set:
        raise EstimatorError("dev set is empty")
    canon = _canonical(dev_set)
    means = [_evaluate(c, canon, pipeline_factory) for c in config.candidates]
    return _report(config, means, len(canon) * len(config.candidates))


def _canonical(dev_set: Sequence[TaskInstance]) -> List[TaskInstance]:
    return sorted(
        dev_set,
        key=lambda i: (i.seed, i.kind.value, i.total_length, i.query),
    )


def _evaluate(candidate, instances, pipeline_factory) -> CandidateMean:
    total = 0.0
    used = 0
    failures = 0
    for instance in instances:
        cfg = pipeline_factory(candidate, instance.total_length)
        run = run_pipeline(instance, cfg)
        if run.status != "ok":
            failures += 1
            continue
        total += score(instance, run.manager_answer, cfg.metric)
        used += 1
    mean = total / used if used else None
    return CandidateMean(candidate, mean, len(instances), failures)


def _report(config, means, total_evaluations) -> EstimateReport:
    scored = [m for m in means if m.mean_score is not None]
    if not scored:
        raise EstimatorError("every sampled pipeline run failed")
    sign = 1 if config.tie_break == "larger" else -1
    best = max(scored, key=lambda m: (m.mean_score, sign * m.chunk_size))
    return EstimateReport(best.chunk_size, tuple(means), total_evaluations)


# ---------------------------------------------------------------------------
# Report table cells, "score (chunk)" style


def render_report_cell(mean_score: float, chunk_size: int) -> str:
    return f"{mean_score:.2f} ({format_chunk_size(chunk_size)})"


def parse_report_cell(cell: str) -> Tuple[float, int]:
    text = cell.strip()
    if not text.endswith(")") or "(" not in text:
        raise EstimatorError(f"malformed report cell: {cell!r}")
    head, _, tail = text.rpartition("(")
    return float(head.strip()), parse_chunk_size(tail[:-1].strip())


def format_chunk_size(chunk_size: int) -> str:
    if chunk_size % 1024 == 0 and chunk_size >= 1024:
        return f"{chunk_size // 1024}K"
    return str(chunk_size)


def parse_chunk_size(text: str) -> int:
    cleaned = text.strip()
    if cleaned.lower().endswith("k"):
        return int(cleaned[:-1]) * 1024
    return int(cleaned)
