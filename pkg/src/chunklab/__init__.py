"""Divide and conquer pipelines for long-context tasks, with exact oracles.

The package splits a long input into chunks, runs a worker per chunk, and
aggregates the per-chunk artifacts with a manager. Simulated backends make
every stage's contribution to the final error measurable exactly; the same
pipeline runs unchanged against a live chat-completions endpoint.
"""

from .chunker import ChunkPlan, plan_chunks, slice_tokens
from .degradation import (
    DcLossModel,
    Linear,
    PowerLaw,
    Saturating,
    crossover,
    fit_power_law,
)
from .estimator import EstimatorConfig, estimate_chunk_size, exhaustive_search
from .fidelity import (
    DecomposedScores,
    FidelityTriple,
    LossBreakdown,
    RegimeLabel,
    classify_regime,
    compose_fidelity,
    measure_triple,
    to_losses,
)
from .orchestrator import PipelineConfig, PipelineRun, run_pipeline, run_single
from .records import TOOL_VERSION as __version__
from .tasks import MetricKind, TaskInstance, TaskKind, gen_alias_chain, gen_kv, gen_math, score
from .workers import LiveBackend, NoisyBackend, OracleBackend

__all__ = [
    "ChunkPlan",
    "DcLossModel",
    "DecomposedScores",
    "EstimatorConfig",
    "FidelityTriple",
    "Linear",
    "LiveBackend",
    "LossBreakdown",
    "MetricKind",
    "NoisyBackend",
    "OracleBackend",
    "PipelineConfig",
    "PipelineRun",
    "PowerLaw",
    "RegimeLabel",
    "Saturating",
    "TaskInstance",
    "TaskKind",
    "__version__",
    "classify_regime",
    "compose_fidelity",
    "crossover",
    "estimate_chunk_size",
    "exhaustive_search",
    "fit_power_law",
    "gen_alias_chain",
    "gen_kv",
    "gen_math",
    "measure_triple",
    "plan_chunks",
    "run_pipeline",
    "run_single",
    "score",
    "slice_tokens",
    "to_losses",
]
