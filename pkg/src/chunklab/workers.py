"""Worker and manager backends: oracle, noisy, and live.

Oracle backends reproduce the ideal per-chunk artifact and the ideal merge
exactly. Noisy backends start from the ideal output and corrupt it with
probability p(L) = 1 - exp(-g(L)), where g is a configured degradation
model and L the call's input token length; the corruption draw is a pure
function of (backend seed, instance seed, chunk id), so reruns and
reorderings cannot change results. Live backends render prompt templates
and call a remote chat endpoint.

The manager draw deliberately ignores the artifacts it is fed: aggregating
ideal artifacts and aggregating corrupted ones consume the same randomness,
which lets a run isolate the worker stage's contribution by differencing.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

from . import prompts
from .chunker import detokenize
from .degradation import DegradationModel, loss_at
from .llm_client import EndpointConfig, complete
from .seeds import derive_seed
from .tasks import (
    Answer,
    Artifact,
    TaskInstance,
    TaskKind,
    ideal_artifact,
    resolve_aggregate,
)

_HEX = "0123456789abcdef"


class BackendError(ValueError):
    pass


@dataclass(frozen=True)
class OracleBackend:
    """Ideal computation, no corruption, zero latency."""


@dataclass(frozen=True)
class NoisyBackend:
    model: DegradationModel
    seed: int


@dataclass(frozen=True)
class LiveBackend:
    endpoint: EndpointConfig
    prompt_style: str = "manual"  # manager role only: manual | planner

    def __post_init__(self) -> None:
        if self.prompt_style not in ("manual", "planner"):
            raise BackendError("prompt_style must be 'manual' or 'planner'")


Backend = Union[OracleBackend, NoisyBackend, LiveBackend]


@dataclass(frozen=True)
class WorkerOutput:
    chunk_id: int
    artifact: Artifact
    input_tokens: int
    output_tokens: int
    latency: float
    flags: tuple = ()


@dataclass(frozen=True)
class ManagerOutput:
    answer: Answer
    input_tokens: int
    output_tokens: int
    latency: float
    flags: tuple = ()


def corruption_probability(model: DegradationModel, length: int) -> float:
    """Chance that a noisy call of the given input length corrupts."""
    return -math.expm1(-loss_at(model, length))


def worker_rng(backend_seed: int, instance_seed: int, chunk_id: int) -> random.Random:
    return random.Random(derive_seed(backend_seed, instance_seed, chunk_id, "worker"))


def manager_rng(backend_seed: int, instance_seed: int) -> random.Random:
    # no chunk or artifact dependence: see module docstring
    return random.Random(derive_seed(backend_seed, instance_seed, "manager"))


def run_worker(
    backend: Backend,
    instance: TaskInstance,
    chunk: Optional[Sequence[str]],
    chunk_id: int,
    span: Optional[tuple] = None,
    prompt: Optional[str] = None,
) -> WorkerOutput:
    """Produce one chunk's artifact under the given backend."""
    if span is not None:
        input_tokens = span[1] - span[0]
    elif chunk is not None:
        input_tokens = len(chunk)
    else:
        raise BackendError("need chunk tokens or a payload span")
    if isinstance(backend, OracleBackend):
        artifact = ideal_artifact(instance, chunk, chunk_id, span=span)
        return WorkerOutput(chunk_id, artifact, input_tokens, artifact.token_cost, 0.0)
    if isinstance(backend, NoisyBackend):
        artifact = ideal_artifact(instance, chunk, chunk_id, span=span)
        rng = worker_rng(backend.seed, instance.seed, chunk_id)
        flags: tuple = ()
        if rng.random() < corruption_probability(backend.model, input_tokens):
            artifact = corrupt_artifact(artifact, instance.kind, rng)
            flags = ("corrupted",)
        return WorkerOutput(
            chunk_id, artifact, input_tokens, artifact.token_cost, 0.0, flags
        )
    if chunk is None:
        raise BackendError("live workers need the chunk tokens")
    template = prompt if prompt is not None else prompts.default_prompt_pair(instance)[0]
    rendered = prompts.render_worker_prompt(template, instance, detokenize(chunk))
    exchange = complete(
        backend.endpoint,
        system="You are a careful extraction worker.",
        user=rendered,
    )
    artifact, flags = parse_worker_artifact(instance, chunk_id, exchange.response_text)
    return WorkerOutput(
        chunk_id,
        artifact,
        exchange.input_tokens,
        exchange.output_tokens,
        exchange.latency,
        flags,
    )


def run_manager(
    backend: Backend,
    instance: TaskInstance,
    artifacts: Sequence[Artifact],
    prompt: Optional[str] = None,
) -> ManagerOutput:
    """Merge artifacts into a final answer under the given backend."""
    l_agg = sum(a.token_cost for a in artifacts)
    if isinstance(backend, OracleBackend):
        return ManagerOutput(resolve_aggregate(instance, artifacts), l_agg, 1, 0.0)
    if isinstance(backend, NoisyBackend):
        answer = resolve_aggregate(instance, artifacts)
        rng = manager_rng(backend.seed, instance.seed)
        flags: tuple = ()
        if rng.random() < corruption_probability(backend.model, l_agg):
            answer = corrupt_answer(answer, instance.kind, rng)
            flags = ("corrupted",)
        return ManagerOutput(answer, l_agg, 1, 0.0, flags)
    template = prompt if prompt is not None else prompts.default_prompt_pair(instance)[1]
    responses = "\n".join(
        f"chunk {a.chunk_id}: {render_artifact(instance.kind, a)}" for a in artifacts
    )
    rendered = prompts.render_manager_prompt(template, instance, responses)
    exchange = complete(
        backend.endpoint,
        system="You are a careful aggregation manager.",
        user=rendered,
    )
    answer, flags = parse_manager_answer(instance, exchange.response_text)
    return ManagerOutput(
        answer, exchange.input_tokens, exchange.output_tokens, exchange.latency, flags
    )


# ---------------------------------------------------------------------------
# Corruption mechanics


def corrupt_artifact(artifact: Artifact, kind: TaskKind, rng: random.Random) -> Artifact:
    """Apply one discrete corruption, chosen uniformly over the applicable
    operations for the artifact's kind."""
    if kind is TaskKind.KV:
        if artifact.content is None:
            fake = "v%05x" % rng.randrange(16 ** 5)
            return Artifact(artifact.chunk_id, fake, 1)
        if rng.randrange(2) == 0:
            return Artifact(artifact.chunk_id, None, 1)
        return Artifact(artifact.chunk_id, _mangle(artifact.content, rng), 1)
    if kind is TaskKind.MATH:
        values = list(artifact.content)
        if not values:
            return artifact
        actions = [("remove", i, 0) for i in range(len(values))]
        actions += [("bump", i, d) for i in range(len(values)) for d in (1, -1)]
        op, i, delta = actions[rng.randrange(len(actions))]
        if op == "remove":
            del values[i]
        else:
            values[i] += delta
        return Artifact(artifact.chunk_id, tuple(values), len(values))
    pairs = list(artifact.content)
    if not pairs:
        return artifact
    del pairs[rng.randrange(len(pairs))]
    return Artifact(artifact.chunk_id, tuple(pairs), len(pairs))


def corrupt_answer(answer: Answer, kind: TaskKind, rng: random.Random) -> Answer:
    """Garble a final answer; None stays None (already a failure)."""
    if answer is None:
        return None
    if kind is TaskKind.MATH:
        return int(answer) + rng.choice((-1, 1))
    return _mangle(str(answer), rng)


def _mangle(text: str, rng: random.Random) -> str:
    if not text:
        return "x"
    pool = [c for c in _HEX if c != text[-1]]
    return text[:-1] + rng.choice(pool)


# ---------------------------------------------------------------------------
# Live response handling


def render_artifact(kind: TaskKind, artifact: Artifact) -> str:
    if kind is TaskKind.KV:
        return artifact.content if artifact.content is not None else "absent"
    if kind is TaskKind.MATH:
        return ", ".join(str(v) for v in artifact.content)
    if not artifact.content:
        return "none"
    return " ".join(f"{a}={b}" for a, b in artifact.content)


def parse_answer_line(text: str) -> Optional[str]:
    """Value of the last ``ANSWER:`` line, or None when there is none."""
    value = None
    for line in text.splitlines():
        if line.strip().upper().startswith("ANSWER:"):
            value = line.strip()[len("ANSWER:"):].strip()
    return value


def parse_worker_artifact(
    instance: TaskInstance, chunk_id: int, text: str
) -> Tuple[Artifact, tuple]:
    value = parse_answer_line(text)
    if value is None:
        return _empty_artifact(instance.kind, chunk_id), ("parse_failure",)
    budget = instance.artifact_budget
    if instance.kind is TaskKind.KV:
        if value.lower() in ("absent", "none", ""):
            return Artifact(chunk_id, None, 1), ()
        return Artifact(chunk_id, value.split()[0], 1), ()
    if instance.kind is TaskKind.MATH:
        try:
            nums = tuple(int(p) for p in value.replace(",", " ").split())[:budget]
        except ValueError:
            return _empty_artifact(instance.kind, chunk_id), ("parse_failure",)
        return Artifact(chunk_id, nums, len(nums)), ()
    if value.lower() in ("none", ""):
        return Artifact(chunk_id, (), 0), ()
    pairs = []
    for part in value.replace(";", " ").split():
        if "=" not in part:
            return _empty_artifact(instance.kind, chunk_id), ("parse_failure",)
        pairs.append(tuple(part.split("=", 1)))
    pairs = pairs[:budget]
    return Artifact(chunk_id, tuple(pairs), len(pairs)), ()


def parse_manager_answer(instance: TaskInstance, text: str) -> Tuple[Answer, tuple]:
    value = parse_answer_line(text)
    if value is None:
        return None, ("parse_failure",)
    if value.lower() in ("unknown", "none", ""):
        return None, ()
    if instance.kind is TaskKind.MATH:
        try:
            return int(value.split()[0]), ()
        except ValueError:
            return None, ("parse_failure",)
    return value.split()[0], ()


def _empty_artifact(kind: TaskKind, chunk_id: int) -> Artifact:
    if kind is TaskKind.KV:
        return Artifact(chunk_id, None, 1)
    return Artifact(chunk_id, (), 0)
