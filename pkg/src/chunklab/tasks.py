"""Synthetic task substrate: generators, exact oracles, ideal artifacts, scoring.

Three task kinds cover the behaviors the simulator needs to expose:

* ``kv``          - needle retrieval over unique ``key:value`` pairs.
* ``math``        - k-th order statistic of a long integer list.
* ``alias_chain`` - multi-hop rename chain whose links are scattered across
  the payload; an artifact budget below the per-chunk link density makes the
  chunked schema lossy by construction, no matter how good the workers are.

Every instance carries its exact answer, recomputable by brute force over the
token payload (``exact_solve``), so each pipeline stage can be scored against
a true reference. ``ideal_artifact`` and ``ideal_aggregate`` give the best
schema-constrained per-chunk summary and the best merger of such summaries;
together with the exact answer they pin down where a real pipeline loses
score.
"""

from __future__ import annotations

import random
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .chunker import detokenize, tokenize
from .fidelity import EPSILON_SCORE, clamp_score
from .seeds import derive_seed

Answer = Union[str, int, None]

_KEY_SPACE = 16 ** 5
_NAME_SPACE = 16 ** 4


class TaskError(ValueError):
    """Invalid task parameters or artifacts inconsistent with the instance."""


class TaskKind(str, Enum):
    KV = "kv"
    MATH = "math"
    ALIAS_CHAIN = "alias_chain"


class MetricKind(str, Enum):
    EXACT_MATCH = "exact_match"
    TOKEN_F1 = "token_f1"


@dataclass(frozen=True)
class Artifact:
    """Schema-constrained per-chunk output.

    ``content`` is kind-specific: a found value or None for kv, an ordered
    tuple of extreme values for math, a tuple of (alias, referent) pairs for
    alias_chain. ``token_cost`` is the budget charge of the content.
    """

    chunk_id: int
    content: object
    token_cost: int


# Derived token indexes. Rebuilt from the payload on construction, so loaded
# instances behave identically to freshly generated ones.


@dataclass(frozen=True)
class _KvMeta:
    key_span: tuple  # half-open token span holding the queried pair
    value: str


@dataclass(frozen=True)
class _MathMeta:
    values: np.ndarray  # int64, one per payload token


@dataclass(frozen=True)
class _AliasMeta:
    positions: tuple  # sorted token indices of link facts
    links: tuple  # (alias, referent), aligned with positions
    root: str
    hops: int


@dataclass(frozen=True)
class TaskInstance:
    kind: TaskKind
    payload_tokens: tuple
    query: str
    ground_truth: Answer
    artifact_budget: int
    seed: int
    params: dict
    meta: object = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self) -> None:
        if self.artifact_budget < 1:
            raise TaskError("artifact_budget must be >= 1")
        if not self.payload_tokens:
            raise TaskError("payload must hold at least one token")
        object.__setattr__(self, "meta", _build_meta(self))

    @property
    def total_length(self) -> int:
        return len(self.payload_tokens)


def _build_meta(inst: TaskInstance) -> object:
    if inst.kind is TaskKind.KV:
        key = inst.params["key"]
        if inst.params["aligned"]:
            pair = f"{key}:{inst.ground_truth}"
            i = inst.payload_tokens.index(pair)
            return _KvMeta((i, i + 1), pair.split(":", 1)[1])
        i = inst.payload_tokens.index(key + ":")
        return _KvMeta((i, i + 2), inst.payload_tokens[i + 1])
    if inst.kind is TaskKind.MATH:
        values = np.fromiter(
            map(int, inst.payload_tokens), np.int64, len(inst.payload_tokens)
        )
        return _MathMeta(values)
    positions = []
    links = []
    for i, tok in enumerate(inst.payload_tokens):
        if "=" in tok:
            alias, referent = tok.split("=", 1)
            positions.append(i)
            links.append((alias, referent))
    return _AliasMeta(
        tuple(positions),
        tuple(links),
        inst.params["root"],
        inst.params["hops"],
    )


# ---------------------------------------------------------------------------
# Generators


def gen_kv(pair_count: int, seed: int, aligned: bool = True) -> TaskInstance:
    """Unique-key retrieval payload; one queried key, value is the answer.

    Aligned mode renders each pair as a single token so no chunk boundary
    can split it. Unaligned mode renders "key:" and "value" as two tokens,
    letting a boundary separate them.
    """
    if not 1 <= pair_count <= _KEY_SPACE:
        raise TaskError(f"pair_count must be in [1, {_KEY_SPACE}]")
    rng = random.Random(derive_seed(seed, "kv-payload"))
    keys = ["k%05x" % i for i in rng.sample(range(_KEY_SPACE), pair_count)]
    values = ["v%05x" % rng.randrange(_KEY_SPACE) for _ in range(pair_count)]
    target = rng.randrange(pair_count)
    if aligned:
        tokens = tuple(f"{k}:{v}" for k, v in zip(keys, values))
    else:
        tokens = tuple(
            t for k, v in zip(keys, values) for t in (k + ":", v)
        )
    key = keys[target]
    return TaskInstance(
        kind=TaskKind.KV,
        payload_tokens=tokens,
        query=f"Return the value stored under {key}. Reply with the value only.",
        ground_truth=values[target],
        artifact_budget=1,
        seed=seed,
        params={"pair_count": pair_count, "aligned": aligned, "key": key, "budget": 1},
    )


def gen_math(
    count: int,
    k: int,
    direction: str,
    seed: int,
    sigma: float = 1e6,
) -> TaskInstance:
    """Integer list from a rounded centered Gaussian; answer is the k-th
    order statistic in the given direction. Ties are ordinary multiset ties.
    """
    if count < 1:
        raise TaskError("count must be >= 1")
    if not 1 <= k <= count:
        raise TaskError("k must satisfy 1 <= k <= count")
    if direction not in ("smallest", "largest"):
        raise TaskError("direction must be 'smallest' or 'largest'")
    if sigma <= 0:
        raise TaskError("sigma must be > 0")
    rng = np.random.default_rng(derive_seed(seed, "math-values"))
    values = np.rint(rng.normal(0.0, sigma, count)).astype(np.int64)
    if direction == "smallest":
        answer = int(np.partition(values, k - 1)[k - 1])
    else:
        answer = int(np.partition(values, count - k)[count - k])
    query = (
        f"Find the {_ordinal(k)} {direction} integer in the list. "
        "Reply with the integer only."
    )
    return TaskInstance(
        kind=TaskKind.MATH,
        payload_tokens=tuple(str(v) for v in values),
        query=query,
        ground_truth=answer,
        artifact_budget=k,
        seed=seed,
        params={
            "count": count,
            "k": k,
            "direction": direction,
            "sigma": sigma,
            "budget": k,
        },
    )


def gen_alias_chain(
    chain_length: int,
    filler_tokens: int,
    seed: int,
    artifact_budget: Optional[int] = None,
) -> TaskInstance:
    """Rename chain of ``chain_length`` names linked by single-token facts
    ``old=new``, spread evenly through filler. The answer is the last name
    reachable from the root. A budget below the densest chunk's link count
    forces information loss at the artifact stage.
    """
    if chain_length < 2:
        raise TaskError("chain_length must be >= 2")
    if filler_tokens < 0:
        raise TaskError("filler_tokens must be >= 0")
    if chain_length > _NAME_SPACE:
        raise TaskError(f"chain_length must be <= {_NAME_SPACE}")
    budget = chain_length if artifact_budget is None else artifact_budget
    if budget < 1:
        raise TaskError("artifact_budget must be >= 1")
    links = chain_length - 1
    total = links + filler_tokens
    rng = random.Random(derive_seed(seed, "alias-chain"))
    names = ["n%04x" % i for i in rng.sample(range(_NAME_SPACE), chain_length)]
    if links == 1:
        positions = [(total - 1) // 2]
    else:
        # floor(j * slope) with slope >= 1 is strictly increasing
        positions = [j * (total - 1) // (links - 1) for j in range(links)]
    order = list(range(links))
    rng.shuffle(order)
    filler_rng = np.random.default_rng(derive_seed(seed, "alias-filler"))
    filler_ids = filler_rng.integers(0, _NAME_SPACE, total)
    tokens = ["w%04x" % i for i in filler_ids]
    for slot, j in enumerate(order):
        tokens[positions[slot]] = f"{names[j]}={names[j + 1]}"
    return TaskInstance(
        kind=TaskKind.ALIAS_CHAIN,
        payload_tokens=tuple(tokens),
        query=(
            f"Starting from {names[0]}, follow all {links} rename links in "
            "order. Reply with the final name only."
        ),
        ground_truth=names[-1],
        artifact_budget=budget,
        seed=seed,
        params={
            "chain_length": chain_length,
            "filler_tokens": filler_tokens,
            "root": names[0],
            "hops": links,
            "budget": budget,
        },
    )


def _ordinal(n: int) -> str:
    if n % 100 in (11, 12, 13):
        return f"{n}th"
    return f"{n}" + {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")


# ---------------------------------------------------------------------------
# Exact oracle


def exact_solve(instance: TaskInstance) -> Answer:
    """Brute-force answer recomputed from the raw payload tokens."""
    tokens = instance.payload_tokens
    if instance.kind is TaskKind.KV:
        key = instance.params["key"]
        if instance.params["aligned"]:
            prefix = key + ":"
            for tok in tokens:
                if tok.startswith(prefix):
                    return tok[len(prefix):]
            return None
        marker = key + ":"
        for i, tok in enumerate(tokens):
            if tok == marker:
                return tokens[i + 1] if i + 1 < len(tokens) else None
        return None
    if instance.kind is TaskKind.MATH:
        values = sorted(int(t) for t in tokens)
        k = instance.params["k"]
        return values[k - 1] if instance.params["direction"] == "smallest" else values[-k]
    mapping = {}
    for tok in tokens:
        if "=" in tok:
            alias, referent = tok.split("=", 1)
            mapping[alias] = referent
    current = instance.params["root"]
    while current in mapping:
        current = mapping[current]
    return current


# ---------------------------------------------------------------------------
# Ideal artifacts and aggregation


def ideal_artifact(
    instance: TaskInstance,
    chunk: Optional[Sequence[str]],
    chunk_id: int,
    span: Optional[tuple] = None,
) -> Artifact:
    """Best budget-constrained summary of one chunk.

    ``span`` is the chunk's (start, stop) token offset within the payload;
    when given, the precomputed payload index answers without touching the
    chunk tokens, which the simulator relies on for speed. Without it the
    chunk tokens are scanned directly. Both routes agree.
    """
    if chunk is None and span is None:
        raise TaskError("need chunk tokens or a payload span")
    if instance.kind is TaskKind.KV:
        content = _kv_content(instance, chunk, span)
        return Artifact(chunk_id, content, 1)
    if instance.kind is TaskKind.MATH:
        content = _math_content(instance, chunk, span)
        return Artifact(chunk_id, content, len(content))
    content = _alias_content(instance, chunk, span)
    return Artifact(chunk_id, content, len(content))


def _kv_content(instance, chunk, span):
    if span is not None:
        ks, ke = instance.meta.key_span
        return instance.meta.value if span[0] <= ks and ke <= span[1] else None
    key = instance.params["key"]
    if instance.params["aligned"]:
        prefix = key + ":"
        for tok in chunk:
            if tok.startswith(prefix):
                return tok[len(prefix):]
        return None
    marker = key + ":"
    for i, tok in enumerate(chunk):
        if tok == marker:
            # value must sit in the same chunk to be reportable
            return chunk[i + 1] if i + 1 < len(chunk) else None
    return None


def _math_content(instance, chunk, span):
    if span is not None:
        values = instance.meta.values[span[0]:span[1]]
    else:
        values = np.fromiter(map(int, chunk), np.int64, len(chunk))
    m = min(instance.artifact_budget, len(values))
    if instance.params["direction"] == "smallest":
        picked = np.sort(np.partition(values, m - 1)[:m])
        return tuple(int(v) for v in picked)
    picked = np.sort(np.partition(values, len(values) - m)[len(values) - m:])
    return tuple(int(v) for v in picked[::-1])


def _alias_content(instance, chunk, span):
    budget = instance.artifact_budget
    if span is not None:
        meta = instance.meta
        lo = bisect_left(meta.positions, span[0])
        hi = bisect_left(meta.positions, span[1])
        return meta.links[lo:lo + min(budget, hi - lo)]
    pairs = []
    for tok in chunk:
        if "=" in tok:
            pairs.append(tuple(tok.split("=", 1)))
            if len(pairs) == budget:
                break
    return tuple(pairs)


def ideal_aggregate(instance: TaskInstance, artifacts: Sequence[Artifact]) -> Answer:
    """Best merger of per-chunk artifacts; None when unresolvable.

    Raises TaskError on conflicting kv finds, which cannot happen with
    ideal artifacts over unique keys; seeing one means the artifacts were
    corrupted. Use ``resolve_aggregate`` when that is expected.
    """
    return _aggregate(instance, artifacts, strict=True)


def resolve_aggregate(instance: TaskInstance, artifacts: Sequence[Artifact]) -> Answer:
    """Same merger, but resolves conflicting kv finds deterministically by
    lowest chunk id instead of raising. Identical to ``ideal_aggregate`` on
    conflict-free artifacts.
    """
    return _aggregate(instance, artifacts, strict=False)


def _aggregate(instance, artifacts, strict):
    if instance.kind is TaskKind.KV:
        finds = [(a.chunk_id, a.content) for a in artifacts if a.content is not None]
        if not finds:
            return None
        if len({v for _, v in finds}) > 1:
            if strict:
                raise TaskError(
                    "conflicting finds for the queried key; artifacts corrupted"
                )
            return min(finds)[1]
        return finds[0][1]
    if instance.kind is TaskKind.MATH:
        merged = sorted(v for a in artifacts for v in a.content)
        k = instance.params["k"]
        if len(merged) < k:
            return None
        return merged[k - 1] if instance.params["direction"] == "smallest" else merged[-k]
    mapping = {}
    for a in artifacts:
        for alias, referent in a.content:
            if mapping.get(alias, referent) != referent:
                return None  # contradictory links, unresolvable
            mapping[alias] = referent
    meta = instance.meta
    current = meta.root
    for _ in range(meta.hops):
        if current not in mapping:
            return None
        current = mapping[current]
    return current


# ---------------------------------------------------------------------------
# Scoring


def score(instance: TaskInstance, prediction: Answer, metric: MetricKind) -> float:
    if metric is MetricKind.EXACT_MATCH:
        if prediction is None:
            return EPSILON_SCORE
        same = _canonical(instance.kind, prediction) == _canonical(
            instance.kind, instance.ground_truth
        )
        return 1.0 if same else EPSILON_SCORE
    truth = instance.ground_truth
    if not isinstance(truth, str):
        raise TaskError("token_f1 requires a text-valued answer")
    return token_f1(prediction, truth)


def token_f1(prediction: Answer, truth: str) -> float:
    """Harmonic mean of token precision and recall, over token multisets."""
    if prediction is None:
        return EPSILON_SCORE
    pred_tokens = Counter(str(prediction).split())
    truth_tokens = Counter(truth.split())
    overlap = sum((pred_tokens & truth_tokens).values())
    if overlap == 0 or not pred_tokens:
        return EPSILON_SCORE
    precision = overlap / sum(pred_tokens.values())
    recall = overlap / sum(truth_tokens.values())
    return clamp_score(2 * precision * recall / (precision + recall))


def _canonical(kind, value):
    if kind is TaskKind.MATH:
        try:
            return int(str(value))
        except ValueError:
            return ("unparsed", str(value))
    return str(value).strip()


# ---------------------------------------------------------------------------
# Dataset serialization


def instance_to_record(instance: TaskInstance) -> dict:
    return {
        "kind": instance.kind.value,
        "seed": instance.seed,
        "params": dict(instance.params),
        "query": instance.query,
        "ground_truth": instance.ground_truth,
        "payload": detokenize(instance.payload_tokens),
    }


def instance_from_record(record: dict) -> TaskInstance:
    kind = TaskKind(record["kind"])
    params = dict(record["params"])
    ground_truth = record["ground_truth"]
    if kind is TaskKind.MATH and ground_truth is not None:
        ground_truth = int(ground_truth)
    return TaskInstance(
        kind=kind,
        payload_tokens=tuple(tokenize(record["payload"])),
        query=record["query"],
        ground_truth=ground_truth,
        artifact_budget=params["budget"],
        seed=record["seed"],
        params=params,
    )
