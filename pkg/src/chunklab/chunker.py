"""Deterministic chunk planning and token slicing.

A plan covers token positions [0, total_length) with fixed-size windows that
advance by stride = chunk_size - overlap; the final window is allowed to be
short (no padding). Planning is pure arithmetic so the same inputs always
give the same boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

__all__ = [
    "MAX_CHUNK_SIZE",
    "ChunkError",
    "ChunkPlan",
    "plan_chunks",
    "slice_tokens",
    "tokenize",
    "detokenize",
    "approx_provider_tokens",
]

MAX_CHUNK_SIZE = 2**24


class ChunkError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkPlan:
    total_length: int
    chunk_size: int
    overlap: int
    boundaries: tuple[tuple[int, int], ...]

    @property
    def num_chunks(self) -> int:
        return len(self.boundaries)

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


def plan_chunks(total_length: int, chunk_size: int, overlap: int = 0) -> ChunkPlan:
    """Plan half-open [start, end) windows covering [0, total_length).

    Every chunk except possibly the last has length exactly chunk_size;
    consecutive starts differ by chunk_size - overlap.
    """
    if total_length < 1:
        raise ChunkError(f"total_length must be >= 1, got {total_length!r}")
    if not (1 <= chunk_size <= MAX_CHUNK_SIZE):
        raise ChunkError(f"chunk_size must be in [1, {MAX_CHUNK_SIZE}], got {chunk_size!r}")
    if not (0 <= overlap < chunk_size):
        raise ChunkError(f"overlap must be in [0, chunk_size), got {overlap!r}")

    if total_length <= chunk_size:
        return ChunkPlan(total_length, chunk_size, overlap, ((0, total_length),))
    stride = chunk_size - overlap
    count = math.ceil((total_length - chunk_size) / stride) + 1
    boundaries = tuple(
        (i * stride, min(i * stride + chunk_size, total_length)) for i in range(count)
    )
    return ChunkPlan(total_length, chunk_size, overlap, boundaries)


def slice_tokens(tokens: Sequence[str], plan: ChunkPlan) -> list[Sequence[str]]:
    """Cut a token sequence along a plan's boundaries."""
    if len(tokens) != plan.total_length:
        raise ChunkError(
            f"token count {len(tokens)} does not match plan length {plan.total_length}"
        )
    return [tokens[start:end] for start, end in plan.boundaries]


def _whitespace_tokenize(text: str) -> list[str]:
    return text.split()


_TOKENIZERS: dict[str, Callable[[str], list[str]]] = {
    "whitespace": _whitespace_tokenize,
}


def tokenize(text: str, scheme: str = "whitespace") -> list[str]:
    try:
        return _TOKENIZERS[scheme](text)
    except KeyError:
        raise ChunkError(
            f"unknown tokenizer scheme {scheme!r}; registered: {sorted(_TOKENIZERS)}"
        ) from None


def detokenize(tokens: Sequence[str], scheme: str = "whitespace") -> str:
    if scheme not in _TOKENIZERS:
        raise ChunkError(
            f"unknown tokenizer scheme {scheme!r}; registered: {sorted(_TOKENIZERS)}"
        )
    return " ".join(tokens)


def approx_provider_tokens(text: str) -> int:
    """Provider-token approximation for live cost accounting: ceil(chars/4)."""
    return math.ceil(len(text) / 4)
