"""Predictive latency and price calculus for single-pass vs divide and conquer.

Latency curves are affine in input tokens. With enough concurrency the
worker stage collapses to a single chunk's latency, so the pipeline's wall
time is one worker call on T/n tokens plus one manager call on the
aggregation input. Prices charge input and output tokens separately for the
big single-pass model, the small worker model, and the manager model.

These are predictions from configured curves, kept deliberately separate
from the timings a pipeline run actually measures.
"""

from __future__ import annotations

from dataclasses import dataclass


class CostModelError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyCurve:
    intercept: float  # seconds
    per_token: float  # seconds per input token

    def __post_init__(self) -> None:
        if self.intercept < 0 or self.per_token < 0:
            raise CostModelError("latency curve parameters must be >= 0")

    def latency(self, tokens: float) -> float:
        return self.intercept + self.per_token * tokens


@dataclass(frozen=True)
class PriceSheet:
    p_big_in: float
    p_big_out: float
    p_small_in: float
    p_small_out: float
    p_mgr_in: float
    p_mgr_out: float

    def __post_init__(self) -> None:
        for name in (
            "p_big_in", "p_big_out", "p_small_in",
            "p_small_out", "p_mgr_in", "p_mgr_out",
        ):
            if getattr(self, name) < 0:
                raise CostModelError(f"{name} must be >= 0")


@dataclass(frozen=True)
class CostReport:
    single_latency: float
    dc_latency: float
    dc_faster: bool
    single_cost: float
    dc_cost: float
    total_length: int
    chunk_count: int
    l_agg: int
    final_output_tokens: int
    worker_output_total: int

    def __post_init__(self) -> None:
        if self.dc_faster != (self.single_latency > self.dc_latency):
            raise CostModelError("dc_faster must equal the strict latency comparison")


def dc_latency(
    worker: LatencyCurve,
    manager: LatencyCurve,
    total_length: int,
    chunk_count: int,
    l_agg: int,
) -> float:
    """One worker pass on an even share of the input, then one manager pass."""
    if chunk_count < 1:
        raise CostModelError("chunk_count must be >= 1")
    return worker.latency(total_length / chunk_count) + manager.latency(l_agg)


def dc_faster(
    single: LatencyCurve,
    worker: LatencyCurve,
    manager: LatencyCurve,
    total_length: int,
    chunk_count: int,
    l_agg: int,
) -> bool:
    """Strict comparison: ties go to the single pass."""
    return single.latency(total_length) > dc_latency(
        worker, manager, total_length, chunk_count, l_agg
    )


def costs(
    prices: PriceSheet,
    total_length: int,
    final_output_tokens: int,
    worker_output_total: int,
    l_agg: int,
):
    """(single_cost, dc_cost) for one processed input."""
    for name, value in (
        ("total_length", total_length),
        ("final_output_tokens", final_output_tokens),
        ("worker_output_total", worker_output_total),
        ("l_agg", l_agg),
    ):
        if value < 0:
            raise CostModelError(f"{name} must be >= 0")
    single = prices.p_big_in * total_length + prices.p_big_out * final_output_tokens
    dc = (
        prices.p_small_in * total_length
        + prices.p_small_out * worker_output_total
        + prices.p_mgr_in * l_agg
        + prices.p_mgr_out * final_output_tokens
    )
    return single, dc


def cost_report(
    single: LatencyCurve,
    worker: LatencyCurve,
    manager: LatencyCurve,
    prices: PriceSheet,
    total_length: int,
    chunk_count: int,
    l_agg: int,
    final_output_tokens: int,
    worker_output_total: int,
) -> CostReport:
    single_lat = single.latency(total_length)
    dc_lat = dc_latency(worker, manager, total_length, chunk_count, l_agg)
    single_cost, dc_cost = costs(
        prices, total_length, final_output_tokens, worker_output_total, l_agg
    )
    return CostReport(
        single_latency=single_lat,
        dc_latency=dc_lat,
        dc_faster=single_lat > dc_lat,
        single_cost=single_cost,
        dc_cost=dc_cost,
        total_length=total_length,
        chunk_count=chunk_count,
        l_agg=l_agg,
        final_output_tokens=final_output_tokens,
        worker_output_total=worker_output_total,
    )
