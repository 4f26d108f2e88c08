"""Fidelity decomposition for chunked pipelines.

A divide-and-conquer pipeline answers a query in two stages: workers compress
each chunk into an artifact, and a manager aggregates the artifacts into the
final answer. Writing S(.) for the task score, four evaluations bracket the
pipeline:

    S(y*)       score of the ground-truth answer itself,
    S(h*(a*))   ideal aggregation of ideal artifacts,
    S(h(a*))    the real manager on ideal artifacts,
    S(h(a^))    the real manager on the real artifacts (the pipeline output).

The system fidelity factors into three ratios, each isolating one stage:

    rho_task  = S(h*(a*)) / S(y*)      information lost to the decomposition
                                       schema itself (the artifact bottleneck),
    rho_agg   = S(h(a*)) / S(h*(a*))   aggregation shortfall of the manager,
    rho_model = S(h(a^)) / S(h(a*))    degradation of the worker artifacts,

    rho_sys   = rho_task * rho_agg * rho_model.

Log-losses l_x = -ln(rho_x) make the decomposition additive, and for small
per-stage error rates eps_x = 1 - rho_x the total error is approximately
their sum, with a nonnegative second-order residual.

Scores live in (0, 1]. Measured scores are clamped below by EPSILON_SCORE so
ratios and logs stay finite; a null answer scores exactly EPSILON_SCORE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

__all__ = [
    "EPSILON_SCORE",
    "DEFAULT_TRIVIAL_THRESHOLD",
    "DEFAULT_DOMINANCE_RATIO",
    "FidelityError",
    "FidelityTriple",
    "LossBreakdown",
    "DecomposedScores",
    "MeasuredTriple",
    "FirstOrderError",
    "RegimeLabel",
    "RegimeCall",
    "clamp_score",
    "compose_fidelity",
    "to_losses",
    "first_order_error",
    "measure_triple",
    "classify_regime",
]

# Floor for measured scores; a null answer scores exactly this value.
EPSILON_SCORE = 1e-6

# Below this many nats of total loss a run is reported as Trivial.
DEFAULT_TRIVIAL_THRESHOLD = 0.02

# One loss component must exceed the other by this factor to "dominate".
DEFAULT_DOMINANCE_RATIO = 3.0


class FidelityError(ValueError):
    """Raised when a score or fidelity value is outside its domain."""


def _check_fidelity(name: str, value: float) -> None:
    if not (0.0 < value <= 1.0) or math.isnan(value):
        raise FidelityError(f"{name} must lie in (0, 1], got {value!r}")


@dataclass(frozen=True)
class FidelityTriple:
    """Per-stage fidelities (rho_task, rho_agg, rho_model), each in (0, 1]."""

    rho_task: float
    rho_agg: float
    rho_model: float

    def __post_init__(self) -> None:
        _check_fidelity("rho_task", self.rho_task)
        _check_fidelity("rho_agg", self.rho_agg)
        _check_fidelity("rho_model", self.rho_model)


@dataclass(frozen=True)
class LossBreakdown:
    """Additive log-losses in nats; l_sys is the exact sum of the parts."""

    l_task: float
    l_agg: float
    l_model: float
    l_sys: float


@dataclass(frozen=True)
class DecomposedScores:
    """The four score-ladder evaluations of one simulated run.

    Field order follows the ladder: ground truth, ideal aggregation of ideal
    artifacts, real manager on ideal artifacts, real manager on real
    artifacts.
    """

    s_truth: float
    s_ideal_agg_ideal_art: float
    s_real_agg_ideal_art: float
    s_real_agg_real_art: float

    def __post_init__(self) -> None:
        _check_fidelity("s_truth", self.s_truth)
        _check_fidelity("s_ideal_agg_ideal_art", self.s_ideal_agg_ideal_art)
        _check_fidelity("s_real_agg_ideal_art", self.s_real_agg_ideal_art)
        _check_fidelity("s_real_agg_real_art", self.s_real_agg_real_art)


@dataclass(frozen=True)
class MeasuredTriple:
    """A measured FidelityTriple plus which stages hit the ratio clamp.

    A consecutive score ratio above 1 means a later ladder stage scored
    higher than an earlier one (possible on lucky noise); the ratio is
    clamped to 1 and the stage name recorded so reports can flag it.
    """

    triple: FidelityTriple
    clamped_stages: tuple[str, ...] = ()

    @property
    def clamped(self) -> bool:
        return bool(self.clamped_stages)


@dataclass(frozen=True)
class FirstOrderError:
    """Exact total error, its first-order approximation, and the residual."""

    exact: float
    approx: float
    residual: float


class RegimeLabel(Enum):
    TRIVIAL = "Trivial"
    TASK_DOMINATED = "TaskDominated"
    MODEL_DOMINATED = "ModelDominated"


@dataclass(frozen=True)
class RegimeCall:
    """A regime label plus whether the fallback (indeterminate) branch fired."""

    label: RegimeLabel
    indeterminate: bool = False


def clamp_score(value: float) -> float:
    """Clamp a raw score into [EPSILON_SCORE, 1]; NaN is a domain error."""
    if math.isnan(value):
        raise FidelityError("score is NaN")
    return min(1.0, max(EPSILON_SCORE, value))


def compose_fidelity(triple: FidelityTriple) -> float:
    """Multiply the three stage fidelities into the system fidelity.

    rho_sys = rho_task * rho_agg * rho_model, always in (0, 1].
    """
    return triple.rho_task * triple.rho_agg * triple.rho_model


def to_losses(triple: FidelityTriple) -> LossBreakdown:
    """Convert fidelities to log-losses l_x = -ln(rho_x), in nats.

    l_sys is computed as the sum of the three components, so the additive
    identity holds exactly rather than to rounding; it agrees with
    -ln(compose_fidelity(triple)) to floating-point accuracy.
    """
    l_task = -math.log(triple.rho_task)
    l_agg = -math.log(triple.rho_agg)
    l_model = -math.log(triple.rho_model)
    return LossBreakdown(l_task, l_agg, l_model, l_task + l_agg + l_model)


def first_order_error(triple: FidelityTriple) -> FirstOrderError:
    """Expand the total error in the per-stage error rates.

    With eps_x = 1 - rho_x:

        exact    = 1 - rho_task * rho_agg * rho_model
        approx   = eps_task + eps_agg + eps_model
        residual = approx - exact
                 = (pairwise products) - (triple product)  >= 0

    The residual is bounded above by the sum of the pairwise products, so
    the first-order reading overstates the true error by at most a
    second-order amount.
    """
    eps_task = 1.0 - triple.rho_task
    eps_agg = 1.0 - triple.rho_agg
    eps_model = 1.0 - triple.rho_model
    exact = 1.0 - compose_fidelity(triple)
    approx = eps_task + eps_agg + eps_model
    return FirstOrderError(exact, approx, approx - exact)


def measure_triple(scores: DecomposedScores) -> MeasuredTriple:
    """Turn the four ladder scores into per-stage fidelities.

    Each fidelity is the ratio of consecutive ladder scores. A ratio above 1
    (a monotonicity violation) is clamped to 1 and flagged by stage name.
    """
    ratios = (
        ("rho_task", scores.s_ideal_agg_ideal_art / scores.s_truth),
        ("rho_agg", scores.s_real_agg_ideal_art / scores.s_ideal_agg_ideal_art),
        ("rho_model", scores.s_real_agg_real_art / scores.s_real_agg_ideal_art),
    )
    clamped: list[str] = []
    values: list[float] = []
    for name, ratio in ratios:
        if ratio > 1.0:
            clamped.append(name)
            ratio = 1.0
        values.append(ratio)
    triple = FidelityTriple(values[0], values[1], values[2])
    return MeasuredTriple(triple, tuple(clamped))


def classify_regime(
    losses: LossBreakdown,
    trivial_threshold: float = DEFAULT_TRIVIAL_THRESHOLD,
    dominance_ratio: float = DEFAULT_DOMINANCE_RATIO,
) -> RegimeCall:
    """Label a loss breakdown by which stage dominates.

    Order of tests: total loss below the trivial threshold wins first; then
    task loss dominating model loss by the ratio; then model loss dominating
    task loss. Anything else falls back to ModelDominated with the
    indeterminate flag set. The comparisons are ratio-based, so scaling all
    components by a positive constant (above the trivial threshold) does not
    change a dominated label.
    """
    if trivial_threshold < 0 or dominance_ratio <= 0:
        raise FidelityError("thresholds must be positive")
    if losses.l_sys <= trivial_threshold:
        return RegimeCall(RegimeLabel.TRIVIAL)
    if losses.l_task >= dominance_ratio * losses.l_model:
        return RegimeCall(RegimeLabel.TASK_DOMINATED)
    if losses.l_model >= dominance_ratio * losses.l_task:
        return RegimeCall(RegimeLabel.MODEL_DOMINATED)
    return RegimeCall(RegimeLabel.MODEL_DOMINATED, indeterminate=True)
