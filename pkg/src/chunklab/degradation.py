"""Length-induced degradation models and the chunking crossover solver.

A degradation model maps a context length L to a loss g(L) in nats; the
implied fidelity of a single call over L tokens is exp(-g(L)) and the implied
corruption probability is 1 - exp(-g(L)). Three families cover the shapes
seen in practice: PowerLaw a*L^beta (super-linear when beta > 1), Linear,
and Saturating (scale * L / (L + midpoint), which plateaus at `scale`).

DcLossModel is the loss budget of a divide-and-conquer pipeline over total
length T at chunk size c:

    dc_loss(T, c) = ceil(T/c) * per_chunk_unit_loss
                    + overhead_slope * T + overhead_intercept

which is linear-bounded in T for fixed c. When the strong model's loss grows
super-linearly, the difference strong(T) - dc(T) eventually turns positive
and stays positive; `crossover` finds the first integer where that permanent
dominance begins.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MAX_LOSS_NATS",
    "DEFAULT_SEARCH_MAX",
    "DegradationError",
    "NonMonotoneDifferenceWarning",
    "PowerLaw",
    "Linear",
    "Saturating",
    "DegradationModel",
    "DcLossModel",
    "FitResult",
    "loss_at",
    "dc_loss",
    "crossover",
    "fit_power_law",
    "parse_model",
    "format_model",
]

# Loss cap: exp(-700) is near the float64 underflow floor, so larger losses
# are indistinguishable from total corruption anyway.
MAX_LOSS_NATS = 700.0

DEFAULT_SEARCH_MAX = 2**24

# Errors at or above this ceiling carry no recoverable loss information
# (the score epsilon mirrors fidelity.EPSILON_SCORE; kept literal here to
# avoid a one-constant import cycle).
_ERROR_CEILING = 1.0 - 1e-6


class DegradationError(ValueError):
    """Raised on domain errors in model parameters or evaluation."""


class NonMonotoneDifferenceWarning(UserWarning):
    """The strong-vs-dc loss difference changes sign more than once.

    crossover still returns the exact first point of permanent dominance,
    found by a block-structured scan instead of blind bisection; this
    warning is the report that the input was not a single sign change.
    """


@dataclass(frozen=True)
class PowerLaw:
    a: float
    beta: float

    def __post_init__(self) -> None:
        if not (self.a > 0 and math.isfinite(self.a)):
            raise DegradationError(f"PowerLaw a must be positive, got {self.a!r}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise DegradationError(f"PowerLaw beta must be positive, got {self.beta!r}")


@dataclass(frozen=True)
class Linear:
    slope: float
    intercept: float = 0.0

    def __post_init__(self) -> None:
        # slope 0 is allowed so the degenerate all-zero fit is representable
        if self.slope < 0 or not math.isfinite(self.slope):
            raise DegradationError(f"Linear slope must be nonnegative, got {self.slope!r}")
        if self.intercept < 0 or not math.isfinite(self.intercept):
            raise DegradationError(f"Linear intercept must be nonnegative, got {self.intercept!r}")


@dataclass(frozen=True)
class Saturating:
    scale: float
    midpoint: float

    def __post_init__(self) -> None:
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DegradationError(f"Saturating scale must be positive, got {self.scale!r}")
        if not (self.midpoint > 0 and math.isfinite(self.midpoint)):
            raise DegradationError(f"Saturating midpoint must be positive, got {self.midpoint!r}")


DegradationModel = PowerLaw | Linear | Saturating


@dataclass(frozen=True)
class DcLossModel:
    per_chunk_unit_loss: float
    overhead_slope: float = 0.0
    overhead_intercept: float = 0.0

    def __post_init__(self) -> None:
        for name in ("per_chunk_unit_loss", "overhead_slope", "overhead_intercept"):
            value = getattr(self, name)
            if value < 0 or not math.isfinite(value):
                raise DegradationError(f"DcLossModel {name} must be nonnegative, got {value!r}")


@dataclass(frozen=True)
class FitResult:
    model: DegradationModel
    residual_sum_squares: float
    points_used: int
    degenerate: bool = False


def _raw_loss(model: DegradationModel, length: float) -> float:
    if isinstance(model, PowerLaw):
        return model.a * length**model.beta
    if isinstance(model, Linear):
        return model.slope * length + model.intercept
    if isinstance(model, Saturating):
        return model.scale * length / (length + model.midpoint)
    raise DegradationError(f"unknown degradation model {model!r}")


def loss_at(model: DegradationModel, length: float) -> float:
    """Evaluate g(length) in nats, capped at MAX_LOSS_NATS.

    exp(-result) is the implied per-call fidelity.
    """
    if length < 0:
        raise DegradationError(f"length must be nonnegative, got {length!r}")
    return min(_raw_loss(model, length), MAX_LOSS_NATS)


def dc_loss(model: DcLossModel, total_length: int, chunk_size: int) -> float:
    """Loss budget of a chunked pipeline: per-chunk units plus affine overhead."""
    if chunk_size < 1:
        raise DegradationError(f"chunk_size must be >= 1, got {chunk_size!r}")
    if total_length < 1:
        raise DegradationError(f"total_length must be >= 1, got {total_length!r}")
    n_chunks = -(-total_length // chunk_size)
    return (
        n_chunks * model.per_chunk_unit_loss
        + model.overhead_slope * total_length
        + model.overhead_intercept
    )


# ---------------------------------------------------------------------------
# Crossover search.
#
# d(T) = strong(T) - dc(T, c), with strong evaluated uncapped: the cap in
# loss_at is an overflow guard for fidelity computations, while crossover
# compares mathematical growth rates (a capped curve would make every
# super-linear model eventually "lose" to any nonzero overhead slope,
# contradicting what the crossover is for).
#
# We need the smallest T0 with d > 0 on all of [T0, search_max], i.e. one
# past the last nonpositive point of d. Write
# s(T) = strong(T) - overhead_slope*T - overhead_intercept, so within
# chunk-count block k (where ceil(T/c) = k), d(T) = s(T) - u*k.
#
# For every family, g' is monotone, so s has at most one interior
# stationary point on reals; between breakpoints s is monotone on integers,
# which allows exact bisection per piece. Across blocks only the -u*k term
# changes; the per-block extrema of d, viewed as functions of the block
# index k, are again piecewise monotone (their k-derivative is
# c*s'(T(k)) - u, one sign change at most, at the stationary point of
# s - (u/c)*T), so the last nonpositive block is found by bisection too.
# Everything is O(log search_max).
# ---------------------------------------------------------------------------


def _stationary_point(model: DegradationModel, slope: float) -> float | None:
    """Real T where d/dT (g(T) - slope*T) = 0, if one exists in (0, inf)."""
    if slope <= 0:
        return None
    if isinstance(model, PowerLaw):
        if model.beta == 1.0:
            return None
        # a*beta*T^(beta-1) = slope
        return (slope / (model.a * model.beta)) ** (1.0 / (model.beta - 1.0))
    if isinstance(model, Linear):
        return None
    # Saturating: g'(T) = scale*midpoint/(T+midpoint)^2 = slope
    t = math.sqrt(model.scale * model.midpoint / slope) - model.midpoint
    return t if t > 0 else None


def _monotone_pieces(strong: DegradationModel, slope: float, lo: int, hi: int) -> list[tuple[int, int]]:
    """Split [lo, hi] into integer intervals on which s is monotone."""
    point = _stationary_point(strong, slope)
    if point is not None:
        cut = math.floor(point)
        if lo <= cut < hi:
            return [(lo, cut), (cut + 1, hi)]
    return [(lo, hi)]


def _last_nonpositive_monotone(d, lo: int, hi: int) -> int | None:
    """Last T in [lo, hi] with d(T) <= 0, for d monotone on [lo, hi]."""
    d_lo, d_hi = d(lo), d(hi)
    if d_hi <= 0:
        return hi
    if d_hi >= d_lo:  # nondecreasing: nonpositive prefix
        if d_lo > 0:
            return None
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if d(mid) <= 0:
                lo = mid
            else:
                hi = mid
        return lo
    # decreasing with d(hi) > 0: everything is positive
    return None


def _has_positive_monotone(d, lo: int, hi: int) -> bool:
    """Whether any T in [lo, hi] has d(T) > 0, for d monotone (endpoints suffice)."""
    return d(lo) > 0 or d(hi) > 0


def _split_pieces(lo: int, hi: int, cuts: set) -> list[tuple[int, int]]:
    """Split [lo, hi] at the cut points, each cut its own singleton piece."""
    if lo > hi:
        return []
    pieces = []
    start = lo
    for cut in sorted(c for c in cuts if lo <= c <= hi):
        if start < cut:
            pieces.append((start, cut - 1))
        if start <= cut:
            pieces.append((cut, cut))
            start = cut + 1
    if start <= hi:
        pieces.append((start, hi))
    return pieces


def crossover(
    strong: DegradationModel,
    dc: DcLossModel,
    chunk_size: int,
    search_max: int = DEFAULT_SEARCH_MAX,
) -> int | None:
    """First integer T0 <= search_max with strong loss > dc loss from T0 on.

    Returns None when no such point exists at or below search_max (in
    particular whenever the difference is still nonpositive at search_max).
    When the loss difference is not a single sign change (for example the
    ceil term makes it sawtooth), the exact answer is still returned and a
    NonMonotoneDifferenceWarning reports the condition.
    """
    if search_max < 1:
        raise DegradationError(f"search_max must be >= 1, got {search_max!r}")
    if chunk_size < 1:
        raise DegradationError(f"chunk_size must be >= 1, got {chunk_size!r}")

    u = dc.per_chunk_unit_loss
    slope = dc.overhead_slope

    def s(t: float) -> float:
        return _raw_loss(strong, t) - slope * t - dc.overhead_intercept

    def d(t: int) -> float:
        return s(t) - u * (-(-t // chunk_size))

    if d(search_max) <= 0:
        return None

    n_blocks = -(-search_max // chunk_size)
    if u == 0.0 or n_blocks == 1:
        # No interior jumps: d is s shifted by a constant, piecewise monotone.
        shift = u if n_blocks == 1 else 0.0

        def d_flat(t: int) -> float:
            return s(t) - shift

        last: int | None = None
        for plo, phi in _monotone_pieces(strong, slope, 1, search_max):
            found = _last_nonpositive_monotone(d_flat, plo, phi)
            if found is not None:
                last = found
        if last is None:
            return 1
        if _has_positive_piecewise(strong, slope, d_flat, 1, last - 1):
            _warn_non_monotone()
        return last + 1

    # Block view: exact per-block extrema of d via s's monotone pieces, then
    # bisection over the block index. The k-space cuts sit in the blocks
    # holding the stationary points of s and of s - (u/c)*T; splitting at
    # those (plus one-block guards for integer rounding) leaves monotone
    # pieces.
    def block_range(k: int) -> tuple[int, int]:
        return (k - 1) * chunk_size + 1, min(k * chunk_size, search_max)

    def block_extrema(k: int) -> tuple[float, float]:
        blo, bhi = block_range(k)
        vals = [
            s(t)
            for plo, phi in _monotone_pieces(strong, slope, blo, bhi)
            for t in (plo, phi)
        ]
        return min(vals) - u * k, max(vals) - u * k

    def block_min(k: int) -> float:
        return block_extrema(k)[0]

    cuts: set = set()
    for x in (
        _stationary_point(strong, slope),
        _stationary_point(strong, slope + u / chunk_size),
    ):
        if x is not None and x >= 1:
            kx = -(-int(min(math.floor(x), search_max)) // chunk_size)
            kx = max(1, min(n_blocks, kx))
            cuts.update((kx - 1, kx, kx + 1))

    k_last = None
    for klo, khi in _split_pieces(1, n_blocks, cuts):
        found = _last_nonpositive_monotone(block_min, klo, khi)
        if found is not None:
            k_last = found if k_last is None else max(k_last, found)
    if k_last is None:
        return 1

    blo, bhi = block_range(k_last)

    def d_block(t: int) -> float:
        return s(t) - u * k_last

    last = None
    for plo, phi in _monotone_pieces(strong, slope, blo, bhi):
        found = _last_nonpositive_monotone(d_block, plo, phi)
        if found is not None:
            last = found if last is None else max(last, found)
    if last is None:  # block_min said otherwise; defensive
        raise DegradationError("internal error: lost the nonpositive block")

    positive_below = _has_positive_piecewise(strong, slope, d_block, blo, last - 1)
    if not positive_below:
        for klo, khi in _split_pieces(1, k_last - 1, cuts):
            if block_extrema(klo)[1] > 0 or block_extrema(khi)[1] > 0:
                positive_below = True
                break
    if positive_below:
        _warn_non_monotone()
    return last + 1


def _warn_non_monotone() -> None:
    warnings.warn(
        "loss difference is not a single sign change; exact scan used",
        NonMonotoneDifferenceWarning,
        stacklevel=3,
    )


def _has_positive_piecewise(strong, slope, d, lo: int, hi: int) -> bool:
    if lo > hi:
        return False
    return any(
        _has_positive_monotone(d, plo, phi)
        for plo, phi in _monotone_pieces(strong, slope, lo, hi)
    )


def fit_power_law(points: list[tuple[float, float]]) -> FitResult:
    """Least-squares power-law fit to (length, observed_error) points.

    Errors convert to losses via l = -ln(1 - error) after clamping error to
    [0, 1 - epsilon]; the fit is ordinary least squares of ln(l) on ln(L).
    Points with zero loss carry no signal and are skipped; points whose
    error sits at the clamp ceiling are censored (the true loss is
    unrecoverable from a saturated error) and are skipped too, with
    points_used reporting how many survived. All-zero-loss input returns
    the degenerate Linear(0, 0) with the flag set.
    """
    if len(points) < 2 or len({length for length, _ in points}) < 2:
        raise DegradationError("need at least 2 points with distinct lengths")
    for length, error in points:
        if length <= 0:
            raise DegradationError(f"length must be positive, got {length!r}")
        if not (0.0 <= error <= 1.0) or math.isnan(error):
            raise DegradationError(f"error must lie in [0, 1], got {error!r}")

    usable: list[tuple[float, float]] = []
    for length, error in points:
        if error >= _ERROR_CEILING:
            continue  # censored: loss saturated the error encoding
        loss = -math.log1p(-error)
        if loss > 0.0:
            usable.append((length, loss))

    if not usable:
        if all(error < _ERROR_CEILING for _, error in points):
            return FitResult(Linear(0.0, 0.0), 0.0, 0, degenerate=True)
        raise DegradationError("no usable points: every nonzero error is saturated")
    if len(usable) < 2 or len({length for length, _ in usable}) < 2:
        raise DegradationError("need at least 2 usable points with distinct lengths")

    log_l = np.log([length for length, _ in usable])
    log_loss = np.log([loss for _, loss in usable])
    design = np.vstack([np.ones_like(log_l), log_l]).T
    coef, _, _, _ = np.linalg.lstsq(design, log_loss, rcond=None)
    residuals = log_loss - design @ coef
    rss = float(residuals @ residuals)
    return FitResult(PowerLaw(math.exp(coef[0]), float(coef[1])), rss, len(usable))


_FAMILY_ARITY = {"powerlaw": 2, "linear": 2, "saturating": 2}


def parse_model(text: str) -> DegradationModel:
    """Parse 'family:param,param' strings, e.g. 'powerlaw:1e-6,2'."""
    name, _, rest = text.strip().partition(":")
    family = name.strip().lower()
    if family not in _FAMILY_ARITY:
        raise DegradationError(f"unknown model family {name!r}")
    try:
        params = [float(p) for p in rest.split(",")] if rest else []
    except ValueError as exc:
        raise DegradationError(f"bad model parameters in {text!r}") from exc
    if len(params) != _FAMILY_ARITY[family]:
        raise DegradationError(f"{family} takes {_FAMILY_ARITY[family]} parameters, got {len(params)}")
    if family == "powerlaw":
        return PowerLaw(params[0], params[1])
    if family == "linear":
        return Linear(params[0], params[1])
    return Saturating(params[0], params[1])


def format_model(model: DegradationModel) -> str:
    if isinstance(model, PowerLaw):
        return f"powerlaw:{model.a!r},{model.beta!r}"
    if isinstance(model, Linear):
        return f"linear:{model.slope!r},{model.intercept!r}"
    return f"saturating:{model.scale!r},{model.midpoint!r}"
