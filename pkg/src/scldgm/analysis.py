"""Threshold search, critical BER, Shannon-gap arithmetic, convergence
profiling, and the closed-form error-floor lower bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr

from .dde import (
    DEFAULT_MAX_ITERS,
    CodeEnsemble,
    CodeKind,
    evolve_inner,
    evolve_outer,
    two_step_dde,
)
from .errors import BracketError, ConsistencyError, InvalidInputError
from .grid import LlrGrid, gaussian_llr_pmf

DEFAULT_PRECISION_DB = 0.01

# A density-evolution run on a stand-alone outer code counts as successful
# once its error probability falls below this.  The stalled fixed point sits
# at 1e-3 or above, while a successful run drops to the code's floor, so any
# cutoff well between the two classifies identically.  (LDGM outer codes
# have floors above 1e-9, so a stricter cutoff would misclassify them.)
OUTER_SUCCESS_ERROR = 1e-6

# Waterfall criterion for the full concatenated run used in threshold
# cross-validation.  The concatenated ensembles of interest drop below
# 1e-9, but codes whose error floor sits higher still show the same
# stall-vs-waterfall dichotomy, so the guard allows for the floor.
CONCATENATED_SUCCESS_ERROR = 1e-6


def concatenated_floor_bound(inner: CodeEnsemble, outer: CodeEnsemble, sigma: float) -> float:
    """Conservative error-floor estimate of a concatenated pair: the
    closed-form bound at the smallest variable degrees (the largest of the
    per-degree floor terms)."""
    return scldgm_lower_bound(
        min(inner.vn_dist.degrees), min(outer.vn_dist.degrees), sigma
    )


def sigma_from_eb_no(eb_no_db: float, rate: float) -> float:
    """Noise standard deviation at a given Eb/No (dB) and code rate."""
    return math.sqrt(1.0 / (2.0 * rate * 10.0 ** (eb_no_db / 10.0)))


def eb_no_from_sigma(sigma: float, rate: float) -> float:
    """Eb/No (dB) of a noise level at a given code rate."""
    return 10.0 * math.log10(1.0 / (2.0 * rate * sigma * sigma))


@dataclass(frozen=True)
class ChannelPoint:
    """One operating point; sigma and eb_no_db are views of the same
    quantity at the stored rate."""

    sigma: float
    eb_no_db: float
    rate: float

    def __post_init__(self):
        if self.sigma <= 0 or not 0 < self.rate < 1:
            raise InvalidInputError("sigma must be positive and rate in (0, 1)")
        expected = eb_no_from_sigma(self.sigma, self.rate)
        if abs(expected - self.eb_no_db) > 1e-9:
            raise InvalidInputError(
                f"eb_no_db {self.eb_no_db} inconsistent with sigma {self.sigma} "
                f"at rate {self.rate} (expected {expected})"
            )

    @classmethod
    def from_sigma(cls, sigma: float, rate: float) -> "ChannelPoint":
        return cls(sigma, eb_no_from_sigma(sigma, rate), rate)

    @classmethod
    def from_db(cls, eb_no_db: float, rate: float) -> "ChannelPoint":
        return cls(sigma_from_eb_no(eb_no_db, rate), eb_no_db, rate)


@dataclass(frozen=True)
class ThresholdResult:
    threshold_eb_no_db: float
    threshold_sigma: float
    critical_ber: float
    gap_to_shannon_db: float
    search_precision_db: float


def q_function(x) -> float:
    """Upper tail of the standard Gaussian, accurate into the deep tail."""
    return np.exp(log_ndtr(-np.asarray(x, dtype=np.float64)))[()]


def critical_ber(sigma_th_outer: float) -> float:
    """Largest inner-decoder error probability from which the outer code
    can still drive the overall error to zero: the raw channel BER of the
    outer code at its own threshold."""
    if sigma_th_outer <= 0:
        raise InvalidInputError("sigma must be positive")
    return float(q_function(1.0 / sigma_th_outer))


def ldgm_lower_bound(d_v: int, sigma: float) -> float:
    """Error-floor lower bound of a regular LDGM code: check messages are
    capped by the check's own channel estimate, so the decision mean cannot
    exceed (d_v + 1) times the channel mean."""
    if d_v < 0:
        raise InvalidInputError("d_v must be non-negative")
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    return float(q_function(math.sqrt(d_v + 1.0) / sigma))


def super_channel_sigma_bound(d_v: int, sigma: float) -> float:
    """Smallest possible equivalent noise level of the inner
    encoder-channel-decoder chain seen by the outer code."""
    if d_v < 0 or sigma <= 0:
        raise InvalidInputError("d_v must be non-negative and sigma positive")
    return sigma / math.sqrt(d_v + 1.0)


def scldgm_lower_bound(d_v: int, d_v_outer: int, sigma: float) -> float:
    """Error-floor lower bound of the concatenated code: the single-code
    bound applied to the best possible super-channel."""
    if d_v < 0 or d_v_outer < 0:
        raise InvalidInputError("degrees must be non-negative")
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    return float(q_function(math.sqrt((d_v_outer + 1.0) * (d_v + 1.0)) / sigma))


_GH_NODES = 96


@lru_cache(maxsize=None)
def _gh_rule(n=_GH_NODES):
    return np.polynomial.hermite.hermgauss(n)


def biawgn_capacity(sigma: float) -> float:
    """Capacity (bits/use) of the binary-input AWGN channel, by
    Gauss-Hermite quadrature over the channel LLR distribution."""
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    nodes, weights = _gh_rule()
    llr = 2.0 / sigma**2 + (2.0 / sigma) * math.sqrt(2.0) * nodes
    penalty = np.logaddexp(0.0, -llr) / math.log(2.0)
    return float(1.0 - weights @ penalty / math.sqrt(math.pi))


@lru_cache(maxsize=None)
def shannon_limit_db(rate: float) -> float:
    """Minimum Eb/No (dB) at which the BIAWGN capacity reaches the rate."""
    if not 0 < rate < 1:
        raise InvalidInputError("rate must be in (0, 1)")
    sigma_star = brentq(lambda s: biawgn_capacity(s) - rate, 1e-2, 50.0, xtol=1e-12)
    return eb_no_from_sigma(sigma_star, rate)


def _bisect_db(is_success, db_fail: float, db_pass: float, precision_db: float):
    """Shrink a (failing, passing) Eb/No bracket to the requested width."""
    while db_pass - db_fail > precision_db:
        mid = 0.5 * (db_fail + db_pass)
        if is_success(mid):
            db_pass = mid
        else:
            db_fail = mid
    return db_fail, db_pass


def _find_bracket(is_success, db_start: float, step: float = 1.0, limit: float = 12.0):
    """Walk upward from a guaranteed-failing Eb/No until success."""
    db_fail = db_start
    db_try = db_start + step
    while db_try <= db_start + limit:
        if is_success(db_try):
            return db_fail, db_try
        db_fail = db_try
        db_try += step
    raise BracketError(f"no success up to {db_start + limit:.2f} dB")


def outer_threshold(
    outer: CodeEnsemble,
    precision_db: float = DEFAULT_PRECISION_DB,
    grid: LlrGrid | None = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    success_error: float = OUTER_SUCCESS_ERROR,
) -> ThresholdResult:
    """Decoding threshold of a stand-alone outer code: the largest noise
    level at which density evolution with a channel PMF as input still
    drives the error probability down to success_error."""
    if outer.kind is CodeKind.LDGM_INNER:
        raise InvalidInputError("outer_threshold needs an outer-code ensemble")
    if precision_db <= 0:
        raise InvalidInputError("precision_db must be positive")
    grid = grid or LlrGrid()
    rate = outer.rate
    shannon = shannon_limit_db(rate)

    def is_success(db: float) -> bool:
        channel = gaussian_llr_pmf(grid, sigma_from_eb_no(db, rate))
        trace = evolve_outer(outer, channel, max_iters, target_error=success_error)
        return trace.final_error <= success_error

    db_fail, db_pass = _find_bracket(is_success, shannon)
    db_fail, db_pass = _bisect_db(is_success, db_fail, db_pass, precision_db)
    mid = 0.5 * (db_fail + db_pass)
    sigma_th = sigma_from_eb_no(mid, rate)
    return ThresholdResult(
        threshold_eb_no_db=mid,
        threshold_sigma=sigma_th,
        critical_ber=critical_ber(sigma_th),
        gap_to_shannon_db=mid - shannon,
        search_precision_db=db_pass - db_fail,
    )


def concatenated_threshold(
    inner: CodeEnsemble,
    outer: CodeEnsemble,
    precision_db: float = DEFAULT_PRECISION_DB,
    grid: LlrGrid | None = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    outer_result: ThresholdResult | None = None,
    cross_validate: bool = True,
) -> ThresholdResult:
    """Decoding threshold of the concatenated code: the smallest Eb/No at
    which the inner decoder reaches the critical BER fixed by the outer
    code.  Cross-validated by running the full two-step evolution at the
    passing bracket edge and requiring the overall error to vanish."""
    if inner.kind is not CodeKind.LDGM_INNER:
        raise InvalidInputError("inner ensemble must be an LDGM inner code")
    if precision_db <= 0:
        raise InvalidInputError("precision_db must be positive")
    grid = grid or LlrGrid()
    if outer_result is None:
        outer_result = outer_threshold(outer, precision_db, grid, max_iters)
    crit = outer_result.critical_ber
    rate = inner.rate * outer.rate
    shannon = shannon_limit_db(rate)

    def is_success(db: float) -> bool:
        trace, _ = evolve_inner(
            inner, sigma_from_eb_no(db, rate), max_iters, grid, target_error=crit
        )
        return trace.final_inner_error <= crit

    db_fail, db_pass = _find_bracket(is_success, shannon)
    db_fail, db_pass = _bisect_db(is_success, db_fail, db_pass, precision_db)
    mid = 0.5 * (db_fail + db_pass)
    if cross_validate:
        sigma_pass = sigma_from_eb_no(db_pass, rate)
        target = max(
            CONCATENATED_SUCCESS_ERROR,
            10.0 * concatenated_floor_bound(inner, outer, sigma_pass),
        )
        # The inner stage must run to its own fixed point before the
        # handoff; stopping it at the critical BER would degrade the
        # super-channel the outer stage sees.
        trace = two_step_dde(
            inner,
            outer,
            sigma_pass,
            max_iters,
            grid,
            outer_target=target,
        )
        if trace.final_error > target:
            raise ConsistencyError(
                f"two-step run at {db_pass:.3f} dB reached only "
                f"E={trace.final_error:.3e} (target {target:.3e})"
            )
    return ThresholdResult(
        threshold_eb_no_db=mid,
        threshold_sigma=sigma_from_eb_no(mid, rate),
        critical_ber=crit,
        gap_to_shannon_db=mid - shannon,
        search_precision_db=db_pass - db_fail,
    )


def convergence_profile(
    inner: CodeEnsemble,
    outer_critical_ber: float,
    eb_no_list,
    rate: float,
    grid: LlrGrid | None = None,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> list[tuple[float, float]]:
    """Iterations the inner decoder needs to reach the critical BER at each
    Eb/No; infinity where the budget is not enough."""
    grid = grid or LlrGrid()
    profile = []
    for db in eb_no_list:
        trace, _ = evolve_inner(
            inner, sigma_from_eb_no(db, rate), max_iters, grid,
            target_error=outer_critical_ber,
        )
        hit = trace.first_inner_iteration_below(outer_critical_ber)
        profile.append((db, float(hit) if hit is not None else math.inf))
    return profile
