"""Discretized density evolution for LDGM inner codes, LDGM outer codes,
and LDPC outer codes, plus the two-step composition for the concatenated
ensemble.

Check updates follow the product rule with the check node's own channel
observation in the product (LDGM) or without any observation (LDPC).
Variable updates convolve the channel PMF with the incoming message PMF.
Mixtures use edge-perspective weights for messages and node-perspective
weights for the decision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

from .degree import (
    DegreeDistribution,
    Perspective,
    average_degree,
    complete_check_distribution,
    node_dist,
    node_to_edge,
)
from .errors import InvalidInputError
from .grid import (
    LlrGrid,
    QuantizedPmf,
    convolve,
    convolve_powers,
    gaussian_llr_pmf,
    mix,
    r_combine,
    r_power,
    r_self_combines,
    unit_pmf,
)

# How the homogeneous part of a check update combines its j-1 message
# copies: "tree" pairs them by repeated squaring, "fold" combines them one
# at a time.  Both quantize every pairwise result to the same grid and
# agree on thresholds to well under the search precision; tree is
# O(log j) combinations instead of O(j), which dominates the runtime for
# the degree-150..250 outer checks.
CN_CHAIN_MODE = "tree"

DEFAULT_MAX_ITERS = 200

# Relative improvement below which an iteration counts as stalled, and the
# number of consecutive stalled iterations that terminates evolution.
STALL_RELATIVE = 1e-12
STALL_RUN = 5


class CodeKind(Enum):
    LDGM_INNER = "ldgm-inner"
    LDGM_OUTER = "ldgm-outer"
    LDPC_OUTER = "ldpc-outer"


class TraceStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max-iterations"
    STALLED = "stalled"


_BALANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CodeEnsemble:
    """Degree-distribution pair with its code rate and decoder kind."""

    vn_dist: DegreeDistribution
    cn_dist: DegreeDistribution
    kind: CodeKind
    rate: float

    def __post_init__(self):
        if self.vn_dist.perspective is not Perspective.NODE:
            raise InvalidInputError("vn_dist must be node perspective")
        if self.cn_dist.perspective is not Perspective.NODE:
            raise InvalidInputError("cn_dist must be node perspective")
        if not 0.0 < self.rate < 1.0:
            raise InvalidInputError(f"rate {self.rate} outside (0, 1)")
        # Edge balance: vn_count * mean(vn) = cn_count * mean(cn), with the
        # vn/cn counts implied by the rate and the decoder kind.
        ratio = average_degree(self.vn_dist) / average_degree(self.cn_dist)
        if self.kind is CodeKind.LDPC_OUTER:
            expected = 1.0 - self.rate
        else:
            expected = (1.0 - self.rate) / self.rate
        if abs(ratio - expected) > _BALANCE_TOLERANCE * max(1.0, expected):
            raise InvalidInputError(
                f"edge balance {ratio} inconsistent with rate {self.rate} "
                f"(expected {expected})"
            )


def regular_ensemble(d_v: int, d_c: int, kind: CodeKind) -> CodeEnsemble:
    """(d_v, d_c)-regular ensemble with the rate implied by the kind."""
    if kind is CodeKind.LDPC_OUTER:
        rate = 1.0 - d_v / d_c
    else:
        rate = d_c / (d_c + d_v)
    return CodeEnsemble(node_dist({d_v: 1.0}), node_dist({d_c: 1.0}), kind, rate)


def ldgm_ensemble_from_vn(
    vn_dist: DegreeDistribution, rate: float, kind: CodeKind = CodeKind.LDGM_INNER
) -> CodeEnsemble:
    """LDGM ensemble with the check side completed from the edge balance."""
    cn = complete_check_distribution(vn_dist, rate)
    return CodeEnsemble(vn_dist, cn, kind, rate)


@dataclass
class DdeTrace:
    """Per-iteration error probabilities and decision means of a run."""

    inner: list[tuple[int, float, float]] = field(default_factory=list)
    outer: list[tuple[int, float, float]] = field(default_factory=list)
    status: TraceStatus = TraceStatus.MAX_ITERATIONS

    def record(self, stage: str, iteration: int, error: float, mean: float) -> None:
        rows = self.inner if stage == "inner" else self.outer
        if rows and iteration <= rows[-1][0]:
            raise InvalidInputError("iteration indices must increase")
        if not 0.0 <= error <= 1.0 + 1e-9:
            raise InvalidInputError(f"error probability {error} outside [0, 1]")
        rows.append((iteration, error, mean))

    @property
    def final_inner_error(self) -> float:
        return self.inner[-1][1]

    @property
    def final_error(self) -> float:
        rows = self.outer if self.outer else self.inner
        return rows[-1][1]

    def inner_errors(self) -> list[float]:
        return [e for _, e, _ in self.inner]

    def first_inner_iteration_below(self, target: float) -> int | None:
        for iteration, error, _ in self.inner:
            if error <= target:
                return iteration
        return None

    def write_csv(self, fileobj) -> None:
        writer = csv.writer(fileobj)
        writer.writerow(["stage", "iteration", "error_prob", "decision_mean"])
        for stage, rows in (("inner", self.inner), ("outer", self.outer)):
            for iteration, error, mean in rows:
                writer.writerow(
                    [stage, iteration, format(error, ".17g"), format(mean, ".17g")]
                )


def decision_pmf(
    msg: QuantizedPmf, channel: QuantizedPmf, vn_dist: DegreeDistribution
) -> QuantizedPmf:
    """Decision-rule PMF: mixture over node-perspective VN degrees i of the
    channel PMF convolved with the i-fold message PMF (all edges count)."""
    if vn_dist.perspective is not Perspective.NODE:
        raise InvalidInputError("decision mixture needs node perspective")
    powers = convolve_powers(msg, vn_dist.degrees)
    mixture = mix([powers[d] for d in vn_dist.degrees], list(vn_dist.terms.values()))
    return convolve(channel, mixture)


class _Stall:
    def __init__(self):
        self.previous = None
        self.run = 0

    def update(self, error: float) -> bool:
        if self.previous is not None:
            if self.previous > 0:
                improvement = (self.previous - error) / self.previous
            else:
                improvement = 0.0
            self.run = self.run + 1 if improvement < STALL_RELATIVE else 0
        self.previous = error
        return self.run >= STALL_RUN


def _cn_update(
    v_msg: QuantizedPmf,
    cn_edge: DegreeDistribution,
    cn_obs: QuantizedPmf | None,
) -> QuantizedPmf:
    """Check-to-variable message PMF: mixture over edge-perspective check
    degrees j of the combination of j-1 incoming messages, seeded with the
    observation PMF for LDGM checks."""
    if CN_CHAIN_MODE == "tree":
        combos = r_self_combines(v_msg, [d - 1 for d in cn_edge.degrees if d > 1])
    parts = []
    for d in cn_edge.degrees:
        if d == 1:
            # No incoming messages: an LDGM check passes its observation,
            # an LDPC degree-1 check pins its neighbor.
            parts.append(cn_obs if cn_obs is not None else unit_pmf(v_msg.grid, v_msg.grid.l_max))
            continue
        if CN_CHAIN_MODE == "tree":
            pure = combos[d - 1]
            parts.append(pure if cn_obs is None else r_combine(cn_obs, pure))
        else:
            if cn_obs is None:
                parts.append(r_power(v_msg, v_msg, d - 2) if d > 2 else v_msg)
            else:
                parts.append(r_power(cn_obs, v_msg, d - 1))
    return mix(parts, list(cn_edge.terms.values()))


def _vn_update(
    u_msg: QuantizedPmf, vn_edge: DegreeDistribution, channel: QuantizedPmf
) -> QuantizedPmf:
    """Variable-to-check message PMF: mixture over edge-perspective degrees
    i of the channel PMF convolved with i-1 incoming messages."""
    powers = convolve_powers(u_msg, [d - 1 for d in vn_edge.degrees])
    mixture = mix([powers[d - 1] for d in vn_edge.degrees], list(vn_edge.terms.values()))
    return convolve(channel, mixture)


def _evolve(
    ensemble: CodeEnsemble,
    vn_channel: QuantizedPmf,
    cn_obs: QuantizedPmf | None,
    max_iters: int,
    target_error: float,
    trace: DdeTrace,
    stage: str,
) -> QuantizedPmf:
    vn_edge = node_to_edge(ensemble.vn_dist)
    cn_edge = node_to_edge(ensemble.cn_dist)
    grid = vn_channel.grid
    v_msg = unit_pmf(grid)
    decision = vn_channel
    stall = _Stall()
    for iteration in range(1, max_iters + 1):
        # Renormalize the per-iteration state: a high-degree check update
        # raises the total mass to the check degree, so rounding-level
        # deficits would otherwise compound exponentially.
        u_msg = _cn_update(v_msg, cn_edge, cn_obs).renormalized()
        v_msg = _vn_update(u_msg, vn_edge, vn_channel).renormalized()
        decision = decision_pmf(u_msg, vn_channel, ensemble.vn_dist).renormalized()
        error = decision.error_mass()
        trace.record(stage, iteration, error, decision.mean())
        if error <= target_error:
            trace.status = TraceStatus.CONVERGED
            return decision
        if stall.update(error):
            trace.status = TraceStatus.STALLED
            return decision
    trace.status = TraceStatus.MAX_ITERATIONS
    return decision


def evolve_inner(
    ensemble: CodeEnsemble,
    sigma: float,
    max_iters: int = DEFAULT_MAX_ITERS,
    grid: LlrGrid | None = None,
    target_error: float = 0.0,
) -> tuple[DdeTrace, QuantizedPmf]:
    """Run density evolution for an inner LDGM code at noise level sigma.

    Starts from all-mass-at-zero messages, alternates check and variable
    updates, and records the decision-rule error probability after every
    iteration.  Stops early once the error reaches target_error or stops
    improving.  Returns the trace and the final decision PMF.
    """
    if ensemble.kind is not CodeKind.LDGM_INNER:
        raise InvalidInputError(f"evolve_inner needs an LDGM inner code, got {ensemble.kind}")
    if sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    if max_iters < 1:
        raise InvalidInputError("max_iters must be at least 1")
    grid = grid or LlrGrid()
    channel = gaussian_llr_pmf(grid, sigma)
    trace = DdeTrace()
    decision = _evolve(ensemble, channel, channel, max_iters, target_error, trace, "inner")
    return trace, decision


def evolve_outer(
    ensemble: CodeEnsemble,
    q_u0: QuantizedPmf,
    max_iters: int = DEFAULT_MAX_ITERS,
    target_error: float = 0.0,
) -> DdeTrace:
    """Run density evolution for an outer code whose input LLRs have PMF
    q_u0 (the inner decision PMF, or a channel PMF for stand-alone runs).

    LDGM outer checks are parity bits seen through the same super-channel,
    so their updates are seeded with q_u0; LDPC checks carry no observation.
    """
    if ensemble.kind is CodeKind.LDGM_INNER:
        raise InvalidInputError("evolve_outer needs an outer-code ensemble")
    if max_iters < 1:
        raise InvalidInputError("max_iters must be at least 1")
    cn_obs = q_u0 if ensemble.kind is CodeKind.LDGM_OUTER else None
    trace = DdeTrace()
    _evolve(ensemble, q_u0, cn_obs, max_iters, target_error, trace, "outer")
    return trace


def two_step_dde(
    inner: CodeEnsemble,
    outer: CodeEnsemble,
    sigma: float,
    iters: int = DEFAULT_MAX_ITERS,
    grid: LlrGrid | None = None,
    inner_target: float = 0.0,
    outer_target: float = 0.0,
) -> DdeTrace:
    """Inner evolution to completion, then outer evolution seeded with the
    final inner decision PMF; the combined trace holds both error series."""
    inner_trace, handoff = evolve_inner(inner, sigma, iters, grid, inner_target)
    outer_trace = evolve_outer(outer, handoff, iters, outer_target)
    combined = DdeTrace(
        inner=inner_trace.inner, outer=outer_trace.outer, status=outer_trace.status
    )
    return combined
