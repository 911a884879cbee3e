"""Degree distributions of code ensembles and their rate bookkeeping.

Distributions are stored sparsely as {node degree: coefficient}.  Both the
node and the edge perspective are keyed by the node degree, so converting
back and forth is lossless.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

from .errors import InfeasibleError, InvalidInputError

SUM_TOLERANCE = 1e-12
RENORMALIZE_TOLERANCE = 1e-9


class Perspective(str, Enum):
    NODE = "node"
    EDGE = "edge"


@dataclass(frozen=True)
class DegreeDistribution:
    """Sparse degree distribution, node or edge perspective.

    Coefficients must be probabilities summing to one.  Inputs off by at
    most ``RENORMALIZE_TOLERANCE`` are renormalized with a warning; larger
    deviations are rejected.
    """

    perspective: Perspective
    terms: dict[int, float] = field(compare=True)

    def __post_init__(self):
        if not self.terms:
            raise InvalidInputError("degree distribution has no terms")
        cleaned = {}
        for degree, coeff in self.terms.items():
            d = int(degree)
            if d != degree or d < 1:
                raise InvalidInputError(f"invalid degree {degree!r}")
            c = float(coeff)
            if not 0.0 <= c <= 1.0 + RENORMALIZE_TOLERANCE:
                raise InvalidInputError(f"coefficient {c} for degree {d} outside [0, 1]")
            if c > 0.0:
                cleaned[d] = c
        if not cleaned:
            raise InvalidInputError("degree distribution has only zero coefficients")
        total = math.fsum(cleaned.values())
        if abs(total - 1.0) > RENORMALIZE_TOLERANCE:
            raise InvalidInputError(f"coefficients sum to {total}, not 1")
        if abs(total - 1.0) > SUM_TOLERANCE:
            warnings.warn(
                f"degree coefficients sum to {total}; renormalizing", stacklevel=3
            )
            cleaned = {d: c / total for d, c in cleaned.items()}
        object.__setattr__(self, "terms", dict(sorted(cleaned.items())))

    @property
    def degrees(self) -> list[int]:
        return list(self.terms)

    @property
    def max_degree(self) -> int:
        return max(self.terms)

    def coeff(self, degree: int) -> float:
        return self.terms.get(degree, 0.0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "perspective": self.perspective.value,
                "terms": {str(d): c for d, c in self.terms.items()},
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DegreeDistribution":
        try:
            raw = json.loads(text)
            perspective = Perspective(raw["perspective"])
            terms = {int(d): float(c) for d, c in raw["terms"].items()}
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"bad degree distribution JSON: {exc}") from exc
        return cls(perspective, terms)


def node_dist(terms: dict[int, float]) -> DegreeDistribution:
    return DegreeDistribution(Perspective.NODE, terms)


def edge_dist(terms: dict[int, float]) -> DegreeDistribution:
    return DegreeDistribution(Perspective.EDGE, terms)


def regular(degree: int, perspective: Perspective = Perspective.NODE) -> DegreeDistribution:
    return DegreeDistribution(perspective, {degree: 1.0})


def average_degree(dist: DegreeDistribution) -> float:
    """Mean node degree of a node-perspective distribution."""
    if dist.perspective is not Perspective.NODE:
        raise InvalidInputError("average_degree expects a node-perspective distribution")
    return math.fsum(d * c for d, c in dist.terms.items())


def node_to_edge(dist: DegreeDistribution) -> DegreeDistribution:
    """Convert node to edge perspective: the edge fraction of degree i is
    i*coeff_i normalized by the mean degree."""
    if dist.perspective is not Perspective.NODE:
        raise InvalidInputError("node_to_edge expects a node-perspective distribution")
    mean = average_degree(dist)
    return DegreeDistribution(
        Perspective.EDGE, {d: d * c / mean for d, c in dist.terms.items()}
    )


def edge_to_node(dist: DegreeDistribution) -> DegreeDistribution:
    """Inverse of node_to_edge."""
    if dist.perspective is not Perspective.EDGE:
        raise InvalidInputError("edge_to_node expects an edge-perspective distribution")
    scale = math.fsum(c / d for d, c in dist.terms.items())
    return DegreeDistribution(
        Perspective.NODE, {d: c / d / scale for d, c in dist.terms.items()}
    )


def complete_check_distribution(lambda_node: DegreeDistribution, r_i: float) -> DegreeDistribution:
    """Check-node distribution over two consecutive degrees that balances
    the edge count of a variable-node distribution at inner rate r_i.

    The balance k' * mean(vn) = n_i * mean(cn) fixes mean(cn) to
    mean(vn) * r_i / (1 - r_i); a distribution on {floor(mean), floor(mean)+1}
    matches any non-integer mean, and an exact integer mean yields a single
    degree.
    """
    if not 0.0 < r_i < 1.0:
        raise InvalidInputError(f"inner rate {r_i} outside (0, 1)")
    target = average_degree(lambda_node) * r_i / (1.0 - r_i)
    if target < 1.0:
        raise InfeasibleError(f"required mean check degree {target} < 1")
    low = int(math.floor(target))
    frac = target - low
    if frac <= SUM_TOLERANCE:
        return DegreeDistribution(Perspective.NODE, {low: 1.0})
    if 1.0 - frac <= SUM_TOLERANCE:
        return DegreeDistribution(Perspective.NODE, {low + 1: 1.0})
    return DegreeDistribution(Perspective.NODE, {low: 1.0 - frac, low + 1: frac})
