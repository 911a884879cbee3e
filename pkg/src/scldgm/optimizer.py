"""Differential-evolution search for inner-code degree distributions that
reach the outer code's critical BER at the lowest possible Eb/No.

Candidates are coefficient vectors over an allowed variable-degree set,
projected onto the probability simplex; the paired check distribution is
completed from the edge balance.  The search screens populations with a
reduced-fidelity evolution and confirms successes at full fidelity, walking
the target Eb/No down by bisection between the last feasible and last
infeasible levels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import shannon_limit_db, sigma_from_eb_no
from .dde import CodeEnsemble, CodeKind, evolve_inner, ldgm_ensemble_from_vn
from .degree import DegreeDistribution, node_dist
from .errors import InfeasibleError, InvalidInputError, SearchFailureError
from .grid import LlrGrid

_COEFF_FLOOR = 1e-9


@dataclass
class OptimizationConfig:
    degrees: tuple[int, ...]
    outer: CodeEnsemble
    rate: float
    inner_rate: float
    critical_ber: float
    population: int = 30
    f_weight: float = 0.85
    crossover: float = 0.7
    generations: int = 150
    screen_iters: int = 50
    screen_n_bits: int = 9
    confirm_iters: int = 200
    confirm_n_bits: int = 10
    precision_db: float = 0.01
    start_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.degrees) < 1 or any(d < 1 for d in self.degrees):
            raise InvalidInputError("candidate degree set must be positive integers")
        if self.population < 4:
            raise InvalidInputError("population must be at least 4")
        if not 0.0 < self.crossover <= 1.0:
            raise InvalidInputError("crossover rate must be in (0, 1]")
        if not 0.0 < self.f_weight < 2.0:
            raise InvalidInputError("mutation weight must be in (0, 2)")
        if not 0.0 < self.critical_ber < 0.5:
            raise InvalidInputError("critical BER must be in (0, 0.5)")
        self.degrees = tuple(sorted(set(int(d) for d in self.degrees)))


@dataclass
class Candidate:
    vn_dist: DegreeDistribution
    cn_dist: DegreeDistribution | None
    feasible_at_db: float | None = None


@dataclass
class GenerationRecord:
    level_db: float
    generation: int
    best_error: float
    feasible: bool


@dataclass
class DeResult:
    best: Candidate
    threshold_db: float
    history: list[GenerationRecord] = field(default_factory=list)


def _project_simplex(vector: np.ndarray) -> np.ndarray:
    """Clip negatives and renormalize; guarantees a valid distribution."""
    v = np.clip(vector, 0.0, None)
    total = v.sum()
    if total <= 0.0:
        v = np.ones_like(v)
        total = v.sum()
    return v / total


def _vector_to_candidate(vector: np.ndarray, cfg: OptimizationConfig) -> Candidate:
    terms = {
        d: float(c)
        for d, c in zip(cfg.degrees, vector)
        if c > _COEFF_FLOOR
    }
    if not terms:
        terms = {cfg.degrees[0]: 1.0}
    total = sum(terms.values())
    vn = node_dist({d: c / total for d, c in terms.items()})
    try:
        ensemble = ldgm_ensemble_from_vn(vn, cfg.inner_rate, CodeKind.LDGM_INNER)
    except InfeasibleError:
        return Candidate(vn, None)
    return Candidate(vn, ensemble.cn_dist)


def evaluate_candidate(
    candidate: Candidate,
    eb_no_db: float,
    rate: float,
    budget: int,
    critical_ber: float,
    inner_rate: float,
    grid: LlrGrid | None = None,
) -> tuple[float, bool]:
    """Final inner error probability at the given Eb/No and whether it
    reaches the critical BER; candidates without a valid check side score
    infeasible."""
    if candidate.cn_dist is None:
        return math.inf, False
    ensemble = CodeEnsemble(
        candidate.vn_dist, candidate.cn_dist, CodeKind.LDGM_INNER, inner_rate
    )
    grid = grid or LlrGrid()
    trace, _ = evolve_inner(
        ensemble,
        sigma_from_eb_no(eb_no_db, rate),
        budget,
        grid,
        target_error=critical_ber,
    )
    error = trace.final_inner_error
    return error, error <= critical_ber


class _DePopulation:
    """DE/rand/1/bin over simplex-projected coefficient vectors."""

    def __init__(self, cfg: OptimizationConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        dim = len(cfg.degrees)
        self.vectors = np.stack(
            [_project_simplex(rng.dirichlet(np.ones(dim))) for _ in range(cfg.population)]
        )
        self.errors = np.full(cfg.population, np.inf)

    def evaluate_all(self, eb_no_db: float, screen_grid: LlrGrid):
        cfg = self.cfg
        for i in range(cfg.population):
            self.errors[i], _ = evaluate_candidate(
                _vector_to_candidate(self.vectors[i], cfg),
                eb_no_db,
                cfg.rate,
                cfg.screen_iters,
                cfg.critical_ber,
                cfg.inner_rate,
                screen_grid,
            )

    def step(self, eb_no_db: float, screen_grid: LlrGrid):
        cfg = self.cfg
        n, dim = self.vectors.shape
        for i in range(n):
            choices = [j for j in range(n) if j != i]
            r1, r2, r3 = self.rng.choice(choices, size=3, replace=False)
            mutant = self.vectors[r1] + cfg.f_weight * (self.vectors[r2] - self.vectors[r3])
            cross = self.rng.random(dim) < cfg.crossover
            cross[self.rng.integers(dim)] = True
            trial = _project_simplex(np.where(cross, mutant, self.vectors[i]))
            error, _ = evaluate_candidate(
                _vector_to_candidate(trial, cfg),
                eb_no_db,
                cfg.rate,
                cfg.screen_iters,
                cfg.critical_ber,
                cfg.inner_rate,
                screen_grid,
            )
            if error <= self.errors[i]:
                self.vectors[i] = trial
                self.errors[i] = error

    def best_index(self) -> int:
        return int(np.argmin(self.errors))

    def state(self) -> dict:
        return {
            "vectors": self.vectors.tolist(),
            "errors": self.errors.tolist(),
        }

    def restore(self, state: dict):
        self.vectors = np.asarray(state["vectors"])
        self.errors = np.asarray(state["errors"])


def _confirm(vector: np.ndarray, cfg: OptimizationConfig, db: float,
             confirm_grid: LlrGrid) -> tuple[Candidate, float, bool]:
    candidate = _vector_to_candidate(vector, cfg)
    error, feasible = evaluate_candidate(
        candidate, db, cfg.rate, cfg.confirm_iters, cfg.critical_ber,
        cfg.inner_rate, confirm_grid,
    )
    if feasible:
        candidate.feasible_at_db = db
    return candidate, error, feasible


def _run_level(
    population: _DePopulation,
    cfg: OptimizationConfig,
    db: float,
    screen_grid: LlrGrid,
    confirm_grid: LlrGrid,
    history: list[GenerationRecord],
) -> Candidate | None:
    """Run DE generations at one Eb/No level until a full-fidelity feasible
    candidate appears; None when the generation budget runs out."""
    population.evaluate_all(db, screen_grid)
    failed_confirm = None
    for generation in range(cfg.generations + 1):
        best = population.best_index()
        screened_feasible = population.errors[best] <= cfg.critical_ber
        confirmed = None
        if screened_feasible:
            key = population.vectors[best].tobytes()
            if key != failed_confirm:
                candidate, _, ok = _confirm(population.vectors[best], cfg, db, confirm_grid)
                if ok:
                    confirmed = candidate
                else:
                    failed_confirm = key
        history.append(
            GenerationRecord(db, generation, float(population.errors[best]),
                             confirmed is not None)
        )
        if confirmed is not None:
            return confirmed
        if generation < cfg.generations:
            population.step(db, screen_grid)
    return None


def de_search(cfg: OptimizationConfig, checkpoint_path=None, resume_from=None) -> DeResult:
    """Walk the target Eb/No down to the lowest level at which some
    candidate reaches the critical BER, bisecting between the last feasible
    and last infeasible levels.

    With checkpoint_path set, the bracket state is written after every
    level; resume_from restores such a checkpoint and continues.
    """
    rng = np.random.default_rng(cfg.seed)
    screen_grid = LlrGrid(n_bits=cfg.screen_n_bits)
    confirm_grid = LlrGrid(n_bits=cfg.confirm_n_bits)
    population = _DePopulation(cfg, rng)
    history: list[GenerationRecord] = []
    shannon = shannon_limit_db(cfg.rate)

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if list(cfg.degrees) != state["degrees"]:
            raise InvalidInputError("checkpoint degree set differs from config")
        population.restore(state["population"])
        rng.bit_generator.state = state["rng_state"]
        db_feasible = state["db_feasible"]
        db_infeasible = state["db_infeasible"]
        best = _vector_to_candidate(
            _project_simplex(
                np.array([state["best_vn"].get(str(d), 0.0) for d in cfg.degrees])
            ),
            cfg,
        )
        best.feasible_at_db = db_feasible
    else:
        start_db = cfg.start_db if cfg.start_db is not None else shannon + 1.0
        best = _run_level(population, cfg, start_db, screen_grid, confirm_grid, history)
        if best is None:
            raise SearchFailureError(
                f"no feasible degree distribution at {start_db:.2f} dB "
                f"(best screened error {population.errors[population.best_index()]:.3e})"
            )
        db_feasible = start_db
        db_infeasible = shannon  # theory: below capacity nothing converges
    while db_feasible - db_infeasible > cfg.precision_db:
        mid = 0.5 * (db_feasible + db_infeasible)
        found = _run_level(population, cfg, mid, screen_grid, confirm_grid, history)
        if found is not None:
            best = found
            db_feasible = mid
        else:
            db_infeasible = mid
        if checkpoint_path is not None:
            save_checkpoint(
                checkpoint_path, cfg, population, rng, db_feasible, db_infeasible, best
            )
    return DeResult(best, db_feasible, history)


def save_checkpoint(path, cfg, population, rng, db_feasible, db_infeasible, best):
    payload = {
        "population": population.state(),
        "rng_state": rng.bit_generator.state,
        "db_feasible": db_feasible,
        "db_infeasible": db_infeasible,
        "best_vn": {str(d): c for d, c in best.vn_dist.terms.items()},
        "degrees": list(cfg.degrees),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
