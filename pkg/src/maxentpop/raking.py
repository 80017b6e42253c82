"""Generalised raking (IPF) of a fixed sample: multiplicative reweighting until targets match."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .metrics import MRE_FLOOR, effective_sample_size, mre
from .model import AttributeSchema, ConstraintSet, feature_frequencies

log = logging.getLogger(__name__)


@dataclass
class WeightedSample:
    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise InvalidInputError("sample must be a non-empty (N, K) matrix")
        if self.weights.shape != (self.states.shape[0],):
            raise InvalidInputError("one weight per sample row is required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError("weights must be nonnegative and sum to 1")

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def frequencies(self, cs: ConstraintSet) -> np.ndarray:
        return feature_frequencies(self.states, cs, self.weights)


@dataclass
class RakeConfig:
    max_cycles: int = 200
    tol: float = 1e-6
    weight_cap: float = 1e9

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError("tolerance must be > 0")
        if self.max_cycles < 1:
            raise InvalidInputError("max_cycles must be >= 1")


@dataclass
class RakeReport:
    final_mre: float
    max_rel_error: float
    cycles: int
    converged: bool
    diverged: bool
    empty_support: list[int]
    n_eff: float
    mre_history: list[float] = field(default_factory=list)
    monotone_violations: int = 0

    @property
    def infeasible_on_sample(self) -> bool:
        return bool(self.empty_support)

    def as_dict(self) -> dict:
        return {
            "final_mre": self.final_mre,
            "max_rel_error": self.max_rel_error,
            "cycles": self.cycles,
            "converged": self.converged,
            "diverged": self.diverged,
            "infeasible_on_sample": self.infeasible_on_sample,
            "empty_support": list(self.empty_support),
            "n_eff": self.n_eff,
            "monotone_violations": self.monotone_violations,
        }


def draw_initial_sample(schema: AttributeSchema, n: int, seed: int = 0) -> WeightedSample:
    """N rows i.i.d. uniform over each attribute domain, uniform weights."""
    if n < 1:
        raise InvalidInputError("sample size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    states = np.column_stack([rng.integers(0, d, size=n) for d in schema.domain_sizes]).astype(np.int64)
    return WeightedSample(states, np.full(n, 1.0 / n))


def processing_order(cs: ConstraintSet) -> list[int]:
    """Ascending arity, then constraint index."""
    return sorted(range(cs.m), key=lambda j: (cs.constraints[j].arity, j))


def rake_step(w: np.ndarray, rows: np.ndarray, target: float) -> bool:
    """Make one constraint exact in place. Returns False when it has no weighted support.

    Matching rows scale by ``target / current`` and the rest by
    ``(1 - target) / (1 - current)``, which keeps the total at 1.
    """
    current = float(w[rows].sum())
    if current <= 0.0:
        return target <= 0.0
    rest = float(w.sum()) - current
    inside = w[rows] * (target / current)
    if rest > 0.0:
        w *= (1.0 - target) / rest
    w[rows] = inside
    w /= w.sum()
    return True


def rake(
    sample: WeightedSample,
    cs: ConstraintSet,
    targets=None,
    config: RakeConfig | None = None,
) -> tuple[WeightedSample, RakeReport]:
    config = config or RakeConfig()
    alpha = cs.targets if targets is None else np.asarray(targets, dtype=np.float64)
    if alpha.shape != (cs.m,):
        raise InvalidInputError(f"expected {cs.m} targets, got shape {alpha.shape}")
    cs.schema.check_states(sample.states)
    n = sample.size
    rows: list[np.ndarray] = [None] * cs.m  # type: ignore[list-item]
    for g in cs.pattern_groups:
        codes = g.codes(sample.states)
        for atom, cell in zip(g.atoms, g.cells):
            rows[atom] = np.flatnonzero(codes == cell)
    order = processing_order(cs)
    positive = alpha > MRE_FLOOR
    w = sample.weights.copy()
    history: list[float] = []
    empty: set[int] = set()
    converged = diverged = False
    violations = 0
    cycles = 0
    max_rel = np.inf
    for cycles in range(1, config.max_cycles + 1):
        for j in order:
            if not rake_step(w, rows[j], float(alpha[j])):
                empty.add(j)
        if float(w.max()) * n > config.weight_cap:
            diverged = True
        est = feature_frequencies(sample.states, cs, w)
        history.append(mre(est, alpha))
        if len(history) > 1 and history[-1] > history[-2] + 1e-15:
            violations += 1
            log.debug("raking MRE rose in cycle %d: %.3g -> %.3g", cycles, history[-2], history[-1])
        rel = np.abs(est - alpha)
        max_rel = float(np.max(rel[positive] / alpha[positive])) if np.any(positive) else 0.0
        if diverged:
            log.warning("raking diverged: max weight * N exceeded %.3g", config.weight_cap)
            break
        if max_rel <= config.tol and not np.any(rel[~positive] > config.tol):
            converged = True
            break
    out = WeightedSample(sample.states, w / w.sum())
    report = RakeReport(
        final_mre=history[-1],
        max_rel_error=max_rel,
        cycles=cycles,
        converged=converged,
        diverged=diverged,
        empty_support=sorted(j for j in empty if alpha[j] > 0),
        n_eff=effective_sample_size(out.weights),
        mre_history=history,
        monotone_violations=violations,
    )
    return out, report
