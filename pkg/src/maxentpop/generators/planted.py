"""Planted exponential families: draw lambda*, compute targets exactly by enumeration."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from ..errors import InvalidInputError
from ..exact import DEFAULT_MAX_ENUM, check_budget, exact_expectations
from ..model import AtomicConstraint, AttributeSchema, ConstraintSet

log = logging.getLogger(__name__)

LAMBDA_RANGE = (-1.1, 1.1)


@dataclass
class PlantedFamilySpec:
    """``n_atoms`` cells drawn from pairwise (or higher) tables.

    With ``identifiable=True`` the last category of every attribute is a
    reference level and never appears in a pattern, so the indicator features
    are linearly independent of each other and of the constant.
    """

    domain_sizes: tuple[int, ...]
    n_atoms: int
    arity: int = 2
    lam_range: tuple[float, float] = LAMBDA_RANGE
    seed: int = 0
    identifiable: bool = True

    def __post_init__(self):
        self.domain_sizes = tuple(int(d) for d in self.domain_sizes)
        if self.arity < 1 or self.arity > len(self.domain_sizes):
            raise InvalidInputError("arity must lie in [1, K]")
        if self.n_atoms < 1:
            raise InvalidInputError("n_atoms must be >= 1")
        lo, hi = self.lam_range
        if lo > hi:
            raise InvalidInputError("lam_range must be (low, high)")

    @property
    def schema(self) -> AttributeSchema:
        return AttributeSchema.from_sizes(self.domain_sizes)

    def candidates(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        out = []
        for attrs in combinations(range(len(self.domain_sizes)), self.arity):
            ranges = [range(self.domain_sizes[a] - (1 if self.identifiable else 0)) for a in attrs]
            out += [(attrs, vals) for vals in product(*ranges)]
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "planted",
            "domain_sizes": list(self.domain_sizes),
            "n_atoms": self.n_atoms,
            "arity": self.arity,
            "lam_range": list(self.lam_range),
            "seed": self.seed,
            "identifiable": self.identifiable,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> PlantedFamilySpec:
        return cls(
            tuple(doc["domain_sizes"]),
            int(doc["n_atoms"]),
            int(doc.get("arity", 2)),
            tuple(doc.get("lam_range", LAMBDA_RANGE)),
            int(doc.get("seed", 0)),
            bool(doc.get("identifiable", True)),
        )


def planted_family_generate(
    spec: PlantedFamilySpec, max_enum: float = DEFAULT_MAX_ENUM
) -> tuple[ConstraintSet, np.ndarray]:
    schema = spec.schema
    cands = spec.candidates()
    if spec.n_atoms > len(cands):
        raise InvalidInputError(f"only {len(cands)} candidate cells for {spec.n_atoms} atoms")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    chosen = sorted(rng.choice(len(cands), size=spec.n_atoms, replace=False).tolist())
    atoms = [
        AtomicConstraint(cands[i][0], cands[i][1], 0.0, "pair " + "-".join(schema.names[a] for a in cands[i][0]))
        for i in chosen
    ]
    draft = ConstraintSet(schema, atoms)
    check_budget(draft, max_enum)
    lam_star = rng.uniform(spec.lam_range[0], spec.lam_range[1], size=draft.m)
    log.info("planted lambda* realised range [%.3f, %.3f]", lam_star.min(), lam_star.max())
    targets = exact_expectations(draft, lam_star, max_enum)
    return draft.with_targets(targets), lam_star
