"""Planted-pattern benchmark instances with empirical targets.

Each synthetic individual activates every planted pattern independently with
its frequency; active patterns are applied in ascending index and a later
pattern only writes attributes no earlier pattern fixed for that individual.
Attributes left uncovered are drawn from per-attribute base marginals.
Targets are the empirical frequencies of every unary cell plus every cell of
each distinct pattern attribute set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..model import AttributeSchema, ConstraintSet, expand_marginal_table, feature_frequencies

FREQ_RANGE = (0.05, 0.35)
_MARGINAL_STREAM, _PATTERN_STREAM, _ACTIVATION_STREAM, _FILL_STREAM = range(4)


@dataclass(frozen=True)
class Pattern:
    attrs: tuple[int, ...]
    values: tuple[int, ...]
    freq: float


@dataclass
class WuInstanceSpec:
    domain_sizes: tuple[int, ...]
    patterns: tuple[Pattern, ...]
    base_marginals: tuple[np.ndarray, ...] | None = None
    n_data: int = 100_000
    seed: int = 0
    name: str = "wu"
    extra: dict = field(default_factory=dict)
    # Dirichlet concentration for drawn base marginals; larger is closer to uniform
    concentration: float = 1.0

    def __post_init__(self):
        self.domain_sizes = tuple(int(d) for d in self.domain_sizes)
        K = len(self.domain_sizes)
        for p in self.patterns:
            if len(p.attrs) != len(p.values) or len(set(p.attrs)) != len(p.attrs):
                raise InvalidInputError(f"malformed pattern {p}")
            if any(a < 0 or a >= K for a in p.attrs):
                raise InvalidInputError(f"pattern {p} refers to a missing attribute")
            if any(v < 0 or v >= self.domain_sizes[a] for a, v in zip(p.attrs, p.values)):
                raise InvalidInputError(f"pattern {p} has an out-of-range value")
            if not 0.0 < p.freq < 1.0:
                raise InvalidInputError(f"pattern frequency {p.freq} outside (0, 1)")
        if not self.concentration > 0:
            raise InvalidInputError("concentration must be positive")
        if self.base_marginals is None:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, _MARGINAL_STREAM]))
            self.base_marginals = tuple(rng.dirichlet(np.full(d, float(self.concentration))) for d in self.domain_sizes)
        for d, q in zip(self.domain_sizes, self.base_marginals):
            q = np.asarray(q)
            if q.shape != (d,) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
                raise InvalidInputError("base marginals must be distributions over each domain")
        if self.n_data < 1:
            raise InvalidInputError("n_data must be >= 1")

    @property
    def schema(self) -> AttributeSchema:
        return AttributeSchema.from_sizes(self.domain_sizes)

    def to_dict(self) -> dict:
        return {
            "kind": "wu",
            "name": self.name,
            "domain_sizes": list(self.domain_sizes),
            "patterns": [{"attrs": list(p.attrs), "values": list(p.values), "freq": p.freq} for p in self.patterns],
            "base_marginals": [np.asarray(q).tolist() for q in self.base_marginals],
            "n_data": self.n_data,
            "seed": self.seed,
            "concentration": self.concentration,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> WuInstanceSpec:
        patterns = tuple(
            Pattern(tuple(p["attrs"]), tuple(p["values"]), float(p["freq"])) for p in doc.get("patterns", [])
        )
        marg = doc.get("base_marginals")
        return cls(
            tuple(doc["domain_sizes"]),
            patterns,
            None if marg is None else tuple(np.asarray(q, dtype=np.float64) for q in marg),
            int(doc.get("n_data", 100_000)),
            int(doc.get("seed", 0)),
            str(doc.get("name", "wu")),
            concentration=float(doc.get("concentration", 1.0)),
        )


def random_patterns(
    domain_sizes, n_patterns: int, arity: int, seed: int, freq_range=FREQ_RANGE, attr_sets=None
) -> tuple[Pattern, ...]:
    """Patterns over random (or given) attribute sets with uniform values and frequencies."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _PATTERN_STREAM]))
    K = len(domain_sizes)
    if attr_sets is None:
        if arity > K:
            raise InvalidInputError("pattern arity exceeds K")
        attr_sets = [tuple(sorted(rng.choice(K, size=arity, replace=False).tolist())) for _ in range(n_patterns)]
    out = []
    for attrs in attr_sets:
        values = tuple(int(rng.integers(domain_sizes[a])) for a in attrs)
        freq = float(rng.uniform(*freq_range))
        out.append(Pattern(tuple(int(a) for a in attrs), values, freq))
    return tuple(out)


def wu_sample(spec: WuInstanceSpec) -> np.ndarray:
    n, K = spec.n_data, len(spec.domain_sizes)
    states = np.zeros((n, K), dtype=np.int64)
    fixed = np.zeros((n, K), dtype=bool)
    act_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _ACTIVATION_STREAM]))
    for p in spec.patterns:
        active = act_rng.random(n) < p.freq
        for a, v in zip(p.attrs, p.values):
            write = active & ~fixed[:, a]
            states[write, a] = v
            fixed[write, a] = True
    fill_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _FILL_STREAM]))
    for k, q in enumerate(spec.base_marginals):
        free = ~fixed[:, k]
        states[free, k] = fill_rng.choice(len(q), size=int(free.sum()), p=q)
    return states


def wu_generate(spec: WuInstanceSpec) -> tuple[ConstraintSet, np.ndarray]:
    """Constraint set with empirical targets, plus the ground-truth sample."""
    states = wu_sample(spec)
    schema = spec.schema
    layout: list[tuple[str, tuple[int, ...]]] = [(f"U:{schema.names[k]}", (k,)) for k in range(schema.K)]
    seen = set()
    for i, p in enumerate(spec.patterns):
        attrs = tuple(sorted(p.attrs))
        if attrs in seen:
            continue
        seen.add(attrs)
        layout.append((f"P{i}:" + "-".join(schema.names[a] for a in attrs), attrs))
    placeholder = []
    for name, attrs in layout:
        shape = tuple(schema.domain_sizes[a] for a in attrs)
        placeholder += expand_marginal_table(attrs, np.zeros(shape), group=name)
    draft = ConstraintSet(schema, placeholder)
    freqs = feature_frequencies(states, draft)
    cs = draft.with_targets(freqs, keep_tables=False)
    return ConstraintSet(schema, cs.constraints, {name: 1.0 for name, _ in layout}), states


def a0_spec(seed: int = 1, n_data: int = 100_000) -> WuInstanceSpec:
    """K=6, domains [3,3,3,2,2,2], three binary patterns: 15 unary + 18 binary atoms."""
    d = (3, 3, 3, 2, 2, 2)
    pats = random_patterns(d, 3, 2, seed, attr_sets=[(0, 3), (1, 4), (2, 5)])
    freqs = (0.251, 0.235, 0.349)
    pats = tuple(Pattern(p.attrs, p.values, f) for p, f in zip(pats, freqs))
    return WuInstanceSpec(d, pats, n_data=n_data, seed=seed, name="a0")


A1A_DOMAINS = (4, 4, 2, 2, 4, 4, 3, 2)


def a1a_spec(seed: int = 0, n_data: int = 200_000) -> WuInstanceSpec:
    """K=8, four binary patterns: 25 unary + 36 binary atoms."""
    pats = random_patterns(A1A_DOMAINS, 4, 2, seed, freq_range=(0.095, 0.283), attr_sets=[(0, 2), (1, 3), (4, 7), (5, 6)])
    return WuInstanceSpec(A1A_DOMAINS, pats, n_data=n_data, seed=seed, name="a1a")


def a1c_ternary_spec(seed: int = 0, n_data: int = 200_000) -> WuInstanceSpec:
    """Same domains as A1a, three ternary patterns: 25 unary + 48 ternary atoms."""
    pats = random_patterns(
        A1A_DOMAINS, 3, 3, seed, freq_range=(0.095, 0.283), attr_sets=[(0, 2, 3), (1, 3, 7), (2, 4, 7)]
    )
    return WuInstanceSpec(A1A_DOMAINS, pats, n_data=n_data, seed=seed, name="a1c-ternary")


def scaling_domains(K: int) -> tuple[int, ...]:
    cycle = (2, 3, 2, 3, 3)
    return tuple(cycle[i % len(cycle)] for i in range(K))


A2_CONCENTRATION = 5.0


def a2_spec(
    K: int, seed: int = 0, n_data: int = 100_000, n_patterns: int | None = None, concentration: float = A2_CONCENTRATION
) -> WuInstanceSpec:
    """Ternary-only planted patterns on K attributes (K // 3 patterns by default).

    Base marginals are drawn from a Dirichlet(5) so ternary cells stay away from
    the 1e-4 range; with Dirichlet(1) the sampling floor of the MRE alone is
    about 0.03 at N=100,000 for K=20.
    """
    d = scaling_domains(K)
    pats = random_patterns(d, n_patterns or max(1, K // 3), 3, seed)
    return WuInstanceSpec(d, pats, n_data=n_data, seed=seed, name=f"a2-K{K}", concentration=concentration)
