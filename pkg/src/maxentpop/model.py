"""Categorical product spaces, pattern-indicator constraints and their lookup tables.

Everything here is immutable after construction. Category values are dense
integer indices ``0..d_k-1``; labels live only in :class:`AttributeSchema`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError

TABLE_MASS_TOL = 1e-9


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple[str, ...]
    domain_sizes: tuple[int, ...]
    categories: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        sizes = tuple(int(d) for d in self.domain_sizes)
        if not names:
            raise InvalidInputError("schema needs at least one attribute")
        if len(names) != len(sizes):
            raise InvalidInputError("names and domain_sizes differ in length")
        if len(set(names)) != len(names):
            raise InvalidInputError("attribute names must be unique")
        for name, d in zip(names, sizes):
            if d < 2:
                raise InvalidInputError(f"attribute {name!r} has domain size {d} < 2")
        cats = self.categories
        if not cats:
            cats = tuple(tuple(str(v) for v in range(d)) for d in sizes)
        cats = tuple(tuple(str(c) for c in labels) for labels in cats)
        if len(cats) != len(sizes):
            raise InvalidInputError("one category list per attribute is required")
        for name, d, labels in zip(names, sizes, cats):
            if len(labels) != d or len(set(labels)) != d:
                raise InvalidInputError(f"attribute {name!r}: need {d} distinct category labels")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "domain_sizes", sizes)
        object.__setattr__(self, "categories", cats)

    @classmethod
    def from_sizes(cls, domain_sizes: Sequence[int], prefix: str = "A") -> AttributeSchema:
        return cls(tuple(f"{prefix}{k}" for k in range(len(domain_sizes))), tuple(domain_sizes))

    @property
    def K(self) -> int:
        return len(self.domain_sizes)

    @property
    def log_space_size(self) -> float:
        """Natural log of |X|, without forming the product."""
        return float(sum(math.log(d) for d in self.domain_sizes))

    @property
    def log10_space_size(self) -> float:
        return self.log_space_size / math.log(10.0)

    @property
    def space_size(self) -> int:
        return math.prod(self.domain_sizes)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown attribute {name!r}") from None

    def category_index(self, k: int, label: str) -> int:
        try:
            return self.categories[k].index(str(label))
        except ValueError:
            raise InvalidInputError(
                f"attribute {self.names[k]!r} has no category {label!r}"
            ) from None

    def check_tuple(self, x: Sequence[int]) -> np.ndarray:
        arr = np.asarray(x, dtype=np.int64)
        if arr.shape != (self.K,):
            raise InvalidInputError(f"tuple must have length {self.K}, got shape {arr.shape}")
        if np.any(arr < 0) or np.any(arr >= np.asarray(self.domain_sizes)):
            raise InvalidInputError(f"category index out of range in tuple {arr.tolist()}")
        return arr

    def check_states(self, states: np.ndarray) -> np.ndarray:
        arr = np.asarray(states)
        if arr.ndim != 2 or arr.shape[1] != self.K:
            raise InvalidInputError(f"expected an (N, {self.K}) state matrix, got {arr.shape}")
        if arr.shape[0] and (arr.min() < 0 or np.any(arr.max(axis=0) >= np.asarray(self.domain_sizes))):
            raise InvalidInputError("category index out of range in state matrix")
        return arr


@dataclass(frozen=True)
class AtomicConstraint:
    """Indicator ``1[x_S = v]`` paired with a target frequency."""

    attrs: tuple[int, ...]
    values: tuple[int, ...]
    target: float
    group: str | None = None

    def __post_init__(self):
        attrs = tuple(int(a) for a in self.attrs)
        values = tuple(int(v) for v in self.values)
        if not attrs:
            raise InvalidInputError("constraint pattern must involve at least one attribute")
        if len(attrs) != len(values):
            raise InvalidInputError("pattern attributes and values differ in length")
        if any(b <= a for a, b in zip(attrs, attrs[1:])):
            raise InvalidInputError(f"pattern attributes must be strictly increasing: {attrs}")
        target = float(self.target)
        if not (0.0 <= target <= 1.0):
            raise InvalidInputError(f"target {target} outside [0, 1]")
        object.__setattr__(self, "attrs", attrs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "target", target)

    @property
    def arity(self) -> int:
        return len(self.attrs)

    @property
    def key(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return self.attrs, self.values

    def matches(self, x: Sequence[int]) -> bool:
        return all(x[a] == v for a, v in zip(self.attrs, self.values))


@dataclass(frozen=True)
class PatternGroup:
    """Atoms sharing one attribute set, compiled to mixed-radix cell codes."""

    attrs: tuple[int, ...]
    shape: tuple[int, ...]
    strides: np.ndarray
    cells: np.ndarray
    atoms: np.ndarray

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def codes(self, states: np.ndarray) -> np.ndarray:
        """Cell code of every row restricted to ``attrs``."""
        out = states[:, self.attrs[0]].astype(np.int64) * int(self.strides[0])
        for a, s in zip(self.attrs[1:], self.strides[1:]):
            out += states[:, a] * int(s)
        return out

    def dense(self, values: np.ndarray) -> np.ndarray:
        """Scatter per-atom ``values`` into a dense table of this group's shape."""
        table = np.zeros(self.size)
        table[self.cells] = values[self.atoms]
        return table.reshape(self.shape)


def _strides(shape: Sequence[int]) -> np.ndarray:
    strides = np.ones(len(shape), dtype=np.int64)
    for i in range(len(shape) - 2, -1, -1):
        strides[i] = strides[i + 1] * shape[i + 1]
    return strides


@dataclass(frozen=True)
class ConstraintSet:
    """Schema plus an ordered list of atomic constraints.

    ``table_mass`` tags groups that expand a whole marginal table; the targets
    of each tagged group must add up to the stated mass.
    """

    schema: AttributeSchema
    constraints: tuple[AtomicConstraint, ...]
    table_mass: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        constraints = tuple(self.constraints)
        object.__setattr__(self, "constraints", constraints)
        object.__setattr__(self, "table_mass", dict(self.table_mass))
        sizes = self.schema.domain_sizes
        seen: dict[tuple, int] = {}
        for j, c in enumerate(constraints):
            if c.attrs[-1] >= self.schema.K:
                raise InvalidInputError(f"constraint {j} refers to attribute {c.attrs[-1]} >= K")
            for a, v in zip(c.attrs, c.values):
                if v >= sizes[a]:
                    raise InvalidInputError(
                        f"constraint {j}: value {v} out of range for {self.schema.names[a]!r}"
                    )
            if c.key in seen:
                raise InvalidInputError(
                    f"constraints {seen[c.key]} and {j} share the pattern {c.key}"
                )
            seen[c.key] = j
        for name, mass in self.table_mass.items():
            idx = self.groups.get(name)
            if not idx:
                raise InvalidInputError(f"table group {name!r} has no atoms")
            total = math.fsum(constraints[j].target for j in idx)
            if abs(total - mass) > TABLE_MASS_TOL:
                raise InvalidInputError(
                    f"table group {name!r} targets sum to {total!r}, expected {mass!r}"
                )

    @property
    def m(self) -> int:
        return len(self.constraints)

    @cached_property
    def targets(self) -> np.ndarray:
        arr = np.array([c.target for c in self.constraints], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def arities(self) -> np.ndarray:
        return np.array([c.arity for c in self.constraints], dtype=np.int64)

    @cached_property
    def groups(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for j, c in enumerate(self.constraints):
            if c.group is not None:
                out.setdefault(c.group, []).append(j)
        return out

    @cached_property
    def zero_targets(self) -> np.ndarray:
        """Indices of admitted-but-flagged atoms with target exactly 0."""
        return np.flatnonzero(self.targets == 0.0)

    @cached_property
    def pattern_groups(self) -> tuple[PatternGroup, ...]:
        by_attrs: dict[tuple[int, ...], list[int]] = {}
        for j, c in enumerate(self.constraints):
            by_attrs.setdefault(c.attrs, []).append(j)
        out = []
        for attrs in sorted(by_attrs, key=lambda s: (len(s), s)):
            shape = tuple(self.schema.domain_sizes[a] for a in attrs)
            strides = _strides(shape)
            atoms = np.array(by_attrs[attrs], dtype=np.int64)
            cells = np.array(
                [int(np.dot(self.constraints[j].values, strides)) for j in atoms], dtype=np.int64
            )
            out.append(PatternGroup(attrs, shape, strides, cells, atoms))
        return tuple(out)

    def with_targets(self, targets: Sequence[float], *, keep_tables: bool = True) -> ConstraintSet:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (self.m,):
            raise InvalidInputError(f"expected {self.m} targets, got shape {targets.shape}")
        atoms = tuple(
            AtomicConstraint(c.attrs, c.values, float(t), c.group)
            for c, t in zip(self.constraints, targets)
        )
        return ConstraintSet(self.schema, atoms, self.table_mass if keep_tables else {})

    def subset(self, indices: Iterable[int]) -> ConstraintSet:
        idx = list(indices)
        atoms = tuple(self.constraints[j] for j in idx)
        names = {c.group for c in atoms if c.group is not None}
        tables = {}
        for name, mass in self.table_mass.items():
            if name in names:
                if len(self.groups[name]) != sum(1 for c in atoms if c.group == name):
                    raise InvalidInputError(f"subset splits table group {name!r}")
                tables[name] = mass
        return ConstraintSet(self.schema, atoms, tables)

    def select_groups(self, names: Iterable[str]) -> ConstraintSet:
        wanted = set(names)
        missing = wanted - set(self.groups)
        if missing:
            raise InvalidInputError(f"unknown groups: {sorted(missing)}")
        return self.subset(j for j, c in enumerate(self.constraints) if c.group in wanted)

    def describe(self, j: int) -> str:
        c = self.constraints[j]
        return "&".join(
            f"{self.schema.names[a]}={self.schema.categories[a][v]}" for a, v in zip(c.attrs, c.values)
        )


@dataclass(frozen=True)
class LookupEntry:
    constraint: int
    value: int
    context_attrs: tuple[int, ...]
    context_values: tuple[int, ...]


@dataclass(frozen=True)
class AttrLookup:
    """For each attribute k, the constraints whose pattern touches k."""

    domain_sizes: tuple[int, ...]
    entries: tuple[tuple[LookupEntry, ...], ...]

    def __getitem__(self, k: int) -> tuple[LookupEntry, ...]:
        return self.entries[k]

    @property
    def total_entries(self) -> int:
        return sum(len(e) for e in self.entries)


def build_attr_lookup(cs: ConstraintSet) -> AttrLookup:
    per_attr: list[list[LookupEntry]] = [[] for _ in range(cs.schema.K)]
    for j, c in enumerate(cs.constraints):
        for pos, k in enumerate(c.attrs):
            per_attr[k].append(
                LookupEntry(
                    j,
                    c.values[pos],
                    c.attrs[:pos] + c.attrs[pos + 1 :],
                    c.values[:pos] + c.values[pos + 1 :],
                )
            )
    return AttrLookup(cs.schema.domain_sizes, tuple(tuple(e) for e in per_attr))


def evaluate_features(x: Sequence[int], cs: ConstraintSet) -> np.ndarray:
    """Boolean feature vector ``f(x)`` of length m."""
    x = cs.schema.check_tuple(x)
    out = np.zeros(cs.m, dtype=bool)
    for g in cs.pattern_groups:
        code = int(np.dot(x[list(g.attrs)], g.strides))
        out[g.atoms[g.cells == code]] = True
    return out


def _check_lambda(cs: ConstraintSet, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (cs.m,):
        raise InvalidInputError(f"lambda must have length {cs.m}, got shape {lam.shape}")
    return lam


def tuple_energy(x: Sequence[int], cs: ConstraintSet, lam) -> float:
    """Log-unnormalised energy ``sum_j lam_j f_j(x)``."""
    lam = _check_lambda(cs, lam)
    f = evaluate_features(x, cs)
    return float(np.dot(f.astype(np.float64), lam))


def feature_frequencies(states: np.ndarray, cs: ConstraintSet, weights: np.ndarray | None = None) -> np.ndarray:
    """Fraction (or weighted mass) of rows matching each constraint."""
    states = np.asarray(states)
    n = states.shape[0]
    out = np.empty(cs.m)
    for g in cs.pattern_groups:
        counts = np.bincount(g.codes(states), weights=weights, minlength=g.size)
        out[g.atoms] = counts[g.cells]
    if weights is None:
        out /= n
    return out


def expand_marginal_table(
    attrs: Sequence[int],
    table,
    *,
    conditional: bool = False,
    prior=None,
    group: str | None = None,
) -> list[AtomicConstraint]:
    """One atom per cell of a dense table over ``attrs``.

    With ``conditional=True`` the last axis is the conditioned attribute,
    every row must sum to 1, and ``prior`` (over the leading axes) turns
    cells into joint probabilities ``prior[a] * table[a, b]``.
    """
    table = np.asarray(table, dtype=np.float64)
    attrs = [int(a) for a in attrs]
    if table.ndim != len(attrs):
        raise InvalidInputError(f"table has {table.ndim} axes for {len(attrs)} attributes")
    if len(set(attrs)) != len(attrs):
        raise InvalidInputError("table attributes must be distinct")
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise InvalidInputError("table cells must be finite and nonnegative")
    if conditional:
        if prior is None:
            raise InvalidInputError("conditional tables need a prior over the conditioning attributes")
        prior = np.asarray(prior, dtype=np.float64)
        if prior.shape != table.shape[:-1]:
            raise InvalidInputError(f"prior shape {prior.shape} != {table.shape[:-1]}")
        if np.any(prior < 0):
            raise InvalidInputError("prior must be nonnegative")
        rows = table.sum(axis=-1)
        if np.any(np.abs(rows - 1.0) > 1e-9):
            raise InvalidInputError("conditional table rows must sum to 1")
        joint = prior[..., None] * table
    else:
        joint = table
    order = sorted(range(len(attrs)), key=lambda i: attrs[i])
    sorted_attrs = tuple(attrs[i] for i in order)
    joint = np.transpose(joint, order)
    atoms = []
    for cell in product(*(range(s) for s in joint.shape)):
        atoms.append(AtomicConstraint(sorted_attrs, cell, float(joint[cell]), group))
    return atoms
