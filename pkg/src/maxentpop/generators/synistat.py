"""Syn-ISTAT: a 15-attribute demographic Bayesian network with analytically exact targets.

Six anchors are drawn from fixed marginals. Employment, income and main
transport are sampled from their ternary tables (T3, T1, T2); the other six
non-anchors from their single binary table. The remaining binary tables
(B2, B3, B4, B6, B7, B9, B10) never drive sampling; they only name attribute
pairs whose joint targets are read off the network.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from itertools import combinations

import numpy as np

from ..errors import InvalidInputError
from ..model import AttributeSchema, ConstraintSet, expand_marginal_table

DATA_FILE = "synistat_v1.json"
HELDOUT_TABLES = ("T1", "T2", "T3")
ROW_SUM_TOL = 1e-12
_SAMPLE_STREAM = 11


@dataclass(frozen=True)
class CPT:
    variable: int
    parents: tuple[int, ...]
    table: np.ndarray  # shape (*parent domains, d_variable)


@dataclass(frozen=True)
class PublishedTable:
    name: str
    given: tuple[int, ...]
    target: int
    table: np.ndarray

    @property
    def attrs(self) -> tuple[int, ...]:
        return self.given + (self.target,)


@dataclass(frozen=True)
class BayesNetSpec:
    schema: AttributeSchema
    cpts: tuple[CPT, ...]  # topological order
    anchors: tuple[int, ...]
    tables: tuple[PublishedTable, ...]
    published_unary: dict
    version: int = 1

    def __post_init__(self):
        seen: set[int] = set()
        for cpt in self.cpts:
            if any(p not in seen for p in cpt.parents):
                raise InvalidInputError(f"CPT of {self.schema.names[cpt.variable]!r} precedes a parent")
            rows = cpt.table.sum(axis=-1)
            if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
                raise InvalidInputError(f"CPT rows of {self.schema.names[cpt.variable]!r} do not sum to 1")
            seen.add(cpt.variable)
        if seen != set(range(self.schema.K)):
            raise InvalidInputError("every variable needs exactly one sampling CPT")

    def cpt_of(self, var: int) -> CPT:
        return next(c for c in self.cpts if c.variable == var)

    def table(self, name: str) -> PublishedTable:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def _topological(cpts: list[CPT]) -> list[CPT]:
    done: set[int] = set()
    out: list[CPT] = []
    pending = sorted(cpts, key=lambda c: (len(c.parents) > 0, c.variable))
    while pending:
        for c in pending:
            if all(p in done for p in c.parents):
                out.append(c)
                done.add(c.variable)
                pending.remove(c)
                break
        else:
            raise InvalidInputError("network has a cycle")
    return out


def load_bayesnet(doc: dict) -> BayesNetSpec:
    """Build a spec from the structured-text document (see ``synistat_v1.json``)."""
    if doc.get("format") != "maxentpop-bayesnet":
        raise InvalidInputError("not a maxentpop-bayesnet document")
    variables = doc["variables"]
    schema = AttributeSchema(
        tuple(v["name"] for v in variables),
        tuple(len(v["categories"]) for v in variables),
        tuple(tuple(v["categories"]) for v in variables),
    )
    d = schema.domain_sizes
    cpts: list[CPT] = []
    anchors = []
    for name, probs in doc["anchors"].items():
        k = schema.index_of(name)
        anchors.append(k)
        cpts.append(CPT(k, (), np.array([float(p) for p in probs])))
    tables = []
    for t in doc["tables"]:
        given = tuple(schema.index_of(g) for g in t["given"])
        target = schema.index_of(t["target"])
        arr = np.array([[float(x) for x in row] for row in t["rows"]])
        arr = arr.reshape(tuple(d[g] for g in given) + (d[target],))
        tables.append(PublishedTable(t["name"], given, target, arr))
    for k in range(schema.K):
        if k in anchors:
            continue
        own = [t for t in tables if t.target == k]
        ternary = [t for t in own if len(t.given) == 2]
        chosen = ternary if ternary else own
        if len(chosen) != 1:
            raise InvalidInputError(f"cannot pick a sampling table for {schema.names[k]!r}")
        cpts.append(CPT(k, chosen[0].given, chosen[0].table))
    published = {
        schema.index_of(n): np.array([float(p) for p in v]) for n, v in doc.get("published_unary", {}).items()
    }
    return BayesNetSpec(
        schema, tuple(_topological(cpts)), tuple(sorted(anchors)), tuple(tables), published, int(doc.get("version", 1))
    )


def synistat_spec() -> BayesNetSpec:
    text = resources.files("maxentpop.generators").joinpath("data", DATA_FILE).read_text()
    return load_bayesnet(json.loads(text))


def synistat_sample(spec: BayesNetSpec, n: int, seed: int = 0) -> np.ndarray:
    """Ancestral sampling in topological order; one uniform stream per variable."""
    if n < 1:
        raise InvalidInputError("sample size must be >= 1")
    states = np.empty((n, spec.schema.K), dtype=np.int64)
    for cpt in spec.cpts:
        rng = np.random.default_rng(np.random.SeedSequence([seed, _SAMPLE_STREAM, cpt.variable]))
        u = rng.random(n)
        if cpt.parents:
            probs = cpt.table[tuple(states[:, p] for p in cpt.parents)]
            cum = np.cumsum(probs, axis=1)
            choice = (cum < (u * cum[:, -1])[:, None]).sum(axis=1)
        else:
            cum = np.cumsum(cpt.table)
            choice = np.searchsorted(cum, u * cum[-1], side="right")
        states[:, cpt.variable] = np.minimum(choice, cpt.table.shape[-1] - 1)
    return states


def joint_marginal(spec: BayesNetSpec, attrs) -> np.ndarray:
    """Exact marginal of the network over ``attrs`` (axes in the given order)."""
    operands = []
    for cpt in spec.cpts:
        operands += [cpt.table, list(cpt.parents) + [cpt.variable]]
    operands.append(list(attrs))
    return np.einsum(*operands, optimize="greedy")


def _table_groups(spec: BayesNetSpec) -> list[tuple[str, tuple[int, ...]]]:
    groups = [(f"U:{name}", (k,)) for k, name in enumerate(spec.schema.names)]
    groups += [(t.name, tuple(sorted(t.attrs))) for t in spec.tables]
    return groups


def implied_unary(spec: BayesNetSpec, var: int) -> np.ndarray:
    """Average of the network-derived marginal of ``var`` over every table that
    contains it, renormalised."""
    sources = [attrs for name, attrs in _table_groups(spec) if var in attrs and len(attrs) > 1]
    if var in spec.anchors or not sources:
        return joint_marginal(spec, [var])
    margs = []
    for attrs in sources:
        joint = joint_marginal(spec, attrs)
        axis = tuple(i for i, a in enumerate(attrs) if a != var)
        margs.append(joint.sum(axis=axis))
    avg = np.mean(margs, axis=0)
    return avg / avg.sum()


def synistat_targets(spec: BayesNetSpec) -> ConstraintSet:
    """All 31 tables (15 unary, 13 binary, 3 ternary) expanded cell by cell."""
    atoms = []
    masses = {}
    for name, attrs in _table_groups(spec):
        if len(attrs) == 1:
            joint = implied_unary(spec, attrs[0])
        else:
            joint = joint_marginal(spec, attrs)
        atoms += expand_marginal_table(attrs, joint, group=name)
        masses[name] = 1.0
    return ConstraintSet(spec.schema, atoms, masses)


def synistat_split(cs: ConstraintSet) -> tuple[ConstraintSet, ConstraintSet]:
    """Unary + binary tables for training, the ternary tables held out."""
    train = [g for g in cs.groups if g not in HELDOUT_TABLES]
    return cs.select_groups(train), cs.select_groups(HELDOUT_TABLES)


def implied_marginal_report(spec: BayesNetSpec) -> dict[str, dict]:
    """Per-source implied marginals computed from the published tables.

    Each published ``P(target | given)`` is weighted by the network's prior
    over ``given``. Reports the averaged-and-renormalised result, the maximum
    pairwise discrepancy between sources, the network marginal and the
    published reference row.
    """
    out = {}
    for k, name in enumerate(spec.schema.names):
        if k in spec.anchors:
            continue
        per_source = {}
        for t in spec.tables:
            if t.target != k:
                continue
            prior = joint_marginal(spec, list(t.given))
            per_source[t.name] = np.tensordot(prior, t.table, axes=len(t.given))
        avg = np.mean(list(per_source.values()), axis=0)
        avg = avg / avg.sum()
        disc = max(
            (float(np.max(np.abs(a - b))) for a, b in combinations(per_source.values(), 2)),
            default=0.0,
        )
        out[name] = {
            "sources": {s: v.tolist() for s, v in per_source.items()},
            "averaged": avg.tolist(),
            "max_pairwise_discrepancy": disc,
            "network": joint_marginal(spec, [k]).tolist(),
            "published": spec.published_unary.get(k, np.array([])).tolist(),
        }
    return out


def published_table_deltas(spec: BayesNetSpec) -> dict[str, float]:
    """Max |network conditional - published cell| for every published table."""
    out = {}
    for t in spec.tables:
        joint = joint_marginal(spec, list(t.attrs))
        cond = joint / joint.sum(axis=-1, keepdims=True)
        out[t.name] = float(np.max(np.abs(cond - t.table)))
    return out


def space_summary(spec: BayesNetSpec) -> dict:
    return {
        "K": spec.schema.K,
        "log10_space": spec.schema.log10_space_size,
        "space": spec.schema.space_size,
        "tables": len(_table_groups(spec)),
        "entropy_max": math.log(spec.schema.space_size),
    }
