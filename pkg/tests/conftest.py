from __future__ import annotations

import math
from itertools import product

import numpy as np
import pytest

from maxentpop.model import AtomicConstraint, AttributeSchema, ConstraintSet


def random_instance(rng: np.random.Generator, max_k: int = 6, max_d: int = 3, n_atoms: int = 8, max_arity: int = 3):
    """Random constraint set with arbitrary targets and a random lambda."""
    K = int(rng.integers(2, max_k + 1))
    d = tuple(int(x) for x in rng.integers(2, max_d + 1, size=K))
    schema = AttributeSchema.from_sizes(d)
    seen, atoms = set(), []
    for _ in range(n_atoms * 4):
        r = int(rng.integers(1, min(max_arity, K) + 1))
        attrs = tuple(sorted(rng.choice(K, size=r, replace=False).tolist()))
        vals = tuple(int(rng.integers(d[a])) for a in attrs)
        if (attrs, vals) in seen:
            continue
        seen.add((attrs, vals))
        atoms.append(AtomicConstraint(attrs, vals, float(rng.uniform(0.01, 0.5))))
        if len(atoms) == n_atoms:
            break
    cs = ConstraintSet(schema, atoms)
    lam = rng.normal(0.0, 1.0, size=cs.m)
    return cs, lam


def brute_force_distribution(cs: ConstraintSet, lam):
    """All tuples, their probabilities and the dense feature matrix (naive loops)."""
    tuples = list(product(*(range(d) for d in cs.schema.domain_sizes)))
    F = np.array([[float(c.matches(x)) for c in cs.constraints] for x in tuples])
    u = F @ np.asarray(lam)
    p = np.exp(u - u.max())
    return tuples, p / p.sum(), F


def ln2_pair():
    """K=2, d=[2,2], one binary atom S={0,1}, v=(0,0) with lambda = ln 2."""
    cs = ConstraintSet(AttributeSchema.from_sizes((2, 2)), [AtomicConstraint((0, 1), (0, 0), 0.4)])
    return cs, np.array([math.log(2.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> "PASS ..." / "FAIL ..." line, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    print(ACCEPTANCE[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
