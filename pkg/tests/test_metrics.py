from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxentpop import InvalidInputError
from maxentpop.exact import DEFAULT_MAX_ENUM, EnumeratedModel, solve_exact
from maxentpop.generators import a0_spec, synistat_sample, synistat_spec, synistat_split, synistat_targets, wu_generate
from maxentpop.metrics import (
    diversity,
    effective_sample_size,
    excluded_count,
    gini,
    heldout_mre,
    kl_to_truth,
    lorenz_curve,
    mre,
)
from maxentpop.model import AtomicConstraint, AttributeSchema, ConstraintSet
from maxentpop.pcd import PcdConfig, fit_pcd


class TestMre:
    def test_exact(self):
        assert mre([0.2, 0.3], [0.2, 0.3]) == 0.0

    def test_hand_values(self):
        assert mre([0.45, 0.55], [0.5, 0.5]) == pytest.approx(0.10, abs=1e-15)
        assert mre([0.2006], [0.2]) == pytest.approx(0.003, abs=1e-12)

    def test_floor_excludes(self):
        assert mre([0.1, 0.5], [0.0, 0.5]) == 0.0
        assert excluded_count([0.0, 0.5, 1e-12]) == 2

    def test_all_excluded(self):
        with pytest.raises(InvalidInputError):
            mre([0.1], [0.0])

    def test_naive_loop(self, rng):
        alpha = rng.uniform(0, 1, 50)
        alpha[:5] = 0.0
        est = rng.uniform(0, 1, 50)
        naive = sum(abs(e - a) / a for e, a in zip(est, alpha) if a > 1e-9) / 45
        assert mre(est, alpha) == pytest.approx(naive, rel=1e-14)


class TestDiversity:
    def test_uniform_distinct(self):
        states = np.arange(200).reshape(100, 2)
        rep = diversity(states)
        assert rep.n_eff == pytest.approx(100, rel=1e-14) and rep.gini == pytest.approx(0.0, abs=1e-12)
        assert rep.unique_profiles == 100 and rep.entropy == pytest.approx(math.log(100))

    def test_point_mass(self):
        n = 10
        states = np.arange(2 * n).reshape(n, 2)
        w = np.zeros(n)
        w[3] = 1.0
        rep = diversity(states, w)
        assert rep.n_eff == 1.0 and rep.entropy == 0.0
        assert rep.gini == pytest.approx((n - 1) / n)

    def test_half_half(self):
        states = np.arange(8).reshape(4, 2)
        rep = diversity(states, [0.5, 0.5, 0.0, 0.0])
        assert rep.n_eff == pytest.approx(2.0) and rep.unique_profiles == 2 and rep.unique_support == 4

    def test_aggregates_identical_profiles(self):
        states = np.array([[0, 1], [0, 1], [1, 1], [1, 1]])
        rep = diversity(states)
        assert rep.unique_profiles == 2 and rep.entropy == pytest.approx(math.log(2))

    def test_representation_independence(self, rng):
        states = rng.integers(0, 3, size=(500, 4))
        a, b = diversity(states), diversity(states, np.full(500, 1 / 500))
        assert a.entropy == pytest.approx(b.entropy, abs=1e-12) and a.n_eff == pytest.approx(b.n_eff, rel=1e-12)

    def test_permutation_invariant(self, rng):
        w = rng.dirichlet(np.ones(300))
        perm = rng.permutation(300)
        assert effective_sample_size(w) == pytest.approx(effective_sample_size(w[perm]), rel=1e-12)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            diversity(np.zeros((0, 3), dtype=int))

    def test_eps_support(self):
        states = np.arange(8).reshape(4, 2)
        rep = diversity(states, [0.5, 0.4, 0.09, 0.01])
        assert rep.unique_support == 4 and rep.unique_eps_support == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=60).filter(lambda v: sum(v) > 0))
def test_gini_lorenz_agree(values):
    w = np.array(values) / sum(values)
    x, y = lorenz_curve(w)
    assert x[0] == 0 and y[0] == 0 and x[-1] == 1 and y[-1] == 1
    assert np.all(np.diff(y) >= -1e-15)
    area = float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)
    assert abs(gini(w) - (1 - 2 * area)) <= 1e-9
    assert 0 <= gini(w) < 1


class TestKL:
    def test_fitted_equals_truth(self):
        cs = ConstraintSet(AttributeSchema.from_sizes((2, 2)), [AtomicConstraint((0,), (0,), 0.7)])
        truth = EnumeratedModel(cs, [0.8])
        assert kl_to_truth(truth, [0.8]) == pytest.approx(0.0, abs=1e-14)

    def test_uniform_vs_biased(self):
        cs = ConstraintSet(AttributeSchema.from_sizes((2, 2)), [AtomicConstraint((0,), (0,), 0.7)])
        expected = 0.5 * math.log(0.5 / 0.7) + 0.5 * math.log(0.5 / 0.3)
        assert kl_to_truth(EnumeratedModel(cs, [0.0]), [math.log(7 / 3)]) == pytest.approx(expected, abs=1e-14)

    def test_unavailable_beyond_budget(self):
        cs = ConstraintSet(AttributeSchema.from_sizes((2, 2)), [AtomicConstraint((0,), (0,), 0.7)])
        truth = EnumeratedModel(cs, [0.0], max_enum=10)
        big = ConstraintSet(AttributeSchema.from_sizes((3,) * 4), [AtomicConstraint((0,), (0,), 0.7)])
        assert kl_to_truth(truth, [0.0], big) is None

    def test_a0_band(self):
        cs, _ = wu_generate(a0_spec())
        truth = EnumeratedModel(cs, solve_exact(cs).lam)
        res = fit_pcd(cs, config=PcdConfig(pool_size=10_000, sweeps=3, learning_rate=0.05, seed=0))
        assert 1e-4 <= kl_to_truth(truth, res.lam) <= 5e-3


class TestHeldout:
    def test_ground_truth_population(self):
        spec = synistat_spec()
        _, held = synistat_split(synistat_targets(spec))
        n = 200_000
        out = heldout_mre(synistat_sample(spec, n, seed=3), held)
        assert set(out) == {"T1", "T2", "T3"}
        # relative errors of tiny cells dominate MRE, so compare each table with
        # its expected sampling MRE, mean_j sqrt(2/pi) * sqrt((1 - a_j) / (n a_j))
        for name, idx in held.groups.items():
            a = held.targets[idx]
            floor = float(np.mean(math.sqrt(2 / math.pi) * np.sqrt((1 - a) / (n * a))))
            assert out[name] <= 2 * floor
        states = synistat_sample(spec, n, seed=3)
        from maxentpop.model import feature_frequencies

        assert np.max(np.abs(feature_frequencies(states, held) - held.targets)) <= 5 / math.sqrt(n)

    def test_single_profile(self):
        spec = synistat_spec()
        _, held = synistat_split(synistat_targets(spec))
        out = heldout_mre(np.zeros((10, 15), dtype=np.int64), held)
        assert all(np.isfinite(v) and v > 0.5 for v in out.values())
