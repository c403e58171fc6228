"""Correction/resampling route tests with one shared hand-computed example.

The frozen two-child example used throughout:

* child A: paths ``[[0], [1]]``, mass 2; child B: paths ``[[10], [20]]``,
  mass 3 (so the product prefactor is 6).
* joint weight ``w(a, b) = 1 + 2a + (b-10)/10 + a(b-10)/10`` giving the
  table ``[1, 2, 3, 5]`` in atom order ``(0,10), (0,20), (1,10), (1,20)``
  (child 0 varies slowest).
* generic mass ``6 * mean(1,2,3,5) = 16.5``; diagonal-index mass
  ``6 * mean(1,5) = 18``.
* with child A carrying weights ``(3/4, 1/4)`` the per-atom corrections are
  ``N*W = (1.5, 0.5)`` keyed by A's index, so the adjusted table is
  ``[1.5, 3, 1.5, 2.5]`` and the mass ``6 * 2.125 = 12.75``.

Law checks draw with a fixed seed and compare frequencies against exact
probabilities at 6-7 standard errors, so they are deterministic.
"""

import numpy as np
import pytest
from scipy.special import logsumexp

from dacsmc.errors import (
    AllZeroWeights,
    BudgetTooSmall,
    EmptyIndexSet,
    MaterializationCapExceeded,
    NonFiniteWeight,
)
from dacsmc.particles import ParticleCloud, logmeanexp
from dacsmc.resampling import (
    IndexSet,
    _vose_fill,
    _vose_fill_fast,
    build_categorical,
    correct_general,
    correct_incomplete,
    design_index_set,
    resample_factorized,
    resample_general,
    resample_mixture,
    resample_nested,
)
from dacsmc.weights import Factorized, General, MixtureOfProducts, Nested


def child_a(log_weights=None):
    return ParticleCloud(
        node=1, log_mass=np.log(2.0), paths=np.array([[0.0], [1.0]]), log_weights=log_weights
    )


def child_b():
    return ParticleCloud(node=2, log_mass=np.log(3.0), paths=np.array([[10.0], [20.0]]))


def joint_eval(x):
    a, b = x[:, 0], x[:, 1]
    return np.log(1.0 + 2.0 * a + (b - 10.0) / 10.0 + a * (b - 10.0) / 10.0)


class TestBuildCategorical:
    def test_frozen_normalization(self):
        s = build_categorical(np.log([2.0, 1.0, 1.0]))
        assert np.allclose(s.probabilities, [0.5, 0.25, 0.25], atol=1e-15)
        assert s.m == 3

    def test_matches_logsumexp_normalization(self):
        # the max-shift shortcut must agree with the reference normalizer
        rng = np.random.default_rng(11)
        lw = rng.standard_normal(257) * 40.0
        s = build_categorical(lw)
        assert np.allclose(s.probabilities, np.exp(lw - logsumexp(lw)), atol=1e-15)

    def test_shift_invariance(self):
        lw = np.log([0.1, 0.2, 0.7])
        assert np.allclose(
            build_categorical(lw).probabilities,
            build_categorical(lw + 1234.5).probabilities,
            atol=1e-15,
        )

    def test_alias_tables_represent_probabilities_exactly(self):
        rng = np.random.default_rng(3)
        lw = rng.standard_normal(101)
        s = build_categorical(lw)
        # bucket i keeps mass prob[i]/m and forwards (1-prob[i])/m to alias[i]
        recon = s.prob.copy()
        np.add.at(recon, s.alias, 1.0 - s.prob)
        assert np.allclose(recon / s.m, s.probabilities, atol=1e-12)

    def test_all_zero_rejected_before_finiteness(self):
        with pytest.raises(AllZeroWeights):
            build_categorical(np.array([-np.inf, -np.inf]))

    def test_partial_zero_rejected(self):
        with pytest.raises(NonFiniteWeight):
            build_categorical(np.array([0.0, -np.inf]))

    def test_nan_rejected(self):
        with pytest.raises(NonFiniteWeight):
            build_categorical(np.array([0.0, np.nan]))

    def test_empty_rejected(self):
        with pytest.raises(AllZeroWeights):
            build_categorical(np.array([]))

    def test_matrix_rejected(self):
        with pytest.raises(AllZeroWeights):
            build_categorical(np.zeros((2, 2)))

    def test_sampler_law(self):
        s = build_categorical(np.log([2.0, 1.0, 1.0]))
        draws = s.sample(np.random.default_rng(2024), 100_000)
        freq = np.bincount(draws, minlength=3) / draws.size
        # SE at p=0.5 is 0.0016; 0.01 is >6 SE
        assert np.max(np.abs(freq - [0.5, 0.25, 0.25])) < 0.01

    def test_single_atom(self):
        s = build_categorical(np.array([-5.0]))
        assert np.all(s.sample(np.random.default_rng(0), 100) == 0)


@pytest.mark.skipif(_vose_fill_fast is None, reason="numba not installed")
def test_compiled_fill_is_bit_identical():
    rng = np.random.default_rng(17)
    for m in (2, 33, 5000):
        p = rng.random(m)
        p /= p.sum()
        scaled_a, scaled_b = p * m, p * m
        alias_a = np.zeros(m, dtype=np.int64)
        alias_b = np.zeros(m, dtype=np.int64)
        prob_a = np.ones(m)
        prob_b = np.ones(m)
        _vose_fill(scaled_a, alias_a, prob_a)
        _vose_fill_fast(scaled_b, alias_b, prob_b)
        assert np.array_equal(alias_a, alias_b)
        assert np.array_equal(prob_a, prob_b)


class TestCorrectGeneral:
    def test_frozen_atoms_and_mass(self):
        atoms = correct_general([child_a(), child_b()], General(joint_eval))
        assert np.array_equal(atoms.atoms, [[0, 10], [0, 20], [1, 10], [1, 20]])
        assert np.allclose(np.exp(atoms.log_weights), [1, 2, 3, 5], atol=1e-12)
        assert atoms.log_mass == pytest.approx(np.log(16.5), abs=1e-12)

    def test_callable_weight_promoted(self):
        direct = correct_general([child_a(), child_b()], joint_eval)
        assert direct.log_mass == pytest.approx(np.log(16.5), abs=1e-12)

    def test_weighted_child_adjustment(self):
        weighted = child_a(log_weights=np.log([0.75, 0.25]))
        atoms = correct_general([weighted, child_b()], General(joint_eval))
        assert np.allclose(np.exp(atoms.log_weights), [1.5, 3.0, 1.5, 2.5], atol=1e-12)
        assert atoms.log_mass == pytest.approx(np.log(12.75), abs=1e-12)

    def test_cap_enforced(self):
        with pytest.raises(MaterializationCapExceeded):
            correct_general([child_a(), child_b()], General(joint_eval), cap=3)

    def test_nonfinite_joint_weight_rejected(self):
        bad = General(lambda x: np.full(x.shape[0], np.nan))
        with pytest.raises(NonFiniteWeight):
            correct_general([child_a(), child_b()], bad)

    def test_resample_general_collapses_to_heavy_atom(self):
        heavy = General(lambda x: np.where((x[:, 0] == 1) & (x[:, 1] == 20), 0.0, -800.0))
        atoms = correct_general([child_a(), child_b()], heavy)
        out = resample_general(atoms, 64, np.random.default_rng(5))
        assert out.shape == (64, 2)
        assert np.all(out == [1.0, 20.0])


class TestResampleFactorized:
    def factors(self):
        return (lambda p: np.log(1.0 + p[:, 0]), lambda p: np.log(p[:, 0] / 10.0))

    def product_eval(self):
        fa, fb = self.factors()
        return General(lambda x: fa(x[:, :1]) + fb(x[:, 1:]))

    def test_mass_matches_generic_route(self):
        children = [child_a(), child_b()]
        atoms = correct_general(children, self.product_eval())
        _, log_mass = resample_factorized(children, self.factors(), 16, np.random.default_rng(0))
        assert abs(log_mass - atoms.log_mass) <= 1e-12

    def test_mass_matches_generic_with_weighted_child(self):
        children = [child_a(log_weights=np.log([0.9, 0.1])), child_b()]
        atoms = correct_general(children, self.product_eval())
        _, log_mass = resample_factorized(children, self.factors(), 16, np.random.default_rng(0))
        assert abs(log_mass - atoms.log_mass) <= 1e-12

    def test_accepts_structure_object(self):
        children = [child_a(), child_b()]
        _, direct = resample_factorized(children, Factorized(self.factors()), 8, np.random.default_rng(1))
        _, plain = resample_factorized(children, self.factors(), 8, np.random.default_rng(1))
        assert direct == plain

    def test_factor_count_checked(self):
        with pytest.raises(ValueError):
            resample_factorized([child_a()], self.factors(), 8, np.random.default_rng(0))

    def test_per_child_law(self):
        children = [child_a(), child_b()]
        paths, _ = resample_factorized(children, self.factors(), 200_000, np.random.default_rng(9))
        # factor 1+a over {0,1} gives (1/3, 2/3); factor b/10 over {10,20} gives (1/3, 2/3)
        assert np.mean(paths[:, 0] == 1.0) == pytest.approx(2.0 / 3.0, abs=0.01)
        assert np.mean(paths[:, 1] == 20.0) == pytest.approx(2.0 / 3.0, abs=0.01)


class TestResampleMixture:
    def components(self):
        comp1 = (lambda p: np.log(1.0 + p[:, 0]), lambda p: np.log(p[:, 0] / 10.0))
        comp2 = (lambda p: np.log(2.0 - p[:, 0]), lambda p: np.log(3.0 - p[:, 0] / 10.0))
        return (comp1, comp2)

    def test_single_component_reduces_to_factorized(self):
        children = [child_a(), child_b()]
        comp = self.components()[:1]
        _, mixture_mass, counts = resample_mixture(children, comp, 32, np.random.default_rng(3))
        _, factor_mass = resample_factorized(children, comp[0], 32, np.random.default_rng(3))
        assert abs(mixture_mass - factor_mass) <= 1e-12
        assert counts.tolist() == [32]

    def test_mass_matches_generic_route(self):
        children = [child_a(), child_b()]
        structure = MixtureOfProducts(tuple(Factorized(c) for c in self.components()))
        atoms = correct_general(children, structure)
        paths, log_mass, counts = resample_mixture(children, structure, 64, np.random.default_rng(4))
        assert abs(log_mass - atoms.log_mass) <= 1e-12
        assert paths.shape == (64, 2)
        assert int(counts.sum()) == 64

    def test_component_factor_count_checked(self):
        with pytest.raises(ValueError):
            resample_mixture([child_a()], self.components(), 8, np.random.default_rng(0))

    def test_empty_component_list_rejected(self):
        with pytest.raises(ValueError):
            resample_mixture([child_a(), child_b()], (), 8, np.random.default_rng(0))


class TestResampleNested:
    def two_child_structure(self):
        outer = lambda p: np.log(1.0 + p[:, 0])  # noqa: E731
        inner = lambda p, u: np.log((1.0 + p[:, 0]) * u[:, 0] / 10.0)  # noqa: E731
        return Nested(pivot=0, outer=outer, inner=(inner,))

    def as_general(self, structure):
        def ev(x):
            p, u = x[:, :1], x[:, 1:]
            return structure.outer(p) + structure.inner[0](p, u)

        return General(ev)

    def test_mass_matches_generic_route(self):
        children = [child_a(), child_b()]
        structure = self.two_child_structure()
        atoms = correct_general(children, self.as_general(structure))
        paths, log_mass, omega = resample_nested(children, structure, 16, np.random.default_rng(0))
        assert abs(log_mass - atoms.log_mass) <= 1e-11
        assert paths.shape == (16, 2)
        assert omega.shape == (2,)

    def test_mass_matches_generic_with_middle_pivot(self):
        rng = np.random.default_rng(21)
        children = [
            ParticleCloud(node=0, log_mass=0.3, paths=rng.standard_normal((3, 1))),
            ParticleCloud(node=1, log_mass=-0.2, paths=rng.standard_normal((4, 1))),
            ParticleCloud(node=2, log_mass=0.0, paths=rng.standard_normal((5, 1))),
        ]
        structure = Nested(
            pivot=1,
            outer=lambda p: -0.5 * p[:, 0] ** 2,
            inner=(
                lambda p, u: -0.5 * (u[:, 0] - p[:, 0]) ** 2,
                lambda p, u: -0.25 * (u[:, 0] - 2.0 * p[:, 0]) ** 2,
            ),
        )

        def ev(x):
            c0, piv, c2 = x[:, :1], x[:, 1:2], x[:, 2:]
            return structure.outer(piv) + structure.inner[0](piv, c0) + structure.inner[1](piv, c2)

        atoms = correct_general(children, General(ev))
        _, log_mass, _ = resample_nested(children, structure, 8, np.random.default_rng(1))
        assert abs(log_mass - atoms.log_mass) <= 1e-11

    def test_mass_matches_generic_with_weighted_children(self):
        children = [child_a(log_weights=np.log([0.6, 0.4])), child_b()]
        structure = self.two_child_structure()
        atoms = correct_general(children, self.as_general(structure))
        _, log_mass, _ = resample_nested(children, structure, 8, np.random.default_rng(2))
        assert abs(log_mass - atoms.log_mass) <= 1e-11

    def test_two_stage_law(self):
        pivot = ParticleCloud(node=0, log_mass=0.0, paths=np.array([[0.0], [1.0]]))
        unit = ParticleCloud(node=1, log_mass=0.0, paths=np.array([[10.0], [20.0], [30.0]]))

        def inner(p, u):
            # conditional over units: (1,2,3)/6 under pivot 0, (3,2,1)/6 under pivot 1
            fwd = u[:, 0] / 10.0
            return np.log(np.where(p[:, 0] < 0.5, fwd, 4.0 - fwd))

        structure = Nested(pivot=0, outer=lambda p: np.zeros(p.shape[0]), inner=(inner,))
        paths, _, _ = resample_nested([pivot, unit], structure, 150_000, np.random.default_rng(33))
        # both pivot rows average to 2, so pivots are equally likely
        assert np.mean(paths[:, 0] == 1.0) == pytest.approx(0.5, abs=0.01)
        for pivot_value, expect in ((0.0, [1, 2, 3]), (1.0, [3, 2, 1])):
            rows = paths[paths[:, 0] == pivot_value]
            freq = [np.mean(rows[:, 1] == v) for v in (10.0, 20.0, 30.0)]
            assert np.allclose(freq, np.array(expect) / 6.0, atol=0.01)

    def test_inner_matrix_cap(self):
        with pytest.raises(MaterializationCapExceeded):
            resample_nested(
                [child_a(), child_b()], self.two_child_structure(), 8, np.random.default_rng(0), cap=3
            )

    def test_requires_nested_structure(self):
        with pytest.raises(TypeError):
            resample_nested([child_a(), child_b()], General(joint_eval), 8, np.random.default_rng(0))


class TestIndexSet:
    def test_diagonal_frozen(self):
        m = IndexSet.diagonal(3, 2)
        assert np.array_equal(m.entries, [[0, 0], [1, 1], [2, 2]])
        assert (m.size, m.n, m.arity) == (3, 3, 2)

    def test_complete_frozen(self):
        m = IndexSet.complete(2, 3)
        assert m.size == 8
        assert np.array_equal(m.entries[:4], [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1]])
        assert np.array_equal(m.entries[4], [1, 0, 0])

    def test_empty_rejected(self):
        with pytest.raises(EmptyIndexSet):
            IndexSet(entries=np.empty((0, 2), dtype=np.int64), n=4, arity=2)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            IndexSet(entries=np.array([[0, 4]]), n=4, arity=2)

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            IndexSet(entries=np.zeros((3, 3), dtype=np.int64), n=4, arity=2)

    def test_entries_frozen(self):
        m = IndexSet.diagonal(3, 2)
        with pytest.raises(ValueError):
            m.entries[0, 0] = 1


class TestDesignIndexSet:
    def test_minimum_budget_is_the_diagonal(self):
        m = design_index_set(5, 3, 5, np.random.default_rng(0))
        assert np.array_equal(m.entries, IndexSet.diagonal(5, 3).entries)

    def test_blocks_cover_indices_equally(self):
        n, blocks = 8, 3
        m = design_index_set(n, 3, blocks * n, np.random.default_rng(7))
        assert m.size == blocks * n
        for j in range(3):
            assert np.array_equal(np.bincount(m.entries[:, j], minlength=n), np.full(n, blocks))

    def test_first_block_is_diagonal_and_offsets_distinct(self):
        n, blocks = 6, 4
        m = design_index_set(n, 2, blocks * n, np.random.default_rng(1))
        assert np.array_equal(m.entries[:n], IndexSet.diagonal(n, 2).entries)
        # row 0 of each block reads off the block's relative offsets
        offsets = {tuple(m.entries[b * n, 1:]) for b in range(blocks)}
        assert len(offsets) == blocks

    def test_budget_below_n_rejected(self):
        with pytest.raises(BudgetTooSmall):
            design_index_set(8, 2, 7, np.random.default_rng(0))

    def test_partial_block_rejected(self):
        with pytest.raises(BudgetTooSmall):
            design_index_set(8, 2, 12, np.random.default_rng(0))

    def test_impossible_block_count_rejected(self):
        with pytest.raises(BudgetTooSmall):
            design_index_set(2, 2, 6, np.random.default_rng(0))

    def test_arity_checked(self):
        with pytest.raises(ValueError):
            design_index_set(4, 0, 4, np.random.default_rng(0))


class TestCorrectIncomplete:
    def test_complete_set_reproduces_generic(self):
        children = [child_a(), child_b()]
        full = correct_general(children, General(joint_eval))
        inc = correct_incomplete(children, General(joint_eval), IndexSet.complete(2, 2))
        assert np.array_equal(inc.atoms, full.atoms)
        assert inc.log_mass == full.log_mass

    def test_diagonal_frozen_mass(self):
        children = [child_a(), child_b()]
        inc = correct_incomplete(children, General(joint_eval), IndexSet.diagonal(2, 2))
        assert np.allclose(np.exp(inc.log_weights), [1.0, 5.0], atol=1e-12)
        assert inc.log_mass == pytest.approx(np.log(18.0), abs=1e-12)

    def test_weighted_child_adjustment(self):
        weighted = child_a(log_weights=np.log([0.75, 0.25]))
        inc = correct_incomplete([weighted, child_b()], General(joint_eval), IndexSet.diagonal(2, 2))
        # diagonal picks table entries (1, 5) with corrections (1.5, 0.5)
        assert np.allclose(np.exp(inc.log_weights), [1.5, 2.5], atol=1e-12)
        assert inc.log_mass == pytest.approx(np.log(6.0 * 2.0), abs=1e-12)

    def test_arity_mismatch_rejected(self):
        with pytest.raises(ValueError):
            correct_incomplete([child_a()], General(joint_eval), IndexSet.diagonal(2, 2))

    def test_count_mismatch_rejected(self):
        short = ParticleCloud(node=2, log_mass=0.0, paths=np.array([[10.0]]))
        with pytest.raises(ValueError):
            correct_incomplete([child_a(), short], General(joint_eval), IndexSet.diagonal(2, 2))
