import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probnas.dist import (ArchDistribution, grad_neg_log_prob, init_uniform, log_prob)
from probnas.space import Architecture
from probnas.update import (AdamState, adam_step, alpha_gradient, importance_weights)


class TestImportanceWeights:
    def test_equal_no_cost(self):
        w = importance_weights([-1.0, -1.0], [0.0, 0.0], beta=0.0)
        np.testing.assert_allclose(w.m, [0.5, 0.5])

    def test_hand_case(self):
        w = importance_weights([-2.0, -2.0], [0.2, 0.0], beta=0.3)
        np.testing.assert_allclose(w.m, [0.2, 0.5], atol=1e-15)

    def test_zero_costs_drop_cost_term(self):
        w = importance_weights([-0.3, -1.2, -0.7], [0, 0, 0], beta=0.3)
        assert w.m.sum() == pytest.approx(1, abs=1e-12)
        np.testing.assert_array_equal(w.m, w.likelihood_part)

    def test_non_finite_names_sample(self):
        with pytest.raises(ValueError, match="sample 1"):
            importance_weights([0.0, float("nan")], [0, 0], beta=0.3)

    def test_huge_log_likelihoods_do_not_overflow(self):
        w = importance_weights([-1e5, -1e5 - 1], [0, 0], beta=0)
        assert np.all(np.isfinite(w.m))
        assert w.m[0] / w.m[1] == pytest.approx(np.e)

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            importance_weights([0.0], [0.0], beta=-0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(-50, 0), st.floats(0, 3)), min_size=1, max_size=16),
           st.floats(0, 1))
    def test_sum_identities(self, pairs, beta):
        ll, costs = map(list, zip(*pairs))
        w = importance_weights(ll, costs, beta)
        assert w.likelihood_part.sum() == pytest.approx(1, abs=1e-9)
        if sum(costs) > 0:
            assert w.m.sum() == pytest.approx(1 - beta, abs=1e-9)
        else:
            assert w.m.sum() == pytest.approx(1, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(-64, 0), min_size=1, max_size=8), st.integers(-20, 20))
    def test_likelihood_scaling_is_bit_identical(self, ll, shift):
        # multiplying every likelihood by 2**shift adds shift*ln2 in log space; dyadic values stay exact
        ll = np.array(ll, dtype=float) / 8
        a = importance_weights(ll, np.zeros(len(ll)), 0.3)
        b = importance_weights(ll + shift, np.zeros(len(ll)), 0.3)
        np.testing.assert_array_equal(a.m, b.m)


def _weighted_objective(dist, archs, m):
    return sum(mk * -log_prob(dist, a) for mk, a in zip(m, archs))


class TestAlphaGradient:
    def test_single_sample(self):
        d = ArchDistribution("joint", [(3,), (2,)], [0.1, -0.3, 0.5, 0.2, 0.0])
        a = Architecture(((2,), (1,)))
        g = alpha_gradient(d, d.flat_indices(a)[None, :], [1.0])
        np.testing.assert_allclose(g.values, grad_neg_log_prob(d, a).values, atol=1e-15)

    def test_linearity_in_duplicates(self):
        d = ArchDistribution("factorized", [(3, 2)], [0.1, -0.3, 0.5, 0.2, 0.0])
        a = Architecture(((1, 0),))
        idx = np.stack([d.flat_indices(a)] * 2)
        g = alpha_gradient(d, idx, [0.3, 0.45])
        np.testing.assert_allclose(g.values, 0.75 * grad_neg_log_prob(d, a).values, atol=1e-15)

    def test_exhaustive_batch_against_finite_differences(self):
        d = ArchDistribution("joint", [(3,)], [0.3, -0.2, 0.7])
        archs = [Architecture(((i,),)) for i in range(3)]
        m = np.array([0.6, -0.1, 0.25])
        idx = np.stack([d.flat_indices(a) for a in archs])
        g = alpha_gradient(d, idx, m).values
        h = 1e-5
        fd = np.zeros(3)
        for i in range(3):
            up, dn = d.logits.copy(), d.logits.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (_weighted_objective(d.with_logits(up), archs, m)
                     - _weighted_objective(d.with_logits(dn), archs, m)) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-10)

    def test_block_sums_vanish(self):
        d = ArchDistribution("factorized", [(3, 2), (4,)], np.linspace(-1, 1, 9))
        rng = np.random.default_rng(0)
        idx = np.stack([d.flat_indices(Architecture(((int(rng.integers(3)), int(rng.integers(2))),
                                                     (int(rng.integers(4)),)))) for _ in range(5)])
        g = alpha_gradient(d, idx, rng.standard_normal(5))
        np.testing.assert_allclose(g.block_sums(), 0, atol=1e-12)

    def test_length_mismatch(self):
        d = init_uniform([(2,)])
        with pytest.raises(ValueError):
            alpha_gradient(d, np.zeros((2, 1), dtype=int), [1.0])


class TestAdam:
    def test_zero_gradient(self):
        d = ArchDistribution("joint", [(3,)], [0.1, 0.2, 0.3])
        st_ = AdamState.zeros(3)
        from probnas.dist import DistGradient
        d2, _ = adam_step(st_, d, DistGradient(d.blocks, np.zeros(3)))
        np.testing.assert_array_equal(d2.logits, d.logits)

    def test_first_step_moves_by_lr(self):
        from probnas.dist import DistGradient
        d = init_uniform([(4,)])
        g = DistGradient(d.blocks, np.array([0.3, -2.0, 1e-3, -0.05]))
        d2, s = adam_step(AdamState.zeros(4, lr=0.016), d, g)
        np.testing.assert_allclose(d2.logits, -0.016 * np.sign(g.values), rtol=1e-4)
        assert s.step == 1

    def test_matches_reference_formula(self):
        from probnas.dist import DistGradient
        d = init_uniform([(3,)])
        s = AdamState.zeros(3, lr=0.1)
        rng = np.random.default_rng(0)
        m = v = np.zeros(3)
        x = np.zeros(3)
        for t in range(1, 6):
            g = rng.standard_normal(3)
            d, s = adam_step(s, d, DistGradient(d.blocks, g))
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(d.logits, x, rtol=1e-12)

    def test_shape_mismatch(self):
        from probnas.dist import DistGradient
        d = init_uniform([(3,)])
        with pytest.raises(ValueError, match="shape"):
            adam_step(AdamState.zeros(4), d, DistGradient(d.blocks, np.zeros(3)))

    def test_fixed_direction_raises_favored_probability(self):
        d = init_uniform([(4,)])
        s = AdamState.zeros(4)
        a = Architecture(((2,),))
        probs = []
        for _ in range(50):
            d, s = adam_step(s, d, grad_neg_log_prob(d, a))
            probs.append(d.probs[2])
        assert np.all(np.diff(probs) > 0)

    def test_biased_update_raises_log_prob(self):
        d = ArchDistribution("factorized", [(3, 2), (4,)], np.linspace(-0.5, 0.5, 9))
        a = Architecture(((1, 1), (3,)))
        before = log_prob(d, a)
        d2, _ = adam_step(AdamState.zeros(9), d, alpha_gradient(d, d.flat_indices(a)[None], [1.0]))
        assert log_prob(d2, a) > before

    def test_state_roundtrip(self):
        s = AdamState(np.array([0.1, -0.2]), np.array([0.01, 0.04]), 7)
        back = AdamState.from_dict(s.to_dict())
        np.testing.assert_array_equal(back.m, s.m)
        assert back.step == 7
