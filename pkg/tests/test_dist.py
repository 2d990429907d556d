import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probnas.dist import (ArchDistribution, ConversionError, entropy, factorized_to_joint,
                          grad_neg_log_prob, init_uniform, joint_to_factorized, log_prob,
                          sample, sample_indices)
from probnas.space import Architecture, load_space


def all_archs(cards):
    per_pos = [list(itertools.product(*(range(n) for n in c))) for c in cards]
    return [Architecture(a) for a in itertools.product(*per_pos)]


def random_dist(cards, mode, seed, scale=1.0):
    d = ArchDistribution(mode, cards)
    rng = np.random.default_rng(seed)
    return d.with_logits(scale * rng.standard_normal(d.parameter_count))


def finite_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2 * h)
    return g


class TestInit:
    def test_uniform_three_way(self):
        d = init_uniform([(3,)], "joint")
        np.testing.assert_allclose(d.probs, [1 / 3] * 3)

    def test_parameter_counts(self):
        cards = [(3, 2, 2, 6, 10)]
        assert init_uniform(cards, "factorized").parameter_count == 23
        assert init_uniform(cards, "joint").parameter_count == 720

    def test_blocks_sum_to_one(self):
        d = random_dist([(3, 2), (4,), (2, 2, 2)], "factorized", 0, scale=5)
        for b in d.blocks:
            assert d.block_probs(b).sum() == pytest.approx(1, abs=1e-9)

    def test_space_input(self):
        sp = load_space("fbnetv2-f")
        d = init_uniform(sp, "factorized")
        assert d.parameter_count == sum(sum(p.cardinalities) for p in sp.positions)


class TestEntropy:
    def test_uniform_720(self):
        assert entropy(init_uniform([(3, 2, 2, 6, 10)])) == pytest.approx(math.log(720))

    def test_one_hot(self):
        d = ArchDistribution("joint", [(4,)], [0, 800, 0, 0])
        assert entropy(d) == pytest.approx(0, abs=1e-12)

    def test_uniform_equals_log_space_size(self):
        sp = load_space("fbnetv2-f")
        from probnas.space import space_size
        log10, _ = space_size(sp)
        for mode in ("joint", "factorized"):
            assert entropy(init_uniform(sp, mode)) == pytest.approx(log10 * math.log(10))

    def test_shift_invariance(self):
        d = random_dist([(3, 2)], "joint", 1)
        assert entropy(d.with_logits(d.logits + 7.0)) == pytest.approx(entropy(d), abs=1e-12)

    def test_matches_enumeration(self):
        cards = [(3, 2), (2,)]
        d = random_dist(cards, "factorized", 2)
        p = np.array([math.exp(log_prob(d, a)) for a in all_archs(cards)])
        assert entropy(d) == pytest.approx(-(p * np.log(p)).sum(), abs=1e-12)


class TestSample:
    def test_one_hot(self):
        d = ArchDistribution("joint", [(3,), (2,)], [0, 0, 900, 900, 0])
        arch, lp = sample(d, np.random.default_rng(0))
        assert arch == Architecture(((2,), (0,)))
        assert lp == pytest.approx(0, abs=1e-12)

    def test_log_prob_agrees(self):
        d = random_dist([(3, 2), (4,)], "factorized", 3)
        rng = np.random.default_rng(1)
        for _ in range(20):
            arch, lp = sample(d, rng)
            assert lp == pytest.approx(log_prob(d, arch), abs=1e-12)

    def test_batch_equals_sequential(self):
        d = random_dist([(3, 2), (4,)], "joint", 4)
        batch = sample_indices(d, np.random.default_rng(5), 6)
        rng = np.random.default_rng(5)
        seq = [d.flat_indices(sample(d, rng)[0]) for _ in range(6)]
        np.testing.assert_array_equal(batch, np.array(seq))

    def test_uniform_frequencies(self):
        # multinomial check: each of 9 outcomes within 3 sigma of 1/9 over 90,000 draws
        d = init_uniform([(3,), (3,)], "joint")
        idx = sample_indices(d, np.random.default_rng(12), 90_000)
        codes = (idx[:, 0]) * 3 + (idx[:, 1] - 3)
        counts = np.bincount(codes, minlength=9)
        n, p = 90_000, 1 / 9
        assert np.all(np.abs(counts - n * p) <= 3 * math.sqrt(n * p * (1 - p)))

    def test_factorized_variables_independent(self):
        d = ArchDistribution("factorized", [(2, 2)], [0, 0, 0, 0])
        idx = sample_indices(d, np.random.default_rng(3), 40_000)
        a, b = idx[:, 0], idx[:, 1] - 2
        joint = np.bincount(a * 2 + b, minlength=4) / len(a)
        np.testing.assert_allclose(joint, 0.25, atol=0.01)

    def test_empirical_law_converges(self):
        cards = [(3,), (2, 2)]
        d = random_dist(cards, "joint", 6)
        archs = all_archs(cards)
        p = np.array([math.exp(log_prob(d, a)) for a in archs])
        n = 60_000
        idx = sample_indices(d, np.random.default_rng(7), n)
        lookup = {tuple(d.flat_indices(a)): i for i, a in enumerate(archs)}
        counts = np.bincount([lookup[tuple(r)] for r in idx], minlength=len(archs))
        assert np.all(np.abs(counts / n - p) <= 4 * np.sqrt(p * (1 - p) / n))


class TestLogProb:
    def test_uniform(self):
        d = init_uniform([(3,), (3,)])
        assert log_prob(d, Architecture(((1,), (2,)))) == pytest.approx(math.log(1 / 9))

    @pytest.mark.parametrize("mode", ["joint", "factorized"])
    def test_enumeration_sums_to_one(self, mode):
        cards = [(3, 2), (2, 2, 2), (4,)]
        d = random_dist(cards, mode, 8, scale=2)
        total = sum(math.exp(log_prob(d, a)) for a in all_archs(cards))
        assert total == pytest.approx(1, abs=1e-9)

    def test_invalid_arch(self):
        d = init_uniform([(3,)])
        with pytest.raises(ValueError):
            log_prob(d, Architecture(((3,),)))


class TestGradient:
    def test_closed_form(self):
        p = np.array([0.2, 0.3, 0.5])
        d = ArchDistribution("joint", [(3,)], np.log(p))
        g = grad_neg_log_prob(d, Architecture(((2,),)))
        np.testing.assert_allclose(g.values, [0.2, 0.3, -0.5], atol=1e-12)

    def test_uniform(self):
        g = grad_neg_log_prob(init_uniform([(3,)]), Architecture(((0,),)))
        np.testing.assert_allclose(g.values, [-2 / 3, 1 / 3, 1 / 3], atol=1e-12)

    @pytest.mark.parametrize("mode", ["joint", "factorized"])
    def test_finite_differences(self, mode):
        cards = [(3, 2), (4,), (2, 3)]
        rng = np.random.default_rng(9)
        for seed in range(5):
            d = random_dist(cards, mode, seed)
            arch = all_archs(cards)[int(rng.integers(3 * 2 * 4 * 6))]
            fd = finite_difference(lambda x: -log_prob(d.with_logits(x), arch), d.logits.copy())
            g = grad_neg_log_prob(d, arch).values
            assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)

    def test_block_sums_zero(self):
        d = random_dist([(3, 2), (5,)], "factorized", 1)
        g = grad_neg_log_prob(d, Architecture(((1, 1), (4,))))
        np.testing.assert_allclose(g.block_sums(), 0, atol=1e-12)


class TestConversion:
    def test_two_by_two(self):
        d = ArchDistribution("factorized", [(2, 2)], np.log([0.5, 0.5, 0.25, 0.75]))
        j = factorized_to_joint(d)
        np.testing.assert_allclose(j.probs, [0.125, 0.375, 0.125, 0.375], atol=1e-15)

    def test_uniform_to_uniform(self):
        j = factorized_to_joint(init_uniform([(3, 2, 2)], "factorized"))
        np.testing.assert_allclose(j.probs, 1 / 12)

    def test_entropy_and_log_prob_preserved(self):
        cards = [(3, 2, 2), (4,), (2, 3)]
        d = random_dist(cards, "factorized", 5, scale=3)
        j = factorized_to_joint(d)
        assert entropy(j) == pytest.approx(entropy(d), abs=1e-9)
        for a in all_archs(cards):
            assert abs(log_prob(j, a) - log_prob(d, a)) <= 1e-12

    def test_logits_mean_centered(self):
        j = factorized_to_joint(random_dist([(3, 4)], "factorized", 2))
        assert abs(j.logits.mean()) < 1e-12

    def test_marginals_roundtrip(self):
        d = random_dist([(3, 2, 2), (5,)], "factorized", 11, scale=2)
        back = joint_to_factorized(factorized_to_joint(d))
        np.testing.assert_allclose(back.probs, d.probs, atol=1e-12, rtol=0)

    def test_cap(self):
        with pytest.raises(ConversionError, match="cap"):
            factorized_to_joint(init_uniform([(10, 10, 10)], "factorized"), cap=999)

    def test_needs_factorized(self):
        with pytest.raises(ValueError):
            factorized_to_joint(init_uniform([(2,)], "joint"))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=6, max_size=6), st.floats(-50, 50))
def test_constant_shift_changes_nothing(logits, c):
    d = ArchDistribution("joint", [(2, 3)], logits)
    shifted = d.with_logits(np.array(logits) + c)
    np.testing.assert_allclose(shifted.probs, d.probs, atol=1e-12)
    assert entropy(shifted) == pytest.approx(entropy(d), abs=1e-9)


def test_serialization_roundtrip():
    import json
    d = random_dist([(3, 2), (4,)], "factorized", 0)
    back = ArchDistribution.from_dict(json.loads(json.dumps(d.to_dict())))
    assert back.mode == d.mode
    np.testing.assert_array_equal(back.logits, d.logits)
