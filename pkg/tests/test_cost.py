import numpy as np
import pytest
from hypothesis import given, strategies as st

from mac_oracle import count_macs
from probnas.cost import (ResolvedBlock, arch_flops, block_flops, expected_cost, hinge_cost,
                          median_space_flops)
from probnas.space import (Architecture, enumerate_architectures, load_space, parse_space,
                           uniform_architecture)


def test_stem_conv():
    blk = ResolvedBlock("conv", None, 3, 16, 224, stride=2, kernel=3)
    assert block_flops(blk) == 5_419_008


def test_skip_is_free():
    assert block_flops(ResolvedBlock("skip", 0, 16, 16, 56)) == 0


def test_split_attention_costs_more_than_squeeze_excite():
    base = dict(kind="mbconv", position=0, in_channels=24, out_channels=24, resolution=28,
                stride=1, kernel=3, expansion=3.0)
    costs = [block_flops(ResolvedBlock(**base, splits=s)) for s in (0, 1, 2, 4)]
    assert costs == sorted(costs) and len(set(costs)) == 4


def _random_arch(sp, rng):
    return uniform_architecture(sp, rng)


@pytest.mark.parametrize("name", ["fbnetv2-f", "fbnetv2-f-fine", "fbnetv2-f++", "toy-3x4"])
def test_matches_counting_oracle(name):
    sp = load_space(name)
    rng = np.random.default_rng(7)
    for _ in range(25):
        arch = _random_arch(sp, rng)
        got = arch_flops(sp, arch).total_flops
        want = count_macs(sp.to_document(), sp.values(arch))
        assert got == pytest.approx(want, rel=1e-3)


def test_max_choice_at_128():
    sp = load_space("fbnetv2-f")
    arch = Architecture(tuple(tuple(n - 1 for n in p.cardinalities) for p in sp.positions))
    got = arch_flops(sp, arch, input_resolution=128).total_flops
    assert got == pytest.approx(count_macs(sp.to_document(), sp.values(arch), 128), rel=1e-3)


def test_all_skip_is_fixed_layers_only():
    doc = {"input_resolution": 32, "input_channels": 3, "groups": [
        {"operator": "conv", "kernel": 3, "channel": 8, "stride": 2},
        {"operator": "mbconv", "kernel": [0, 3], "channel": 8},
        {"operator": "mbconv", "kernel": [0, 3], "channel": 8},
    ]}
    sp = parse_space(doc)
    rep = arch_flops(sp, Architecture(((0,), (0,))))
    assert rep.total_flops == 16 * 16 * 8 * 27
    assert all(f == 0 for _, f in rep.per_position)


def test_skipped_block_keeps_input_channels():
    sp = load_space("fbnetv2-f")
    rng = np.random.default_rng(3)
    arch = _random_arch(sp, rng)
    vals = sp.values(arch)
    vals[2]["kernel"] = 0
    rep = arch_flops(sp, sp.architecture(vals))
    skipped = [b for b in rep.blocks if b.position == 2]
    assert all(b.kind == "skip" and b.in_channels == b.out_channels for b in skipped)


def test_report_total_is_breakdown_sum():
    sp = load_space("fbnetv2-f++")
    rng = np.random.default_rng(0)
    for _ in range(20):
        rep = arch_flops(sp, _random_arch(sp, rng))
        assert rep.total_flops == sum(f for _, f in rep.per_position) + sum(f for _, f in rep.fixed)


def test_invalid_arch_raises():
    with pytest.raises(ValueError, match="invalid"):
        arch_flops(load_space("toy-3x4"), Architecture(((9,), (0,), (0,))))


def test_monotone_under_single_increases():
    sp = load_space("fbnetv2-f++")
    rng = np.random.default_rng(11)
    ordered = {"expansion", "channel", "splits"}
    for _ in range(200):
        arch = _random_arch(sp, rng)
        p = int(rng.integers(sp.num_positions))
        pos = sp.positions[p]
        m = int(rng.integers(len(pos.choice_sets)))
        cs = pos.choice_sets[m]
        i = arch[p][m]
        if cs.name in ordered and i + 1 < len(cs):
            j = i + 1
        elif cs.name == "kernel" and cs.values[i] == 3:
            j = cs.index(5)
        else:
            continue
        bigger = list(map(list, arch.choices))
        bigger[p][m] = j
        assert arch_flops(sp, Architecture(bigger)).total_flops >= arch_flops(sp, arch).total_flops


class TestHinge:
    def test_over_budget(self):
        assert hinge_cost(66e6, 60e6) == pytest.approx(0.1)

    def test_under_budget(self):
        assert hinge_cost(50e6, 60e6) == 0

    def test_boundary(self):
        assert hinge_cost(60e6, 60e6) == 0

    @pytest.mark.parametrize("target", [0, -1])
    def test_bad_target(self, target):
        with pytest.raises(ValueError):
            hinge_cost(1.0, target)

    @given(st.floats(0, 1e9), st.floats(0, 1e9), st.floats(0, 1), st.floats(1, 1e9))
    def test_convex(self, a, b, t, target):
        mid = hinge_cost(t * a + (1 - t) * b, target)
        rhs = t * hinge_cost(a, target) + (1 - t) * hinge_cost(b, target)
        assert mid <= rhs + 1e-12 * (1 + max(a, b) / target)


class TestExpectedCost:
    def test_mean(self):
        assert expected_cost([0.1, 0.3]) == pytest.approx(0.2)

    def test_zeros(self):
        assert expected_cost([0, 0, 0]) == 0

    def test_empty(self):
        with pytest.raises(ValueError):
            expected_cost([])

    def test_monte_carlo_against_enumeration(self):
        # a 4*4*4*4*... subspace small enough to enumerate: the toy space
        sp = load_space("toy-3x4")
        flops = [arch_flops(sp, a).total_flops for a in enumerate_architectures(sp)]
        target = float(np.median(flops))
        exact = np.mean([hinge_cost(f, target) for f in flops])
        rng = np.random.default_rng(0)
        costs = [hinge_cost(arch_flops(sp, uniform_architecture(sp, rng)).total_flops, target)
                 for _ in range(1000)]
        se = np.std(costs) / np.sqrt(len(costs))
        assert abs(expected_cost(costs) - exact) < 4 * se


class TestMedian:
    def test_single_arch_space(self):
        doc = {"input_resolution": 8, "input_channels": 3, "groups": [
            {"operator": "mbconv", "kernel": [3], "channel": 8}]}
        sp = parse_space(doc)
        assert median_space_flops(sp, 5, seed=1) == arch_flops(sp, Architecture(((0,),))).total_flops

    def test_close_to_enumeration_median(self):
        sp = load_space("toy-3x4")
        flops = sorted(arch_flops(sp, a).total_flops for a in enumerate_architectures(sp))
        med = median_space_flops(sp, 2001, seed=0)
        lo = max(f for f in flops if f <= np.median(flops))
        hi = min(f for f in flops if f >= np.median(flops))
        below = max(f for f in flops if f < lo)
        above = min(f for f in flops if f > hi)
        assert below <= med <= above

    def test_deterministic(self):
        sp = load_space("fbnetv2-f")
        assert median_space_flops(sp, 50, seed=4) == median_space_flops(sp, 50, seed=4)


def test_total_flops_matches_report():
    from probnas.cost import total_flops
    for name in ("fbnetv2-f", "fbnetv2-f++", "bench-mbconv", "toy-3x4"):
        sp = load_space(name)
        rng = np.random.default_rng(4)
        for _ in range(25):
            a = uniform_architecture(sp, rng)
            assert total_flops(sp, a) == arch_flops(sp, a).total_flops
