# coding: utf-8

# # Searching under a FLOPS budget
#
# The hinge cost max(0, FLOPs / target - 1) only penalises architectures
# over budget. Here the target is set below the oracle's favourite, and a
# fixed sample count keeps the likelihood signal alive.

from probnas import SamplingPolicy, SearchConfig, TabularOracle, arch_flops, load_space, run_search

sp = load_space("toy-3x4")
oracle = TabularOracle(sp, seed=4, chain_scale=1.0)
best = oracle.best()[1]
target = arch_flops(sp, best).total_flops / 1.25
print(f"unconstrained best {best.choices} uses {arch_flops(sp, best).total_flops:,} FLOPs; target {target:,.0f}")

for beta in (0.0, 0.3):
    cfg = SearchConfig(epochs=200, warmup_epochs=0, beta=beta, target_flops=target,
                       sampling=SamplingPolicy("fixed", k=8), seed=4)
    r = run_search(cfg, sp, oracle)
    print(f"beta={beta}: {r.architecture.choices} uses {r.cost.total_flops:,} FLOPs")
