# coding: utf-8

# # Search spaces and the FLOPS model
#
# A search space is a YAML document of block groups. Searchable groups list
# the candidate values of each variable (kernel, nonlinearity, splits,
# expansion, channel). The bundled presets load by name.

import numpy as np

from probnas import arch_flops, load_space
from probnas.space import space_size, uniform_architecture

sp = load_space("fbnetv2-f")
log10_size, exact = space_size(sp)
print(f"fbnetv2-f: {sp.num_positions} searchable positions, 10^{log10_size:.2f} architectures")
print("cardinalities of the first position:", sp.cardinalities()[0])

# Draw a random architecture and look at the per-layer FLOPS breakdown.

rng = np.random.default_rng(0)
arch = uniform_architecture(sp, rng)
report = arch_flops(sp, arch)
for values, (_, flops) in zip(sp.values(arch)[:4], report.per_position[:4]):
    print(f"  {values}  ->  {flops:,} FLOPs")
print(f"total: {report.total_flops:,} FLOPs")

# A block with kernel 0 is a skip: it costs nothing and keeps its input
# width. Skips cannot downsample, so the validator refuses them at stride-2
# positions.

from probnas import SpaceError

skip = [dict(v, kernel=0) for v in sp.values(arch)]
try:
    sp.architecture(skip)
except SpaceError as err:
    print("rejected:", err)

toy = load_space("toy-dense")
all_skip = toy.architecture([dict(v, kernel=0) for v in toy.values(uniform_architecture(toy, rng))])
print("toy-dense all-skip total (stem and head only):", arch_flops(toy, all_skip).total_flops)
