# coding: utf-8

# # Joint and factorized architecture distributions
#
# Each position either gets one categorical over every combination of its
# variables (joint) or one categorical per variable (factorized). The
# factorized form needs far fewer logits.

import numpy as np

from probnas import entropy, factorized_to_joint, init_uniform, log_prob, sample

cards = [(3, 2, 2, 6, 10)]
print("joint logits:", init_uniform(cards, "joint").parameter_count)
print("factorized logits:", init_uniform(cards, "factorized").parameter_count)

# Give the factorized form some random logits and draw a few architectures.

rng = np.random.default_rng(0)
fact = init_uniform(cards, "factorized")
fact = fact.with_logits(rng.normal(size=fact.parameter_count))
for _ in range(3):
    arch, lp = sample(fact, rng)
    print(arch.choices, f"log p = {lp:.3f}")

# Converting to the joint form keeps every probability and the entropy.
# From here on the joint logits can learn interactions the factorized
# form cannot express.

joint = factorized_to_joint(fact)
arch, _ = sample(fact, rng)
print(f"log p factorized {log_prob(fact, arch):.12f}")
print(f"log p joint      {log_prob(joint, arch):.12f}")
print(f"entropy {entropy(fact):.6f} vs {entropy(joint):.6f} nats")
