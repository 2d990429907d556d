# coding: utf-8

# # Adaptive sample counts and importance weights
#
# Adaptive sampling draws floor(lambda * H) architectures per step, where H
# is the entropy of the distribution in nats. A broad distribution gets many
# samples; a concentrated one gets a single sample.

import math

from probnas import SamplingPolicy, importance_weights, sample_count

pol = SamplingPolicy("adaptive", lam=0.25)
for h in (math.log(6e25), 40.0, 20.0, 8.0, 3.0):
    print(f"H = {h:6.2f} nats -> K = {sample_count(pol, h)}")

# Each sample gets a weight: the softmax of its validation log-likelihood
# minus beta times its share of the total budget overrun. Samples within
# budget lose nothing.

w = importance_weights([-1.0, -1.2, -0.8], [0.0, 0.3, 0.1], beta=0.3)
print("likelihood part", w.likelihood_part.round(4))
print("cost part      ", w.cost_part.round(4))
print("weights        ", w.m.round(4), "sum", round(w.m.sum(), 6))

# With one sample the softmax is exactly 1, so the update is the same for
# every evaluator outcome.

print("single sample:", importance_weights([-5.0], [0.0], beta=0.3).m)
