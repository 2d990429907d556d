# coding: utf-8

# # Weight-sharing supernet
#
# The toy supernet is a dense network whose layers hold one weight bank per
# candidate choice. A sampled architecture picks a path through the banks;
# training touches only the banks on that path. After warm-up epochs that
# train weights alone, the distribution is updated from validation
# log-likelihoods.

from probnas import SearchConfig, ToySupernet, load_space, run_search

sp = load_space("toy-dense")
net = ToySupernet(sp, seed=0, n_train=1000, n_val=500, batch_size=64)
print("supernet parameters:", net.parameter_count)

cfg = SearchConfig(epochs=30, warmup_epochs=10, steps_per_epoch=8, beta=0.0, seed=0)
r = run_search(cfg, sp, net)
print("selected:", sp.values(r.architecture))
print(f"validation accuracy {net.accuracy(r.architecture):.3f}")
print(f"entropy {r.trace.rows[0].entropy_nats:.2f} -> {r.trace.rows[-1].entropy_nats:.2f} nats")
