"""
Label skew from a Dirichlet split
=================================

The benchmark data are Gaussian clusters, three per class. Each class is
divided over clients by a Dirichlet(alpha) draw, so a small alpha leaves most
clients with one or two classes. Half of every client's samples then lose
their labels.
"""

# %%
import numpy as np

from fedodkd import dirichlet_partition, generate_synthetic, split_labeled_unlabeled
from fedodkd.data import max_class_share

split = generate_synthetic(C=10, input_dim=20, samples_per_class=150, separation=5.0,
                           seed=0, modes_per_class=3)
train = split.train
print("train", train.inputs.shape, "test", split.test.inputs.shape)

# %%
# The smaller alpha is, the more a typical client is dominated by one class.
for alpha in (0.1, 1.0, 100.0):
    plan = dirichlet_partition(train, n_clients=100, alpha=alpha, seed=0)
    shares = max_class_share(train, plan)
    print(f"alpha={alpha:>5}: mean majority share {shares.mean():.2f}, "
          f"empty clients {len(plan.empty_clients)}, largest client {max(plan.sizes)}")

# %%
# What a few clients look like at alpha=0.1.
plan = dirichlet_partition(train, n_clients=100, alpha=0.1, seed=0)
for cid in range(5):
    counts = np.bincount(train.labels[plan.assignments[cid]], minlength=10)
    print(f"client {cid}: {counts}")

# %%
# Each client keeps half of its samples as label-free inputs.
client = split_labeled_unlabeled(train, plan.assignments[0], unlabeled_fraction=0.5, seed=1)
print("labeled", len(client.labeled), "unlabeled", len(client.unlabeled))
print("unlabeled data carries labels?", hasattr(client.unlabeled, "labels"))
