"""
Traffic per round and the sample-size term
==========================================

Communication is counted in transmitted elements. Parameter-averaging
methods pay for model size; logit-exchange methods pay for the public pool.
"""

# %%
from fedodkd import ExperimentConfig, build_world, comm_cost, hoeffding_term, param_count, run_method
from fedodkd.analysis import bound_report
from fedodkd.protocols import empirical_losses

config = ExperimentConfig()
spec_s, spec_l = config.aux_spec, config.target_spec
print(f"|w_s| = {param_count(spec_s)}, |w_l| = {param_count(spec_l)}")

# %%
# A typical round: 20 active clients, 4 of them strong, a 500-sample pool.
for method in ("fedavg_weak_only", "fedavg_strong_only", "feddf", "dsfl", "proposed"):
    e = comm_cost(method, spec_s, spec_l, config.num_classes, 20, 4, public_pool_size=500)
    print(f"{method:<20} upload {e.upload:>7}  download {e.download:>7}")

# %%
# The sample-size term shrinks with the square root of the data a client
# trains on; counting unlabeled inputs makes it smaller.
for n in (50, 100, 200, 400):
    print(f"n={n:>3}: {hoeffding_term(0.05, n):.4f}")

# %%
# Per strong client: labeled-only versus labeled plus unlabeled.
short = config.replace(rounds=60, eval_every=60)
world = build_world(short, seed=0)
result = run_method(short, world, "proposed")
losses = empirical_losses(short, world, result)
sizes = {cid: (v["n_labeled"], v["n_labeled"] + v["n_unlabeled"]) for cid, v in losses.items()}
report = bound_report(sizes, {cid: v["loss"] for cid, v in losses.items()}, p=0.05)
for row in report.clients[:5]:
    print(f"client {row.client_id:>2}: n={row.n_labeled:>3}/{row.n_combined:>3} "
          f"term {row.sample_term_labeled_only:.3f} -> {row.sample_term:.3f}")
print(f"partial bound {report.partial_bound:.3f}; not computable here: {report.missing_terms}")
