"""Heterogeneous federated learning with on-device knowledge distillation.

A small auxiliary model is trained by every client through plain parameter
averaging; strong clients additionally train a large target model on their
labeled data and distil the auxiliary model into it on their unlabeled data.
Logit-ensemble baselines (FedDF, DS-FL, FedMD) and FedAvg run on the same
simulated clients for comparison.
"""

from .analysis import BoundReport, CommReport, bound_report, comm_cost, hoeffding_term
from .config import ExperimentConfig, load_config, save_config
from .data import (
    ClientData,
    Dataset,
    UnlabeledData,
    build_public_pool,
    dirichlet_partition,
    generate_synthetic,
    split_labeled_unlabeled,
)
from .losses import DistillConfig, cross_entropy, distill_loss, kl_div, lambda_at, softmax_t
from .nn_core import LrSchedule, ModelSpec, backward, forward, init_model, param_count, sgd_step
from .protocols import (
    Simulation,
    World,
    aggregate_uniform,
    build_world,
    logit_ensemble,
    run_method,
)

__version__ = "0.1.0"
