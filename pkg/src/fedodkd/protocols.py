"""Federated round engine for the on-device KD method and its baselines.

Methods
-------
``proposed``
    Each round: all active clients train the small auxiliary model on labeled
    data and the server averages it (step 1); active strong clients then train
    the large target model for ``tau`` SGD steps on labeled data followed by
    ``tau`` distillation steps on their own unlabeled data, with the freshly
    averaged auxiliary model as teacher (step 2).
``fedavg_weak_only`` / ``fedavg_strong_only``
    FedAvg with ``2 * tau`` local steps on the small model (all clients) or the
    large model (strong clients only).
``feddf``
    FedAvg followed by ``tau`` server-side distillation steps on the public pool
    with the logit ensemble of the received client models as teacher.
``dsfl``
    No parameter exchange. Clients keep personal models (large on strong
    clients, small on weak ones), upload logits on the public pool and distil
    towards the averaged logits.
``fedmd``
    Like ``dsfl`` but with a labeled public pool: a one-off transfer phase on the
    public labels, then per round a digest phase towards the consensus logits
    and a revisit phase on private labeled data.

Every client draws minibatches from its own stream keyed by
``(train_seed, client_id, round, phase)``, and aggregation always reduces in
ascending client-id order, so running clients in a thread pool yields the same
bits as running them serially. Unless ``train_seed`` is pinned in the config,
each method gets its own training stream derived from the run seed, while the
data, partition, model initialisation and per-round activation draws stay
shared so that methods are compared on identical clients.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from . import analysis
from .config import METHODS, ExperimentConfig, canonical_method
from .data import (
    ClientData,
    Dataset,
    PartitionPlan,
    UnlabeledData,
    build_public_pool,
    dirichlet_partition,
    generate_synthetic,
    split_labeled_unlabeled,
)
from .losses import DistillConfig, cross_entropy_with_grad, distill_loss, lambda_at
from .nn_core import (
    ModelSpec,
    NumericalError,
    accuracy,
    backward_cached,
    forward,
    forward_cached,
    init_model,
    sgd_step,
)

log = logging.getLogger(__name__)

# stream tags; changing any of these changes every trajectory
PHASE_ACTIVATION = 0
PHASE_SGD_AUX = 1
PHASE_SGD_TARGET = 2
PHASE_KD_TARGET = 3
PHASE_SERVER_KD = 4
PHASE_LOGIT_KD = 5
PHASE_PUBLIC_CE = 6
PHASE_PRIVATE_CE = 7
PHASE_TRANSFER = 8

_TAG_POOL, _TAG_SPLIT, _TAG_STRONG, _TAG_INIT, _TAG_METHOD = 101, 102, 103, 104, 105

SERVER_ID = -1


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClientState:
    id: int
    strong: bool
    data: ClientData
    train_seed: int

    def rng(self, round_index: int, phase: int) -> np.random.Generator:
        return np.random.default_rng([self.train_seed, self.id + 1, round_index, phase])

    @property
    def eligible(self) -> bool:
        return len(self.data.labeled) > 0


@dataclass(frozen=True)
class RoundPlan:
    round_index: int
    active_set: tuple[int, ...]
    active_strong: tuple[int, ...]


@dataclass(frozen=True)
class ServerState:
    aux_params: np.ndarray
    target_params: np.ndarray
    cum_upload: int = 0
    cum_download: int = 0

    def charged(self, upload: int, download: int) -> "ServerState":
        return replace(
            self, cum_upload=self.cum_upload + upload, cum_download=self.cum_download + download
        )


@dataclass(frozen=True)
class SeedBundle:
    data: int
    partition: int
    init: int
    train: int

    @classmethod
    def from_config(cls, config: ExperimentConfig, seed: int) -> "SeedBundle":
        def pick(value):
            return seed if value is None else int(value)

        return cls(
            pick(config.data_seed),
            pick(config.partition_seed),
            pick(config.init_seed),
            pick(config.train_seed),
        )


@dataclass
class World:
    """Everything shared by the methods of one seed: data, partition, clients."""

    config: ExperimentConfig
    seeds: SeedBundle
    train: Dataset
    test: Dataset
    partition: PartitionPlan
    clients: list[ClientState]
    public: Dataset | UnlabeledData | None = None
    public_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    @property
    def strong_ids(self) -> list[int]:
        return [c.id for c in self.clients if c.strong]

    @property
    def public_inputs(self) -> np.ndarray | None:
        return None if self.public is None else self.public.inputs


def method_train_seed(config: ExperimentConfig, seeds: SeedBundle, method: str) -> int:
    """The training-stream seed of ``method``: the pinned ``train_seed`` or one derived per method."""
    if config.train_seed is not None:
        return int(config.train_seed)
    return derive_seed(seeds.train, _TAG_METHOD, METHODS.index(canonical_method(method)))


def build_world(config: ExperimentConfig, seed: int | SeedBundle = 0) -> World:
    seeds = seed if isinstance(seed, SeedBundle) else SeedBundle.from_config(config, seed)
    split = generate_synthetic(
        config.num_classes,
        config.input_dim,
        config.samples_per_class,
        config.separation,
        seeds.data,
        test_per_class=config.test_per_class,
        modes_per_class=config.modes_per_class,
    )
    train = split.train
    public, public_idx = None, np.zeros(0, dtype=np.intp)
    if config.public_pool_size > 0:
        public, public_idx = build_public_pool(
            train,
            config.public_pool_size,
            config.public_pool_labeled,
            derive_seed(seeds.partition, _TAG_POOL),
        )
    remaining = np.setdiff1d(np.arange(len(train)), public_idx)
    plan = dirichlet_partition(
        train, config.n_clients, config.dirichlet_alpha, seeds.partition, indices=remaining
    )
    # a prefix of one permutation, so strong sets are nested across strong ratios
    order = np.random.default_rng(derive_seed(seeds.partition, _TAG_STRONG)).permutation(
        config.n_clients
    )
    strong = set(order[: config.n_strong].tolist())
    clients = [
        ClientState(
            i,
            i in strong,
            split_labeled_unlabeled(
                train,
                plan.assignments[i],
                config.unlabeled_fraction,
                derive_seed(seeds.partition, _TAG_SPLIT, i),
            ),
            seeds.train,
        )
        for i in range(config.n_clients)
    ]
    return World(config, seeds, train, split.test, plan, clients, public, public_idx)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def sample_active(
    eligible: Sequence[int], n_total: int, fraction: float, rng: np.random.Generator
) -> tuple[int, ...]:
    """Uniformly draw ``round(fraction * n_total)`` eligible ids without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    pool = np.sort(np.asarray(list(eligible), dtype=np.intp))
    if pool.size == 0:
        raise ValueError("no eligible clients to activate")
    k = min(pool.size, max(1, _round_half_up(fraction * n_total)))
    return tuple(sorted(rng.choice(pool, size=k, replace=False).tolist()))


def _ordered_mean(arrays: Sequence[np.ndarray]) -> np.ndarray:
    # offsets from the first entry: exact for identical inputs and exact cancellation
    ref = arrays[0]
    acc = np.zeros_like(ref)
    for a in arrays[1:]:
        acc += a - ref
    # where every offset cancels, ref itself is the exact mean (keeps signed zeros)
    return np.where(acc == 0.0, ref, ref + acc / len(arrays))


def aggregate_uniform(param_vectors: Mapping[int, np.ndarray] | Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean; a mapping is reduced in ascending key (client id) order."""
    if isinstance(param_vectors, Mapping):
        vectors = [param_vectors[k] for k in sorted(param_vectors)]
    else:
        vectors = list(param_vectors)
    if not vectors:
        raise ValueError("cannot aggregate an empty list")
    shape = vectors[0].shape
    if any(v.shape != shape for v in vectors):
        raise ValueError("parameter vectors differ in length")
    return _ordered_mean([np.asarray(v, dtype=np.float64) for v in vectors])


def logit_ensemble(models: Sequence[tuple[ModelSpec, np.ndarray]], public_inputs: np.ndarray) -> np.ndarray:
    if not models:
        raise ValueError("logit ensemble needs at least one model")
    classes = {spec.num_classes for spec, _ in models}
    if len(classes) != 1:
        raise ValueError("models disagree on the number of classes")
    return _ordered_mean([forward(spec, p, public_inputs) for spec, p in models])


class LocalUpdate(NamedTuple):
    params: np.ndarray
    loss: float  # mean per-step training loss, nan when no step ran


def _batches(n: int, batch_size: int, steps: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    b = min(batch_size, n)
    perm, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + b > n:
            perm, pos = rng.permutation(n), 0
        yield perm[pos : pos + b]
        pos += b


def _check_loss(value: float) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite training loss {value}")


def local_sgd(
    spec: ModelSpec,
    start_params: np.ndarray,
    labeled: Dataset,
    tau: int,
    batch_size: int,
    lr: float,
    weight_decay: float,
    rng: np.random.Generator,
) -> LocalUpdate:
    """``tau`` minibatch SGD steps on cross-entropy; ``start_params`` is left untouched."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if len(labeled) == 0:
        raise ValueError("local_sgd needs labeled data")
    params = start_params
    losses = []
    for idx in _batches(len(labeled), batch_size, tau, rng):
        logits, cache = forward_cached(spec, params, labeled.inputs[idx])
        loss, dlogits = cross_entropy_with_grad(logits, labeled.labels[idx])
        _check_loss(loss)
        losses.append(loss)
        params = sgd_step(params, backward_cached(spec, params, cache, dlogits), lr, weight_decay)
    if params is start_params:
        params = start_params.copy()
    return LocalUpdate(params, float(np.mean(losses)))


def distill_steps(
    spec: ModelSpec,
    start_params: np.ndarray,
    inputs: np.ndarray,
    teacher_logits: np.ndarray,
    tau: int,
    batch_size: int,
    lr: float,
    weight_decay: float,
    weight: float,
    cfg: DistillConfig,
    rng: np.random.Generator,
    labeled: Dataset | None = None,
) -> LocalUpdate:
    """``tau`` steps on ``weight * KD(teacher || student)`` over rows of ``inputs``.

    ``teacher_logits`` are fixed targets aligned with ``inputs``. When
    ``labeled`` is given, every step also adds the cross-entropy of a labeled
    minibatch drawn from a second, independent cycle of the same stream.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if len(inputs) == 0:
        raise ValueError("distillation needs at least one input")
    use_ce = labeled is not None and len(labeled) > 0
    if weight == 0.0 and not use_ce:
        return LocalUpdate(start_params.copy(), 0.0)
    params = start_params
    losses = []
    kd_batches = _batches(len(inputs), batch_size, tau, rng)
    ce_batches = _batches(len(labeled), batch_size, tau, rng) if use_ce else None
    for idx in kd_batches:
        logits, cache = forward_cached(spec, params, inputs[idx])
        kd, dlogits = distill_loss(teacher_logits[idx], logits, cfg)
        _check_loss(kd)
        losses.append(kd)
        grads = backward_cached(spec, params, cache, weight * dlogits)
        if use_ce:
            cidx = next(ce_batches)
            clogits, ccache = forward_cached(spec, params, labeled.inputs[cidx])
            ce, cdl = cross_entropy_with_grad(clogits, labeled.labels[cidx])
            _check_loss(ce)
            grads = grads + backward_cached(spec, params, ccache, cdl)
        params = sgd_step(params, grads, lr, weight_decay)
    return LocalUpdate(params, float(np.mean(losses)))


def local_kd(
    spec_l: ModelSpec,
    start_target_params: np.ndarray,
    teacher: tuple[ModelSpec, np.ndarray],
    unlabeled_inputs: np.ndarray,
    tau: int,
    batch_size: int,
    lr: float,
    weight_decay: float,
    lambda_effective: float,
    cfg: DistillConfig,
    rng: np.random.Generator,
    labeled: Dataset | None = None,
) -> LocalUpdate:
    """On-device distillation of the target model from a frozen teacher."""
    spec_s, teacher_params = teacher
    if spec_s.num_classes != spec_l.num_classes:
        raise ValueError("teacher and student disagree on the number of classes")
    inputs = np.asarray(unlabeled_inputs, dtype=np.float64)
    teacher_logits = forward(spec_s, teacher_params, inputs) if len(inputs) else inputs
    return distill_steps(
        spec_l,
        start_target_params,
        inputs,
        teacher_logits,
        tau,
        batch_size,
        lr,
        weight_decay,
        lambda_effective,
        cfg,
        rng,
        labeled=labeled,
    )


# ---------------------------------------------------------------------------
# rounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundHyper:
    spec_s: ModelSpec
    spec_l: ModelSpec
    tau: int
    batch_size: int
    lr: float
    weight_decay: float
    lambda_effective: float
    distill: DistillConfig
    kd_phase_includes_ce: bool = False
    workers: int = 1


@dataclass
class RoundStats:
    ce_losses: list[float] = field(default_factory=list)
    kd_losses: list[float] = field(default_factory=list)
    steps: dict[int, int] = field(default_factory=dict)
    upload: int = 0
    download: int = 0

    def add_steps(self, client_id: int, n: int) -> None:
        self.steps[client_id] = self.steps.get(client_id, 0) + n

    def charge(self, upload: int, download: int) -> None:
        self.upload += upload
        self.download += download


def _map_clients(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def auxiliary_round(
    server: ServerState,
    clients: Mapping[int, ClientState],
    plan: RoundPlan,
    hp: RoundHyper,
    stats: RoundStats | None = None,
) -> ServerState:
    """Step 1: every active client trains the auxiliary model; the server averages."""
    if not plan.active_set:
        raise ValueError("auxiliary round needs at least one active client")
    stats = stats if stats is not None else RoundStats()
    snapshot = server.aux_params
    n_s = snapshot.size

    def job(cid):
        c = clients[cid]
        return local_sgd(
            hp.spec_s, snapshot, c.data.labeled, hp.tau, hp.batch_size, hp.lr,
            hp.weight_decay, c.rng(plan.round_index, PHASE_SGD_AUX),
        )

    ids = sorted(plan.active_set)
    results = _map_clients(job, ids, hp.workers)
    for cid, res in zip(ids, results):
        stats.ce_losses.append(res.loss)
        stats.add_steps(cid, hp.tau)
        stats.charge(res.params.size, n_s)
    new_aux = aggregate_uniform({cid: r.params for cid, r in zip(ids, results)})
    return replace(server, aux_params=new_aux).charged(len(ids) * n_s, len(ids) * n_s)


def target_round(
    server: ServerState,
    clients: Mapping[int, ClientState],
    plan: RoundPlan,
    hp: RoundHyper,
    stats: RoundStats | None = None,
) -> ServerState:
    """Step 2: active strong clients run SGD then on-device KD on the target model."""
    stats = stats if stats is not None else RoundStats()
    ids = sorted(plan.active_strong)
    if not ids:
        log.info("round %d: no active strong client, target model unchanged", plan.round_index)
        return server
    teacher = (hp.spec_s, server.aux_params)
    snapshot = server.target_params

    def job(cid):
        c = clients[cid]
        sgd = local_sgd(
            hp.spec_l, snapshot, c.data.labeled, hp.tau, hp.batch_size, hp.lr,
            hp.weight_decay, c.rng(plan.round_index, PHASE_SGD_TARGET),
        )
        if len(c.data.unlabeled) == 0:
            log.info("round %d: client %d has no unlabeled data, KD skipped", plan.round_index, cid)
            return sgd, None
        kd = local_kd(
            hp.spec_l, sgd.params, teacher, c.data.unlabeled.inputs, hp.tau, hp.batch_size,
            hp.lr, hp.weight_decay, hp.lambda_effective, hp.distill,
            c.rng(plan.round_index, PHASE_KD_TARGET),
            labeled=c.data.labeled if hp.kd_phase_includes_ce else None,
        )
        return sgd, kd

    results = _map_clients(job, ids, hp.workers)
    n_s, n_l = server.aux_params.size, snapshot.size
    finals = {}
    for cid, (sgd, kd) in zip(ids, results):
        stats.ce_losses.append(sgd.loss)
        stats.add_steps(cid, hp.tau)
        if kd is not None:
            stats.kd_losses.append(kd.loss)
            stats.add_steps(cid, hp.tau)
        finals[cid] = sgd.params if kd is None else kd.params
        stats.charge(n_l, n_s + n_l)
    new_target = aggregate_uniform(finals)
    k = len(ids)
    return replace(server, target_params=new_target).charged(k * n_l, k * (n_s + n_l))


# ---------------------------------------------------------------------------
# method driver
# ---------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    round: int
    epoch_equivalent: float
    aux_test_accuracy: float
    target_test_accuracy: float
    train_ce_loss: float
    kd_loss: float
    lambda_effective: float
    cum_comm_upload: int
    cum_comm_download: int

    COLUMNS = (
        "round",
        "epoch_equivalent",
        "aux_test_accuracy",
        "target_test_accuracy",
        "train_ce_loss",
        "kd_loss",
        "lambda_effective",
        "cum_comm_upload",
        "cum_comm_download",
    )

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.COLUMNS}


@dataclass
class RunResult:
    method: str
    records: list[MetricsRecord]
    server: ServerState
    comm_log: list[tuple[int, int]]
    plans: list[RoundPlan]
    round_stats: list[RoundStats]
    local_models: dict[int, np.ndarray]

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]


def _nanmean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


class Simulation:
    """Runs one method on one :class:`World`, round by round."""

    def __init__(self, config: ExperimentConfig, world: World, method: str, workers: int | None = None):
        self.config = config
        self.world = world
        self.method = canonical_method(method)
        self.workers = config.workers if workers is None else workers
        self.spec_s = config.aux_spec
        self.spec_l = config.target_spec
        self.distill = config.distill
        self.train_seed = method_train_seed(config, world.seeds, self.method)
        self.clients = {c.id: replace(c, train_seed=self.train_seed) for c in world.clients}
        self.eligible = [c.id for c in world.clients if c.eligible]
        if self.method in ("feddf", "dsfl", "fedmd") and world.public is None:
            raise ValueError(f"{self.method} needs a public pool")
        if self.method == "fedmd" and not isinstance(world.public, Dataset):
            raise ValueError("fedmd needs a labeled public pool")
        init = world.seeds.init
        self.server = ServerState(
            init_model(self.spec_s, derive_seed(init, _TAG_INIT, 0)),
            init_model(self.spec_l, derive_seed(init, _TAG_INIT, 1)),
        )
        self.local_models: dict[int, np.ndarray] = {}
        self.round_index = 0
        self.comm_log: list[tuple[int, int]] = []
        self.plans: list[RoundPlan] = []
        self.round_stats: list[RoundStats] = []

    # -- helpers -----------------------------------------------------------

    def spec_for(self, cid: int) -> ModelSpec:
        return self.spec_l if self.clients[cid].strong else self.spec_s

    def plan(self, r: int) -> RoundPlan:
        rng = np.random.default_rng([self.world.seeds.train, 0, r, PHASE_ACTIVATION])
        active = sample_active(self.eligible, len(self.clients), self.config.activation_fraction, rng)
        if self.config.all_strong:
            strong = tuple(cid for cid in self.eligible if self.clients[cid].strong)
        else:
            strong = tuple(cid for cid in active if self.clients[cid].strong)
        return RoundPlan(r, active, strong)

    def hyper(self, r: int, tau: int | None = None) -> RoundHyper:
        cfg = self.config
        return RoundHyper(
            self.spec_s,
            self.spec_l,
            cfg.tau if tau is None else tau,
            cfg.batch_size,
            cfg.lr_schedule.lr_at(r),
            cfg.weight_decay,
            lambda_at(r, self.distill),
            self.distill,
            cfg.kd_phase_includes_ce,
            self.workers,
        )

    def _fedavg(self, ids, spec, start, steps, phase, r, hp, stats) -> np.ndarray:
        def job(cid):
            c = self.clients[cid]
            return local_sgd(spec, start, c.data.labeled, steps, hp.batch_size, hp.lr,
                             hp.weight_decay, c.rng(r, phase))

        results = _map_clients(job, ids, self.workers)
        for cid, res in zip(ids, results):
            stats.ce_losses.append(res.loss)
            stats.add_steps(cid, steps)
            stats.charge(res.params.size, start.size)
        k = len(ids)
        self.server = self.server.charged(k * start.size, k * start.size)
        return aggregate_uniform({cid: res.params for cid, res in zip(ids, results)})

    # -- methods -----------------------------------------------------------

    def _round_proposed(self, plan, hp, stats):
        if self.config.aux_rounds:
            self.server = auxiliary_round(self.server, self.clients, plan, hp, stats)
        self.server = target_round(self.server, self.clients, plan, hp, stats)

    def _round_weak_only(self, plan, hp, stats):
        ids = list(plan.active_set)
        aux = self._fedavg(ids, self.spec_s, self.server.aux_params, 2 * hp.tau,
                           PHASE_SGD_AUX, plan.round_index, hp, stats)
        self.server = replace(self.server, aux_params=aux)

    def _round_strong_only(self, plan, hp, stats):
        ids = list(plan.active_strong)
        if not ids:
            log.info("round %d: no active strong client, skipped", plan.round_index)
            return
        target = self._fedavg(ids, self.spec_l, self.server.target_params, 2 * hp.tau,
                              PHASE_SGD_TARGET, plan.round_index, hp, stats)
        self.server = replace(self.server, target_params=target)

    def _round_feddf(self, plan, hp, stats):
        r = plan.round_index
        small = self.config.homogeneous_model == "aux"
        spec = self.spec_s if small else self.spec_l
        start = self.server.aux_params if small else self.server.target_params
        ids = list(plan.active_set if small else plan.active_strong)
        if not ids:
            log.info("round %d: no participant, skipped", r)
            return
        results = {}

        def job(cid):
            c = self.clients[cid]
            return local_sgd(spec, start, c.data.labeled, hp.tau, hp.batch_size, hp.lr,
                             hp.weight_decay, c.rng(r, PHASE_SGD_AUX if small else PHASE_SGD_TARGET))

        for cid, res in zip(ids, _map_clients(job, ids, self.workers)):
            results[cid] = res.params
            stats.ce_losses.append(res.loss)
            stats.add_steps(cid, hp.tau)
            stats.charge(res.params.size, start.size)
        self.server = self.server.charged(len(ids) * start.size, len(ids) * start.size)
        averaged = aggregate_uniform(results)
        pool = self.world.public_inputs
        teacher = logit_ensemble([(spec, results[cid]) for cid in sorted(results)], pool)
        server_rng = np.random.default_rng([self.train_seed, 0, r, PHASE_SERVER_KD])
        kd = distill_steps(spec, averaged, pool, teacher, hp.tau, hp.batch_size, hp.lr,
                           hp.weight_decay, 1.0, self.distill, server_rng)
        stats.kd_losses.append(kd.loss)
        stats.add_steps(SERVER_ID, hp.tau)
        if small:
            self.server = replace(self.server, aux_params=kd.params)
        else:
            self.server = replace(self.server, target_params=kd.params)

    def _local(self, cid: int) -> np.ndarray:
        if cid not in self.local_models:
            c = self.clients[cid]
            start = self.server.target_params if c.strong else self.server.aux_params
            if self.method == "fedmd":
                # one-off transfer learning on the labeled public pool
                pub = self.world.public
                start = local_sgd(self.spec_for(cid), start, pub, self.config.tau,
                                  self.config.batch_size, self.config.lr_schedule.lr_at(0),
                                  self.config.weight_decay, c.rng(0, PHASE_TRANSFER)).params
            self.local_models[cid] = start
        return self.local_models[cid]

    def _round_logits(self, plan, hp, stats):
        r = plan.round_index
        ids = list(plan.active_set)
        pool = self.world.public_inputs
        C = self.config.num_classes
        msg = C * pool.shape[0]
        fedmd = self.method == "fedmd"

        starts = {cid: self._local(cid) for cid in ids}
        if fedmd:
            trained = starts
        else:
            def train(cid):
                c = self.clients[cid]
                return local_sgd(self.spec_for(cid), starts[cid], c.data.labeled, hp.tau,
                                 hp.batch_size, hp.lr, hp.weight_decay, c.rng(r, PHASE_PRIVATE_CE))

            trained = {}
            for cid, res in zip(ids, _map_clients(train, ids, self.workers)):
                trained[cid] = res.params
                stats.ce_losses.append(res.loss)
                stats.add_steps(cid, hp.tau)

        consensus = logit_ensemble([(self.spec_for(cid), trained[cid]) for cid in ids], pool)
        if not fedmd:
            consensus = consensus / self.config.dsfl_sharpen_temperature
        for cid in ids:
            stats.charge(msg, msg)
        self.server = self.server.charged(len(ids) * msg, len(ids) * msg)

        def digest(cid):
            c = self.clients[cid]
            spec = self.spec_for(cid)
            kd = distill_steps(spec, trained[cid], pool, consensus, hp.tau, hp.batch_size, hp.lr,
                               hp.weight_decay, 1.0, self.distill, c.rng(r, PHASE_LOGIT_KD))
            if not fedmd:
                return kd, None
            ce = local_sgd(spec, kd.params, c.data.labeled, hp.tau, hp.batch_size, hp.lr,
                           hp.weight_decay, c.rng(r, PHASE_PRIVATE_CE))
            return kd, ce

        for cid, (kd, ce) in zip(ids, _map_clients(digest, ids, self.workers)):
            stats.kd_losses.append(kd.loss)
            stats.add_steps(cid, hp.tau)
            final = kd.params
            if ce is not None:
                stats.ce_losses.append(ce.loss)
                stats.add_steps(cid, hp.tau)
                final = ce.params
            self.local_models[cid] = final

    _ROUNDS = {
        "proposed": _round_proposed,
        "fedavg_weak_only": _round_weak_only,
        "fedavg_strong_only": _round_strong_only,
        "feddf": _round_feddf,
        "dsfl": _round_logits,
        "fedmd": _round_logits,
    }

    # -- evaluation --------------------------------------------------------

    def _ensemble_accuracy(self, strong: bool) -> float:
        ids = sorted(cid for cid in self.local_models if self.clients[cid].strong == strong)
        if not ids:
            return float("nan")
        test = self.world.test
        models = [(self.spec_for(cid), self.local_models[cid]) for cid in ids]
        return accuracy(logit_ensemble(models, test.inputs), test.labels)

    def evaluate(self) -> tuple[float, float]:
        """Return ``(aux accuracy, output-model accuracy)`` on the test split."""
        test = self.world.test
        acc_s = accuracy(forward(self.spec_s, self.server.aux_params, test.inputs), test.labels)
        acc_l = accuracy(forward(self.spec_l, self.server.target_params, test.inputs), test.labels)
        m = self.method
        if m == "proposed":
            return acc_s, acc_l
        if m == "fedavg_weak_only":
            return acc_s, acc_s
        if m == "fedavg_strong_only":
            return float("nan"), acc_l
        if m == "feddf":
            return (acc_s, acc_s) if self.config.homogeneous_model == "aux" else (float("nan"), acc_l)
        weak_acc = self._ensemble_accuracy(strong=False)
        strong_acc = self._ensemble_accuracy(strong=True)
        return weak_acc, (strong_acc if np.isfinite(strong_acc) else weak_acc)

    # -- driver ------------------------------------------------------------

    def step(self) -> RoundStats:
        r = self.round_index
        plan = self.plan(r)
        hp = self.hyper(r)
        stats = RoundStats()
        self._ROUNDS[self.method](self, plan, hp, stats)
        self.plans.append(plan)
        self.round_stats.append(stats)
        self.comm_log.append((stats.upload, stats.download))
        self.round_index += 1
        return stats

    def run(self) -> Iterator[MetricsRecord]:
        cfg = self.config
        for r in range(cfg.rounds):
            stats = self.step()
            done = r + 1
            if done % cfg.eval_every == 0 or done == cfg.rounds:
                acc_s, acc_l = self.evaluate()
                yield MetricsRecord(
                    round=done,
                    epoch_equivalent=float(done),
                    aux_test_accuracy=acc_s,
                    target_test_accuracy=acc_l,
                    train_ce_loss=_nanmean(stats.ce_losses),
                    kd_loss=_nanmean(stats.kd_losses),
                    lambda_effective=lambda_at(r, self.distill),
                    cum_comm_upload=self.server.cum_upload,
                    cum_comm_download=self.server.cum_download,
                )

    def result(self, records: list[MetricsRecord]) -> RunResult:
        return RunResult(self.method, records, self.server, self.comm_log, self.plans,
                         self.round_stats, self.local_models)


def run_method(
    config: ExperimentConfig, world: World, method: str | None = None, workers: int | None = None
) -> RunResult:
    """Run one method to completion and collect its metrics stream."""
    sim = Simulation(config, world, method or config.methods[0], workers=workers)
    records = list(sim.run())
    return sim.result(records)


def empirical_losses(config: ExperimentConfig, world: World, result: RunResult) -> dict[int, dict]:
    """Per strong client, the target model's loss on its training data.

    For ``proposed`` the training set is labeled plus unlabeled data: the loss
    is the size-weighted mean of cross-entropy on the labeled part and the
    distillation loss against the auxiliary model on the unlabeled part, the
    only quantity measurable without reading withheld labels. Other methods
    that train the target model only see the labeled part.
    """
    spec_s, spec_l = config.aux_spec, config.target_spec
    server = result.server
    uses_unlabeled = result.method == "proposed"
    out = {}
    for c in world.clients:
        if not c.strong:
            continue
        lab, unl = c.data.labeled, c.data.unlabeled
        n_lab = len(lab)
        n_unl = len(unl) if uses_unlabeled else 0
        total, weight = 0.0, 0
        if n_lab:
            logits = forward(spec_l, server.target_params, lab.inputs)
            total += n_lab * cross_entropy_with_grad(logits, lab.labels)[0]
            weight += n_lab
        if n_unl:
            teacher = forward(spec_s, server.aux_params, unl.inputs)
            student = forward(spec_l, server.target_params, unl.inputs)
            total += n_unl * distill_loss(teacher, student, config.distill)[0]
            weight += n_unl
        out[c.id] = {
            "n_labeled": n_lab,
            "n_unlabeled": n_unl,
            "loss": total / weight if weight else float("nan"),
        }
    return out


def comm_entries(config: ExperimentConfig, world: World, result: RunResult) -> list[analysis.CommEntry]:
    """Per-round communication predicted by :func:`analysis.comm_cost` for the realised plans."""
    pool = 0 if world.public is None else len(world.public)
    entries = []
    for plan in result.plans:
        entries.append(
            analysis.comm_cost(
                result.method,
                config.aux_spec,
                config.target_spec,
                config.num_classes,
                len(plan.active_set),
                len(plan.active_strong),
                pool,
                homogeneous_model=config.homogeneous_model,
                aux_rounds=config.aux_rounds,
            )
        )
    return entries


__all__ = [
    "ClientState",
    "RoundPlan",
    "ServerState",
    "SeedBundle",
    "World",
    "build_world",
    "method_train_seed",
    "sample_active",
    "aggregate_uniform",
    "logit_ensemble",
    "local_sgd",
    "local_kd",
    "distill_steps",
    "auxiliary_round",
    "target_round",
    "RoundHyper",
    "RoundStats",
    "MetricsRecord",
    "RunResult",
    "Simulation",
    "run_method",
    "empirical_losses",
    "comm_entries",
]
