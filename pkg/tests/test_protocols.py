import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedodkd.config import METHODS, ExperimentConfig
from fedodkd.data import Dataset
from fedodkd.losses import DistillConfig
from fedodkd.nn_core import ModelSpec, forward, init_model, param_count
from fedodkd.protocols import (
    RoundHyper,
    RoundPlan,
    RoundStats,
    ServerState,
    Simulation,
    aggregate_uniform,
    auxiliary_round,
    build_world,
    comm_entries,
    empirical_losses,
    local_kd,
    local_sgd,
    logit_ensemble,
    method_train_seed,
    run_method,
    sample_active,
    target_round,
)


def tiny(**overrides):
    base = dict(
        n_clients=10, num_classes=4, input_dim=5, samples_per_class=30, test_per_class=10,
        modes_per_class=1, separation=3.0, hidden_widths=[8], tau=2, batch_size=8, rounds=3,
        eval_every=1, activation_fraction=0.5, strong_fraction=0.4, dirichlet_alpha=0.5,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def pooled(**overrides):
    return tiny(public_pool_size=20, public_pool_labeled=True, **overrides)


def toy_dataset(seed=0, n=40):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    inputs = rng.normal(size=(n, 3)) + 3.0 * labels[:, None]
    return Dataset(inputs, labels, 2)


# -- activation ------------------------------------------------------------


def test_sample_active_size_and_membership():
    rng = np.random.default_rng(0)
    active = sample_active(range(100), 100, 0.2, rng)
    assert len(active) == 20
    assert list(active) == sorted(set(active))
    assert set(active) <= set(range(100))


def test_sample_active_caps_at_eligible_and_at_least_one():
    rng = np.random.default_rng(0)
    assert sample_active([3, 7], 100, 0.2, rng) == (3, 7)
    assert len(sample_active(range(10), 10, 0.01, rng)) == 1


def test_sample_active_is_deterministic_and_validated():
    a = sample_active(range(50), 50, 0.3, np.random.default_rng(4))
    b = sample_active(range(50), 50, 0.3, np.random.default_rng(4))
    assert a == b
    with pytest.raises(ValueError):
        sample_active(range(5), 5, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_active([], 5, 0.5, np.random.default_rng(0))


# -- aggregation -----------------------------------------------------------

finite_vectors = arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6))


@given(finite_vectors, st.integers(1, 12))
def test_average_of_identical_vectors_is_bit_identical(v, k):
    assert aggregate_uniform([v] * k).tobytes() == v.tobytes()


def test_average_hand_values():
    out = aggregate_uniform([np.array([1.0, 2.0, -4.0]), np.array([3.0, 5.0, 4.0])])
    assert out.tolist() == [2.0, 3.5, 0.0]
    out = aggregate_uniform({0: np.array([0.5]), 1: np.array([1.0]), 2: np.array([3.0])})
    assert out.tolist() == [1.5]


@settings(max_examples=50)
@given(st.lists(arrays(np.float64, 4, elements=st.floats(-1e6, 1e6)), min_size=2, max_size=8), st.randoms())
def test_average_ignores_presentation_order(vectors, rnd):
    ids = list(range(len(vectors)))
    shuffled = ids[:]
    rnd.shuffle(shuffled)
    a = aggregate_uniform({i: vectors[i] for i in ids})
    b = aggregate_uniform({i: vectors[i] for i in shuffled})
    assert a.tobytes() == b.tobytes()


def test_average_rejects_bad_input():
    with pytest.raises(ValueError):
        aggregate_uniform([])
    with pytest.raises(ValueError):
        aggregate_uniform([np.zeros(2), np.zeros(3)])


def test_logit_ensemble_is_mean_of_forwards():
    spec_a, spec_b = ModelSpec(3, (4,), 2), ModelSpec(3, (4,), 2, 0.5)
    pa, pb = init_model(spec_a, 0), init_model(spec_b, 1)
    x = np.random.default_rng(0).normal(size=(6, 3))
    expected = (forward(spec_a, pa, x) + forward(spec_b, pb, x)) / 2
    np.testing.assert_allclose(logit_ensemble([(spec_a, pa), (spec_b, pb)], x), expected, atol=1e-14)
    assert logit_ensemble([(spec_a, pa)], x).tobytes() == forward(spec_a, pa, x).tobytes()
    with pytest.raises(ValueError):
        logit_ensemble([(spec_a, pa), (ModelSpec(3, (4,), 3), init_model(ModelSpec(3, (4,), 3), 0))], x)


# -- local updates ---------------------------------------------------------


def test_local_sgd_leaves_start_untouched_and_is_deterministic():
    spec = ModelSpec(3, (6,), 2)
    start = init_model(spec, 0)
    copy = start.copy()
    ds = toy_dataset()
    a = local_sgd(spec, start, ds, 5, 8, 0.1, 1e-4, np.random.default_rng(1))
    b = local_sgd(spec, start, ds, 5, 8, 0.1, 1e-4, np.random.default_rng(1))
    assert np.array_equal(start, copy)
    assert a.params.tobytes() == b.params.tobytes()
    assert not np.array_equal(a.params, start)


def test_local_sgd_learns_separable_data():
    spec = ModelSpec(3, (6,), 2)
    ds = toy_dataset()
    res = local_sgd(spec, init_model(spec, 0), ds, 300, 8, 0.1, 0.0, np.random.default_rng(2))
    acc = np.mean(forward(spec, res.params, ds.inputs).argmax(1) == ds.labels)
    assert acc > 0.9


def test_local_sgd_validates():
    spec = ModelSpec(3, (6,), 2)
    with pytest.raises(ValueError):
        local_sgd(spec, init_model(spec, 0), toy_dataset(), 0, 8, 0.1, 0.0, np.random.default_rng(0))
    empty = Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int), 2)
    with pytest.raises(ValueError):
        local_sgd(spec, init_model(spec, 0), empty, 1, 8, 0.1, 0.0, np.random.default_rng(0))


def test_local_kd_with_zero_weight_is_a_no_op():
    spec_l, spec_s = ModelSpec(3, (6,), 2), ModelSpec(3, (6,), 2, 0.5)
    start = init_model(spec_l, 0)
    x = np.random.default_rng(0).normal(size=(10, 3))
    res = local_kd(spec_l, start, (spec_s, init_model(spec_s, 1)), x, 5, 4, 0.1, 1e-4, 0.0,
                   DistillConfig(), np.random.default_rng(0))
    assert res.params.tobytes() == start.tobytes()
    assert res.params is not start


def test_local_kd_from_identical_teacher_does_not_move():
    spec = ModelSpec(3, (6,), 2)
    params = init_model(spec, 3)
    x = np.random.default_rng(0).normal(size=(10, 3))
    res = local_kd(spec, params, (spec, params.copy()), x, 5, 4, 0.5, 0.0, 1.0,
                   DistillConfig(), np.random.default_rng(0))
    assert res.params.tobytes() == params.tobytes()
    assert res.loss == 0.0


def test_local_kd_pulls_student_towards_teacher():
    spec_l, spec_s = ModelSpec(3, (8,), 3), ModelSpec(3, (8,), 3, 0.5)
    teacher = init_model(spec_s, 1) * 3.0
    teacher_copy = teacher.copy()
    x = np.random.default_rng(0).normal(size=(64, 3))
    res = local_kd(spec_l, init_model(spec_l, 0), (spec_s, teacher), x, 400, 16, 0.2, 0.0, 1.0,
                   DistillConfig(temperature=1.0), np.random.default_rng(0))
    agree = np.mean(forward(spec_l, res.params, x).argmax(1) == forward(spec_s, teacher, x).argmax(1))
    assert agree > 0.9
    assert np.array_equal(teacher, teacher_copy)


def test_local_kd_rejects_class_mismatch():
    with pytest.raises(ValueError):
        local_kd(ModelSpec(3, (4,), 2), np.zeros(param_count(ModelSpec(3, (4,), 2))),
                 (ModelSpec(3, (4,), 3), np.zeros(param_count(ModelSpec(3, (4,), 3)))),
                 np.zeros((2, 3)), 1, 2, 0.1, 0.0, 1.0, DistillConfig(), np.random.default_rng(0))


# -- rounds ----------------------------------------------------------------


def round_setup(**overrides):
    cfg = tiny(**overrides)
    world = build_world(cfg, 0)
    sim = Simulation(cfg, world, "proposed")
    return cfg, sim, sim.plan(0), sim.hyper(0)


def test_auxiliary_round_updates_only_aux_and_counts_traffic():
    cfg, sim, plan, hp = round_setup()
    server = sim.server
    stats = RoundStats()
    new = auxiliary_round(server, sim.clients, plan, hp, stats)
    ws = param_count(cfg.aux_spec)
    k = len(plan.active_set)
    assert new.target_params is server.target_params
    assert not np.array_equal(new.aux_params, server.aux_params)
    assert (new.cum_upload, new.cum_download) == (k * ws, k * ws)
    assert (stats.upload, stats.download) == (k * ws, k * ws)
    assert all(stats.steps[c] == cfg.tau for c in plan.active_set)


def test_target_round_counts_traffic_and_leaves_teacher_alone():
    cfg, sim, plan, hp = round_setup(strong_fraction=1.0)
    server = sim.server
    aux_bytes = server.aux_params.tobytes()
    new = target_round(server, sim.clients, plan, hp)
    ws, wl = param_count(cfg.aux_spec), param_count(cfg.target_spec)
    k = len(plan.active_strong)
    assert k > 0
    assert new.aux_params.tobytes() == aux_bytes
    assert (new.cum_upload, new.cum_download) == (k * wl, k * (ws + wl))


def test_target_round_without_strong_clients_is_skipped():
    cfg, sim, plan, hp = round_setup()
    empty = RoundPlan(plan.round_index, plan.active_set, ())
    assert target_round(sim.server, sim.clients, empty, hp) is sim.server


def test_step_parity_between_methods():
    cfg = tiny(strong_fraction=0.5)
    world = build_world(cfg, 0)
    prop = Simulation(cfg, world, "proposed")
    weak = Simulation(cfg, world, "fedavg_weak_only")
    strong = Simulation(cfg, world, "fedavg_strong_only")
    s_prop, s_weak, s_strong = prop.step(), weak.step(), strong.step()
    plan = prop.plans[0]
    for cid in plan.active_set:
        has_unlabeled = len(world.clients[cid].data.unlabeled) > 0
        target_steps = 2 * cfg.tau if has_unlabeled else cfg.tau
        expected = cfg.tau + (target_steps if cid in plan.active_strong else 0)
        assert s_prop.steps[cid] == expected
        assert s_weak.steps[cid] == 2 * cfg.tau
    assert all(s_strong.steps[c] == 2 * cfg.tau for c in plan.active_strong)


# -- whole runs ------------------------------------------------------------


@pytest.mark.parametrize("method", METHODS)
def test_every_method_runs(method):
    cfg = pooled(methods=[method])
    res = run_method(cfg, build_world(cfg, 0), method)
    assert [r.round for r in res.records] == [1, 2, 3]
    assert 0.0 <= res.final.target_test_accuracy <= 1.0
    ups = [r.cum_comm_upload for r in res.records]
    assert ups == sorted(ups) and ups[-1] > 0


@pytest.mark.parametrize("method", METHODS)
def test_engine_counters_match_comm_formulas(method):
    cfg = pooled()
    world = build_world(cfg, 1)
    res = run_method(cfg, world, method)
    entries = comm_entries(cfg, world, res)
    assert [(e.upload, e.download) for e in entries] == res.comm_log
    assert sum(e.upload for e in entries) == res.server.cum_upload
    assert sum(e.download for e in entries) == res.server.cum_download


@pytest.mark.parametrize("method", ["proposed", "feddf", "dsfl", "fedmd"])
def test_runs_are_deterministic_and_parallel_matches_serial(method):
    cfg = pooled(n_clients=12)
    world = build_world(cfg, 2)
    a = run_method(cfg, world, method, workers=1)
    b = run_method(cfg, build_world(cfg, 2), method, workers=1)
    c = run_method(cfg, world, method, workers=4)
    for other in (b, c):
        assert [r.as_dict() for r in other.records] == [r.as_dict() for r in a.records]
        assert other.server.target_params.tobytes() == a.server.target_params.tobytes()
        assert other.server.aux_params.tobytes() == a.server.aux_params.tobytes()
        assert sorted(other.local_models) == sorted(a.local_models)
        for cid in a.local_models:
            assert other.local_models[cid].tobytes() == a.local_models[cid].tobytes()


def test_degenerate_proposed_equals_strong_only():
    k = 3
    common = dict(strong_fraction=1.0, lambda_max=0.0, aux_rounds=False, train_seed=77, rounds=4)
    prop_cfg = tiny(tau=2 * k, **common)
    strong_cfg = tiny(tau=k, **common)
    prop = run_method(prop_cfg, build_world(prop_cfg, 5), "proposed")
    strong = run_method(strong_cfg, build_world(strong_cfg, 5), "fedavg_strong_only")
    assert prop.server.target_params.tobytes() == strong.server.target_params.tobytes()


def test_method_train_seeds():
    cfg = tiny()
    world = build_world(cfg, 0)
    seeds = {m: method_train_seed(cfg, world.seeds, m) for m in METHODS}
    assert len(set(seeds.values())) == len(METHODS)
    pinned = tiny(train_seed=5)
    assert {method_train_seed(pinned, build_world(pinned, 0).seeds, m) for m in METHODS} == {5}


def test_methods_share_activation_draws():
    cfg = tiny()
    world = build_world(cfg, 0)
    plans = {m: Simulation(cfg, world, m).plan(3) for m in ("proposed", "fedavg_weak_only")}
    assert plans["proposed"] == plans["fedavg_weak_only"]


def test_strong_sets_are_nested_across_ratios():
    sets = []
    for frac in (0.1, 0.2, 0.4):
        cfg = tiny(n_clients=20, strong_fraction=frac)
        sets.append(set(build_world(cfg, 3).strong_ids))
    assert [len(s) for s in sets] == [2, 4, 8]
    assert sets[0] <= sets[1] <= sets[2]


def test_public_pool_is_carved_out_of_client_data():
    cfg = pooled()
    world = build_world(cfg, 0)
    owned = np.concatenate(world.partition.assignments)
    assert not set(owned) & set(world.public_indices)
    assert len(owned) + len(world.public_indices) == len(world.train)


def test_pool_methods_require_pool():
    cfg = tiny()
    world = build_world(cfg, 0)
    with pytest.raises(ValueError):
        Simulation(cfg, world, "dsfl")
    unlabeled = tiny(public_pool_size=10)
    with pytest.raises(ValueError):
        Simulation(unlabeled, build_world(unlabeled, 0), "fedmd")


def test_empirical_losses_cover_strong_clients():
    cfg = tiny()
    world = build_world(cfg, 0)
    res = run_method(cfg, world, "proposed")
    losses = empirical_losses(cfg, world, res)
    assert sorted(losses) == world.strong_ids
    for cid, row in losses.items():
        data = world.clients[cid].data
        assert row["n_labeled"] == len(data.labeled)
        assert row["n_unlabeled"] == len(data.unlabeled)
        if row["n_labeled"] + row["n_unlabeled"]:
            assert row["loss"] >= 0.0


def test_server_state_is_not_mutated_by_rounds():
    cfg, sim, plan, hp = round_setup(strong_fraction=1.0)
    before = ServerState(sim.server.aux_params.copy(), sim.server.target_params.copy())
    auxiliary_round(sim.server, sim.clients, plan, hp)
    target_round(sim.server, sim.clients, plan, RoundHyper(**{**hp.__dict__, "workers": 3}))
    assert sim.server.aux_params.tobytes() == before.aux_params.tobytes()
    assert sim.server.target_params.tobytes() == before.target_params.tobytes()
