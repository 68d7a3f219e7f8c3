import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vbpimix import trainer as trainer_mod
from vbpimix.errors import ContractError, NonFiniteGradientError
from vbpimix.io import load_checkpoint
from vbpimix.objective import ComponentGrad
from vbpimix.simulate import perturbed_trees, simulate_dataset
from vbpimix.toy import HierApprox, exact_miselbo, make_target, train_toy
from vbpimix.trainer import (
    RunLog,
    LogRecord,
    TrainConfig,
    adam_update,
    anneal,
    component_rngs,
    exact_bound_gain,
    initial_state,
    learning_rates,
    new_model,
    read_config,
    train,
    train_step,
)


@pytest.fixture(scope="module")
def data():
    t, _, aln = simulate_dataset(6, 60, seed=2)
    trees = perturbed_trees(t, 12, np.random.default_rng(0))
    return aln, trees


def params_of(model):
    return [np.concatenate([c.sbn.logits, c.branch.params.flat()]) for c in model.components]


def assert_same(m1, m2):
    for a, b in zip(params_of(m1), params_of(m2)):
        np.testing.assert_array_equal(a, b)


def test_anneal_examples():
    cfg = TrainConfig()
    assert anneal(0, cfg) == 0.001
    assert anneal(cfg.annealing_horizon // 2, cfg) == pytest.approx(0.5005)
    assert anneal(cfg.annealing_horizon, cfg) == 1.0
    assert anneal(10 * cfg.annealing_horizon, cfg) == 1.0
    with pytest.raises(ContractError):
        anneal(-1, cfg)


@given(st.floats(1e-4, 1.0), st.integers(1, 10_000))
def test_anneal_non_decreasing_and_reaches_one(init, horizon):
    cfg = TrainConfig(annealing_init=init, annealing_horizon=horizon)
    its = np.linspace(0, 2 * horizon, 50).astype(int)
    betas = [anneal(int(i), cfg) for i in its]
    assert all(a <= b for a, b in zip(betas, betas[1:]))
    assert betas[-1] == 1.0 and 0 < betas[0] <= 1


@pytest.mark.parametrize("kw", [dict(K=1), dict(lr_sbn=0.0), dict(lr_branch=-1e-3), dict(annealing_init=0.0),
                                dict(annealing_init=1.5), dict(S=0), dict(threads=0)])
def test_config_validation(kw):
    with pytest.raises(ContractError):
        TrainConfig(**kw)


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.K, cfg.iterations, cfg.annealing_init, cfg.annealing_horizon) == (10, 400_000, 0.001, 100_000)
    assert cfg.lr_sbn == cfg.lr_branch == 1e-3
    assert cfg.prior.branch_rate == 10.0


def test_config_file_round_trip(tmp_path):
    cfg = TrainConfig(S=3, K=5, lr_sbn=0.01, use_psp=False, seed=9)
    p = tmp_path / "c.cfg"
    p.write_text("# comment\n" + cfg.to_text())
    assert TrainConfig.from_file(p) == cfg
    p.write_text("S = 2\nbogus = 1\n")
    with pytest.raises(ContractError):
        TrainConfig.from_file(p)
    p.write_text("S 2\n")
    with pytest.raises(ContractError):
        read_config(p)


def test_learning_rate_decay():
    cfg = TrainConfig(lr_sbn=0.1, lr_branch=0.2, lr_decay=0.5, lr_decay_every=10)
    assert learning_rates(9, cfg) == (0.1, 0.2)
    assert learning_rates(25, cfg) == pytest.approx((0.025, 0.05))
    assert learning_rates(25, TrainConfig()) == (1e-3, 1e-3)


def test_zero_step_leaves_parameters_unchanged(rng):
    x = rng.normal(size=7)
    m, v = np.zeros(7), np.zeros(7)
    np.testing.assert_array_equal(adam_update(x, rng.normal(size=7), m, v, 0.0, 1), x)


def test_adam_first_step_is_sign_step():
    x = np.zeros(3)
    g = np.array([2.0, -0.5, 1e-3])
    out = adam_update(x, g, np.zeros(3), np.zeros(3), 0.1, 1)
    np.testing.assert_allclose(out, 0.1 * np.sign(g), rtol=1e-4)


def test_component_streams_are_independent_of_order():
    a = component_rngs(3, 7, 3)
    b = component_rngs(3, 7, 3)
    assert [r.random() for r in a] == [r.random() for r in b]
    assert len({r.random() for r in component_rngs(3, 7, 3)}) == 3


def test_train_step_is_deterministic(data):
    aln, trees = data
    cfg = TrainConfig(S=2, K=4, iterations=5, seed=4)
    m0 = new_model(trees, cfg)
    s1, s2 = initial_state(m0, cfg), initial_state(m0, cfg)
    m1, r1 = train_step(m0, aln, cfg, s1)
    m2, r2 = train_step(m0, aln, cfg, s2)
    assert_same(m1, m2)
    assert r1.miselbo == r2.miselbo and r1.iteration == 1 and s1.iteration == 1
    assert any(not np.array_equal(a, b) for a, b in zip(params_of(m0), params_of(m1)))


def test_zero_iterations(data, tmp_path):
    aln, trees = data
    cfg = TrainConfig(S=1, K=3, iterations=0)
    m0 = new_model(trees, cfg)
    ck = tmp_path / "m.ckpt"
    m1, log, state = train(m0, aln, cfg, checkpoint_path=str(ck))
    assert m1 is m0 and len(log) == 0 and state.iteration == 0
    assert log.to_csv(1) == "iteration,miselbo,beta,elbo_0\n"
    assert_same(load_checkpoint(ck), m0)


def test_three_iterations_three_checkpoints(data, tmp_path):
    aln, trees = data
    cfg = TrainConfig(S=2, K=3, iterations=3, checkpoint_every=1, eval_every=1, annealing_horizon=10)
    pattern = str(tmp_path / "ck_{iteration}.txt")
    _, log, state = train(new_model(trees, cfg), aln, cfg, checkpoint_path=pattern)
    assert len(log) == 3 and log.checkpoints == [1, 2, 3]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ck_1.txt", "ck_2.txt", "ck_3.txt"]
    rows = log.to_csv(2).splitlines()
    assert rows[0] == "iteration,miselbo,beta,elbo_0,elbo_1" and len(rows) == 4
    assert [r.iteration for r in log.records] == [1, 2, 3]
    assert [r.beta for r in log.records] == [anneal(i, cfg) for i in range(3)]
    for r in log.records:
        assert r.miselbo == pytest.approx(np.mean(r.elbos))


def test_resume_matches_uninterrupted_run(data, tmp_path):
    aln, trees = data
    cfg = TrainConfig(S=2, K=4, iterations=8, seed=5, eval_every=1, annealing_horizon=20, lr_sbn=0.01, lr_branch=0.01)
    full, full_log, _ = train(new_model(trees, cfg), aln, cfg)
    half = TrainConfig(**{**cfg.__dict__, "iterations": 5})
    ck = tmp_path / "half.ckpt"
    train(new_model(trees, cfg), aln, half, checkpoint_path=str(ck))
    model, state = load_checkpoint(ck, aln.taxa, with_state=True)
    assert state.iteration == 5
    resumed, log, _ = train(model, aln, cfg, state=state)
    assert_same(resumed, full)
    assert [r.miselbo for r in log.records] == [r.miselbo for r in full_log.records[5:]]


def test_threads_do_not_change_results(data):
    aln, trees = data
    cfg = TrainConfig(S=2, K=4, iterations=4, seed=1)
    a, _, _ = train(new_model(trees, cfg), aln, cfg)
    b, _, _ = train(new_model(trees, cfg), aln, TrainConfig(**{**cfg.__dict__, "threads": 3}))
    assert_same(a, b)


def test_component_count_must_match(data):
    aln, trees = data
    with pytest.raises(ContractError):
        train(new_model(trees, TrainConfig(S=2)), aln, TrainConfig(S=3))


def test_non_finite_gradient_aborts_with_diagnostics(data, monkeypatch):
    aln, trees = data
    cfg = TrainConfig(S=1, K=3, iterations=2)
    model = new_model(trees, cfg)

    real = trainer_mod.vimco_grads
    monkeypatch.setattr(trainer_mod, "vimco_grads", lambda m, b, be, p: [
        ComponentGrad(np.where(np.arange(g.sbn.size) == 0, np.nan, g.sbn), g.branch) for g in real(m, b, be, p)])
    with pytest.raises(NonFiniteGradientError, match="component 0"):
        train(model, aln, cfg)


def test_run_log_must_increase():
    log = RunLog()
    log.append(LogRecord(2, 0.0, np.zeros(1), 1.0, 0.0))
    with pytest.raises(ContractError):
        log.append(LogRecord(2, 0.0, np.zeros(1), 1.0, 0.0))
    assert "elapsed" in log.to_csv(1, timing=True).splitlines()[0]


def test_bound_gain_fraction():
    assert exact_bound_gain([1, 2, 3, 2, 4]) == 0.75
    assert np.isnan(exact_bound_gain([1.0]))


def test_toy_pipeline_increases_exact_bound():
    target = make_target(3, 4, seed=1)
    S, K = 2, 3
    approx = HierApprox.uniform(S, 3, 4)
    values = [exact_miselbo(approx, target, K)]
    for interval in range(10):
        approx = train_toy(target, S, K=K, iters=100, lr=0.02, seed=[7, interval], init=approx).approx
        values.append(exact_miselbo(approx, target, K))
    assert exact_bound_gain(values) >= 0.95
