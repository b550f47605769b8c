import numpy as np
import pytest
from pydantic import ValidationError

from stealbench.attack import (
    AttackConfig,
    generate_queries,
    jacobian_augment_round,
    run_stealing_attack,
)
from stealbench.data import split_base_attacker, synth_blobs
from stealbench.defense import DefenseConfig
from stealbench.engine import AugmentPolicy, Network, OptimizerState, train
from stealbench.errors import ConfigError


@pytest.fixture(scope="module")
def setup():
    ds = synth_blobs(4, 6, 200, spread=0.04, seed=0)
    split = split_base_attacker(ds, 0.4, seed=0, test_frac=0.2)
    tr = split.base_train
    base, _ = train(Network.dense(6, [16], 4, seed=0), tr.inputs, np.eye(4)[tr.labels], 600, 32,
                    opt=OptimizerState("rmsprop", 0.01))
    return base, split


def _cfg(**kw):
    return AttackConfig(**{"budget": 240, "steps": 300, "batch_size": 32, "checkpoints": [60, 120, 240],
                           "max_shift": 0, "optimizer": "rmsprop", "learning_rate": 0.01, **kw})


def test_config_resolves_label_mode():
    assert AttackConfig(strategy="argmax_sample").label_mode == "argmax_onehot"
    assert AttackConfig().label_mode == "probabilities"
    assert AttackConfig().name == "sample"
    assert AttackConfig.model_validate({"lambda": 0.3}).lambda_ == 0.3


@pytest.mark.parametrize("kw", [
    {"strategy": "argmax_sample", "label_mode": "probabilities"},
    {"strategy": "jacobian_augmentation", "rho_epochs": 0},
    {"strategy": "argmax_sample", "inversion": "mlp"},
    {"budget": 10, "batch_size": 64},
    {"strategy": "boosting"},
])
def test_config_rejects_inconsistent(kw):
    with pytest.raises(ValidationError):
        AttackConfig(**kw)


def test_random_queries_are_uniform():
    q = generate_queries("random", None, 10000, np.random.default_rng(0), input_shape=(3,))
    assert np.all(np.abs(q.mean(axis=0) - 0.5) < 0.02)
    assert q.min() >= 0 and q.max() <= 1


def test_sample_queries():
    pool = np.full((1, 4, 4, 1), 0.3)
    q = generate_queries("sample", pool, 5, np.random.default_rng(0), AugmentPolicy())
    assert np.all(q == 0.3)
    pool = np.random.default_rng(1).uniform(size=(10, 2))
    a = generate_queries("sample", pool, 8, np.random.default_rng(5))
    b = generate_queries("sample", pool, 8, np.random.default_rng(5))
    assert np.array_equal(a, b)
    with pytest.raises(ConfigError):
        generate_queries("sample", np.zeros((0, 2)), 3, np.random.default_rng(0))


def test_jacobian_round_zero_gradient_is_identity():
    net = Network.dense(3, [4], 2)
    for _, _, a in net.parameters():
        a[...] = 0
    pool = np.random.default_rng(0).uniform(size=(5, 3))
    out = jacobian_augment_round(net, pool, np.zeros(5, int), 0.1)
    assert out.shape == (10, 3)
    assert np.array_equal(out[5:], pool)


def test_jacobian_round_steps_by_lambda():
    net = Network.dense(3, [4], 2, seed=1)
    pool = np.full((4, 3), 0.5)
    out = jacobian_augment_round(net, pool, np.ones(4, int), 0.1)
    assert np.allclose(np.abs(out[4:] - pool)[np.abs(out[4:] - pool) > 0], 0.1)


def test_undefended_sample_attack_converges(setup):
    base, split = setup
    res = run_stealing_attack(base, DefenseConfig(), _cfg(), split.test, split.attacker_pool,
                              rng=np.random.default_rng(0))
    queries = [p.queries for p in res.curve]
    assert queries == sorted(queries) and queries[-1] <= 240
    assert res.final.agreement >= 0.9
    assert res.ledger.used == res.curve[-1].queries


def test_attack_is_deterministic(setup):
    base, split = setup
    runs = [run_stealing_attack(base, DefenseConfig(), _cfg(), split.test, split.attacker_pool,
                                rng=np.random.default_rng(3)) for _ in range(2)]
    assert runs[0].stolen.weights_equal(runs[1].stolen)
    assert [p.report for p in runs[0].curve] == [p.report for p in runs[1].curve]


def test_budget_never_exceeded(setup):
    base, split = setup
    for strategy in ("random", "argmax_sample", "jacobian_augmentation"):
        cfg = _cfg(strategy=strategy, n_seed_samples=20, rho_epochs=2)
        res = run_stealing_attack(base, DefenseConfig(), cfg, split.test, split.attacker_pool,
                                  rng=np.random.default_rng(0))
        assert res.ledger.used <= cfg.budget


def test_jacobian_rounds_recorded(setup):
    base, split = setup
    cfg = _cfg(strategy="jacobian_augmentation", n_seed_samples=30, rho_epochs=2, budget=200)
    res = run_stealing_attack(base, DefenseConfig(), cfg, split.test, split.attacker_pool,
                              rng=np.random.default_rng(0))
    rounds = res.info["rounds"]
    assert [r["new_samples"] for r in rounds] == [30, 60, 80]
    assert all(0.0 <= r["label_changed_frac"] <= 1.0 for r in rounds)
    assert res.ledger.used == 200


def test_same_layer_attack_uses_reverse_sigmoid_head(setup):
    base, split = setup
    d = DefenseConfig(kind="reverse_sigmoid", beta=0.5, gamma=4.0)
    res = run_stealing_attack(base, d, _cfg(stolen_output_mode="softmax_then_reverse_sigmoid"),
                              split.test, split.attacker_pool, rng=np.random.default_rng(0))
    assert res.stolen.output_mode.kind == "softmax_then_reverse_sigmoid"
    assert res.stolen.output_mode.beta == 0.5


def test_inversion_attack_needs_model(setup):
    base, split = setup
    with pytest.raises(ConfigError):
        run_stealing_attack(base, DefenseConfig(), _cfg(inversion="linear"), split.test, split.attacker_pool)


def test_duplicate_queries_are_not_charged(setup):
    base, split = setup
    pool = split.attacker_pool[:50]
    res = run_stealing_attack(base, DefenseConfig(), _cfg(), split.test, pool, rng=np.random.default_rng(0))
    assert res.ledger.used == 50
    assert res.info["pool_exhausted"]
