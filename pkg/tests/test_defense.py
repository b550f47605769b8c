import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from pydantic import ValidationError

from stealbench.defense import (
    BASELINE_KINDS,
    DefenseConfig,
    ProtectedModel,
    QueryLedger,
    baseline_noise,
    finalize_probs,
    perturb,
    protected_query,
    restore_ranking,
)
from stealbench.engine import Network
from stealbench.errors import BudgetExhausted, ConfigError

CONCAVE_AT_06 = 2.0544332106438877430
RS_VECTOR = (0.5485366310897346872, 0.2706130379977013565, 0.1808503309125639564)

probs = arrays(np.float64, (4, 5), elements=st.floats(0.001, 1.0)).map(lambda a: a / a.sum(axis=1, keepdims=True))


def test_config_validation():
    with pytest.raises(ValidationError):
        DefenseConfig(kind="reverse_sigmoid", beta=0.0)
    with pytest.raises(ValidationError):
        DefenseConfig(kind="nonsense", beta=0.1)
    with pytest.raises(ValidationError):
        DefenseConfig(kind="reverse_sigmoid", beta=0.1, clip_eps=0.1)
    with pytest.raises(ValidationError):
        DefenseConfig(kind="reverse_sigmoid", beta=0.1, extra=1)
    assert DefenseConfig().is_identity


def test_baseline_noise_examples():
    rng = np.random.default_rng(0)
    assert baseline_noise(0.0, "sine", 0.7, f_freq=3.0) == 0.0
    assert baseline_noise(np.zeros(5), "uniform_x_convex", 0.7, rho_width=0.3, rng=rng) == pytest.approx(np.zeros(5))
    # the concave multiplier is exp(+(y/rho)^2 / 2); a uniform draw of 1 exposes it
    class One:
        def uniform(self, lo, hi, size=None):
            return np.ones(size)
    assert baseline_noise(0.6, "uniform_x_concave", 1.0, rho_width=0.5, rng=One()) == pytest.approx(
        CONCAVE_AT_06, abs=1e-12)
    with pytest.raises(ConfigError):
        baseline_noise(0.5, "gaussian", 0.1, rng=rng)
    with pytest.raises(ConfigError):
        baseline_noise(0.5, "uniform_random", 0.1)


@pytest.mark.parametrize("kind", ["uniform_random", "uniform_x_concave", "uniform_x_convex"])
def test_baseline_noise_bounded(kind):
    rng = np.random.default_rng(1)
    y = np.linspace(0, 1, 11)
    n = baseline_noise(y, kind, 0.3, rho_width=0.5, rng=rng)
    mult = {"uniform_random": 1.0, "uniform_x_concave": np.exp(0.5 * (y / 0.5) ** 2),
            "uniform_x_convex": np.abs(1 - np.exp(0.5 * (y / 0.5) ** 2))}[kind]
    assert np.all(np.abs(n) <= 0.3 * mult + 1e-12)


def test_vector_example():
    out = perturb(np.array([[0.7, 0.2, 0.1]]), DefenseConfig(kind="reverse_sigmoid", beta=0.2, gamma=4))
    assert np.allclose(out[0], RS_VECTOR, atol=1e-12)


@pytest.mark.parametrize("kind", ["reverse_sigmoid", "sine"])
def test_uniform_input_is_fixed_point(kind):
    y = np.full((1, 5), 0.2)
    assert np.allclose(perturb(y, DefenseConfig(kind=kind, beta=0.4, gamma=3.0)), y)


@given(probs, st.sampled_from(("reverse_sigmoid",) + BASELINE_KINDS), st.floats(0.05, 1.0))
def test_perturbed_outputs_are_distributions(y, kind, beta):
    cfg = DefenseConfig(kind=kind, beta=beta, gamma=8.0)
    out = perturb(y, cfg, inputs=np.arange(len(y) * 3, dtype=float).reshape(len(y), 3))
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=1), 1.0)


@given(probs, st.floats(0.05, 1.0), st.floats(0.5, 64))
def test_rank_clamp_preserves_order(y, beta, gamma):
    out = perturb(y, DefenseConfig(kind="reverse_sigmoid", beta=beta, gamma=gamma, rank_clamp=True))
    order = np.argsort(-y, axis=1, kind="stable")
    ranked_y = np.take_along_axis(y, order, 1)
    ranked_out = np.take_along_axis(out, order, 1)
    assert np.all(ranked_out[:, :-1] >= ranked_out[:, 1:])
    # strict wherever y is strict by more than float resolution
    strict = ranked_y[:, :-1] - ranked_y[:, 1:] > 1e-6
    assert np.all(ranked_out[:, :-1][strict] > ranked_out[:, 1:][strict])


def test_ranking_preserving_uniform_keeps_argmax():
    y = np.random.default_rng(3).dirichlet(np.ones(6), size=50)
    x = np.random.default_rng(4).uniform(size=(50, 2))
    out = perturb(y, DefenseConfig(kind="ranking_preserving_uniform", beta=0.5), x)
    assert np.array_equal(out.argmax(axis=1), y.argmax(axis=1))


def test_rank_clamp_breaks_ties_in_favor_of_the_original_order():
    y = np.array([[0.125, 0.5, 0.125, 0.125, 0.125]])
    out = perturb(y, DefenseConfig(kind="reverse_sigmoid", beta=1.0, gamma=2.0, rank_clamp=True))
    assert out.argmax() == 1


def test_restore_ranking():
    y = np.array([[0.1, 0.6, 0.3]])
    assert np.allclose(restore_ranking(y, np.array([[0.5, 0.2, 0.3]])), [[0.2, 0.5, 0.3]])


def test_finalize_clips_and_normalizes():
    out = finalize_probs(np.array([0.5, 0.5]), np.array([-1.0, 1.0]), clip_eps=1e-7)
    assert out[0] == pytest.approx(1e-7 / (1 + 1e-7))
    assert out.sum() == pytest.approx(1.0)


def test_stochastic_noise_is_keyed_by_input():
    cfg = DefenseConfig(kind="uniform_random", beta=0.3, noise_seed=5)
    y = np.tile([[0.5, 0.3, 0.2]], (3, 1))
    x = np.array([[0.0], [1.0], [0.0]])
    out = perturb(y, cfg, x)
    assert np.array_equal(out[0], out[2])
    assert not np.array_equal(out[0], out[1])
    assert np.array_equal(perturb(y, cfg, x), out)
    other = perturb(y, cfg.model_copy(update={"noise_seed": 6}), x)
    assert not np.array_equal(other, out)
    with pytest.raises(ConfigError):
        perturb(y, cfg)


def test_identity_defense_matches_base():
    net = Network.dense(3, [4], 3, seed=0)
    x = np.random.default_rng(0).uniform(size=(5, 3))
    assert np.array_equal(ProtectedModel(net, DefenseConfig()).forward(x), net.forward(x))


def test_budget_exhaustion_leaves_ledger_unchanged():
    net = Network.dense(3, [4], 3, seed=0)
    ledger = QueryLedger(10)
    with pytest.raises(BudgetExhausted):
        protected_query(net, DefenseConfig(), np.zeros((11, 3)), ledger)
    assert ledger.used == 0
    protected_query(net, DefenseConfig(), np.zeros((10, 3)), ledger, "sample")
    assert ledger.remaining == 0
    assert ledger.to_dict() == {"budget": 10, "used": 10, "tallies": {"sample": 10}}
