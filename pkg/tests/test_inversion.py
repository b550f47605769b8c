import numpy as np
import pytest

from stealbench.defense import DefenseConfig, perturb
from stealbench.inversion import apply_inversion, fit_inversion_linear, fit_inversion_mlp, identity_inversion
from stealbench.metrics import kl_avg


def _pairs(defense, n=3000, k=5, seed=0):
    logits = np.random.default_rng(seed).normal(scale=3.0, size=(n, k))
    y = np.exp(logits - logits.max(axis=1, keepdims=True))
    y /= y.sum(axis=1, keepdims=True)
    return perturb(y, defense), y


def test_identity_pairs_give_identity_map():
    _, y = _pairs(DefenseConfig())
    model = fit_inversion_linear(y, y)
    assert model.ridge_used
    assert model.r2 >= 0.999
    assert np.allclose(apply_inversion(model, y), y, atol=1e-6)


def test_identity_model_returns_input():
    y = np.array([[0.2, 0.3, 0.5]])
    assert np.allclose(apply_inversion(identity_inversion(3), y), y)
    assert np.allclose(apply_inversion(identity_inversion(3), y[0]), y[0])


def test_gamma_one_is_nearly_affine():
    p, y = _pairs(DefenseConfig(kind="reverse_sigmoid", beta=0.5, gamma=1.0))
    affine = fit_inversion_linear(p, y)
    q, y2 = _pairs(DefenseConfig(kind="reverse_sigmoid", beta=0.8, gamma=8.0))
    hard = fit_inversion_linear(q, y2)
    assert affine.val_kl <= 0.05
    assert hard.val_kl > affine.val_kl


def test_linear_needs_enough_pairs():
    with pytest.raises(ValueError):
        fit_inversion_linear(np.full((3, 5), 0.2), np.full((3, 5), 0.2))
    with pytest.raises(ValueError):
        fit_inversion_linear(np.zeros((10, 3)), np.zeros((10, 4)))


def test_mlp_learns_identity():
    _, y = _pairs(DefenseConfig(), n=2000)
    model = fit_inversion_mlp(y, y, steps=1500, seed=0)
    assert model.val_kl <= 0.01


def test_mlp_partially_inverts_reverse_sigmoid():
    p, y = _pairs(DefenseConfig(kind="reverse_sigmoid", beta=0.8, gamma=8.0), n=3000)
    model = fit_inversion_mlp(p[:2500], y[:2500], steps=1500, seed=1)
    recovered = kl_avg(apply_inversion(model, p[2500:]), y[2500:])
    assert 0 < recovered < kl_avg(p[2500:], y[2500:])


def test_mlp_needs_enough_pairs():
    with pytest.raises(ValueError):
        fit_inversion_mlp(np.full((10, 3), 1 / 3), np.full((10, 3), 1 / 3))
