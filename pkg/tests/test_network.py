import numpy as np
import pytest

from stealbench.engine import Dense, Network, OutputMode, ReLU, input_jacobian, softmax
from stealbench.errors import NumericalError, ShapeError


def _zero(net):
    for _, _, arr in net.parameters():
        arr[...] = 0.0
    return net


def test_zero_weight_net_is_uniform():
    net = _zero(Network.dense(7, [5], 4, seed=0))
    out = net.forward(np.random.default_rng(0).normal(size=(3, 7)))
    assert np.allclose(out, 0.25)


def test_forward_matches_straight_line_reference():
    net = Network.dense(4, [3], 2, seed=11)
    x = np.array([[0.1, -0.2, 0.3, 0.9]])
    (w1, b1), (w2, b2) = [(l.params["W"], l.params["b"]) for l in net.layers if isinstance(l, Dense)]
    h = np.maximum(x @ w1 + b1, 0.0)
    z = h @ w2 + b2
    ref = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    assert np.allclose(net.forward(x), ref, atol=1e-14)


def test_shape_mismatch():
    net = Network.dense(4, [3], 2)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 5)))
    with pytest.raises(ShapeError):
        Network((4,), [Dense(5, 2)])


def test_perfect_fit_mse_has_zero_loss_and_gradient():
    net = Network.dense(4, [3], 3, seed=1)
    x = np.random.default_rng(0).uniform(size=(5, 4))
    value, grads = net.loss_and_gradients(x, net.forward(x), "mse")
    assert value == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_cross_entropy_on_uniform_output_is_ln2():
    net = _zero(Network.dense(3, [2], 2))
    value, _ = net.loss_and_gradients(np.ones((1, 3)), np.array([[1.0, 0.0]]), "cross_entropy_soft")
    assert value == pytest.approx(0.6931471805599453, abs=1e-12)


def test_non_finite_loss_names_layer():
    net = Network.dense(3, [2], 2)
    with pytest.raises(NumericalError) as err:
        net.loss_and_gradients(np.ones((1, 3)), np.array([[np.nan, 1.0]]), "mse")
    assert err.value.layer == "output"


def test_unknown_loss():
    net = Network.dense(3, [2], 2)
    with pytest.raises(ValueError):
        net.loss_and_gradients(np.ones((1, 3)), np.array([[0.0, 1.0]]), "hinge")


def test_reverse_sigmoid_head_output_is_distribution():
    net = Network.dense(5, [4], 3, output_mode=OutputMode.reverse_sigmoid(0.5, 4.0), seed=2)
    out = net.forward(np.random.default_rng(1).uniform(size=(6, 5)))
    assert np.allclose(out.sum(axis=1), 1.0)
    plain = net.with_output_mode(OutputMode())
    assert np.allclose(plain.forward(np.zeros((1, 5))), softmax(net.logits(np.zeros((1, 5)))))


def test_output_mode_validation():
    with pytest.raises(ValueError):
        OutputMode("softmax_then_reverse_sigmoid", beta=0.0)
    with pytest.raises(ValueError):
        OutputMode("sigmoid")


def test_save_load_round_trip(tmp_path):
    net = Network.simple_convnet((8, 8, 1), 3, width_scale=0.1, seed=5)
    net.save(tmp_path / "m.npz")
    back = Network.load(tmp_path / "m.npz")
    assert back.weights_equal(net)
    x = np.random.default_rng(0).uniform(size=(2, 8, 8, 1))
    assert np.array_equal(back.forward(x), net.forward(x))
    assert Network.from_bytes(net.to_bytes()).describe() == net.describe()


def test_copy_is_independent():
    net = Network.dense(3, [2], 2, seed=0)
    twin = net.copy()
    twin.parameters()[0][2][...] += 1.0
    assert not net.weights_equal(twin)


def test_seeded_init_is_deterministic():
    assert Network.dense(6, [4], 3, seed=9).weights_equal(Network.dense(6, [4], 3, seed=9))
    assert not Network.dense(6, [4], 3, seed=9).weights_equal(Network.dense(6, [4], 3, seed=10))


def test_constant_net_has_zero_jacobian():
    net = _zero(Network.dense(4, [3], 3))
    assert np.all(input_jacobian(net, np.ones(4), 1) == 0)


def test_jacobian_single_and_batch_agree():
    net = Network.dense(4, [6], 3, seed=3)
    x = np.random.default_rng(2).uniform(size=(3, 4))
    batch = input_jacobian(net, x, [0, 2, 1])
    for i, k in enumerate([0, 2, 1]):
        assert np.allclose(batch[i], input_jacobian(net, x[i], k))
    with pytest.raises(ShapeError):
        input_jacobian(net, x[0], 3)


def test_simple_convnet_shapes():
    net = Network.simple_convnet((28, 28, 1), 10, width_scale=0.125, seed=0)
    assert net.forward(np.zeros((2, 28, 28, 1))).shape == (2, 10)
    assert any(isinstance(l, ReLU) for l in net.layers)
