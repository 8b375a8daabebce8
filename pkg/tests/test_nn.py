import json

import numpy as np
import pytest

from stackrl import nn
from stackrl.geometry import DimensionMismatch


def small_net(seed=0, act_out=nn.ACT_ID):
    return nn.net_init((nn.LayerSpec(4, 8, nn.ACT_RELU),
                        nn.LayerSpec(8, 2, act_out)), seed)


def test_net_init_properties():
    net = small_net(seed=3)
    assert net.n_params() == 4 * 8 + 8 + 8 * 2 + 2 == 58
    assert all(not b.any() for b in net.biases)
    again = small_net(seed=3)
    assert all(np.array_equal(a, b)
               for a, b in zip(net.weights, again.weights))
    limit = np.sqrt(6.0 / (4 + 8))
    assert np.abs(net.weights[0]).max() <= limit


def test_net_init_bad_specs():
    with pytest.raises(nn.BadSpec):
        nn.LayerSpec(0, 3)
    with pytest.raises(nn.BadSpec):
        nn.LayerSpec(2, 2, "tanh")
    with pytest.raises(nn.BadSpec):
        nn.net_init((nn.LayerSpec(2, 3), nn.LayerSpec(4, 1)), 0)


def test_forward_zero_weights_sigmoid():
    net = small_net(act_out=nn.ACT_SIGMOID)
    for w in net.weights:
        w[:] = 0.0
    out, _ = nn.forward(net, np.zeros(4))
    assert np.allclose(out, 0.5)


def test_forward_identity_layer():
    net = nn.net_init((nn.LayerSpec(3, 3, nn.ACT_ID),), 0)
    net.weights[0][:] = np.eye(3)
    x = np.array([0.3, -1.2, 4.0])
    out, _ = nn.forward(net, x)
    assert np.allclose(out, x)


def test_forward_relu_clips_negative():
    net = nn.net_init((nn.LayerSpec(1, 1, nn.ACT_RELU),), 0)
    net.weights[0][:] = 1.0
    out, _ = nn.forward(net, np.array([-2.0]))
    assert out[0] == 0.0


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        nn.forward(small_net(), np.zeros(5))


def test_backward_zero_at_minimum():
    net = nn.net_init((nn.LayerSpec(2, 1, nn.ACT_ID),), 0)
    net.weights[0][:] = 0.0
    x = np.array([1.0, 2.0])
    out, cache = nn.forward(net, x)
    dw, db = nn.backward(net, cache, nn.Loss.MSE, np.zeros(1))
    assert not dw[0].any() and not db[0].any()


def test_backward_single_linear_neuron_hand_value():
    # y = w*x, w=1, x=2, target 0, MSE: dL/dw = 2*y*x = 8
    net = nn.net_init((nn.LayerSpec(1, 1, nn.ACT_ID),), 0)
    net.weights[0][0, 0] = 1.0
    _, cache = nn.forward(net, np.array([2.0]))
    dw, db = nn.backward(net, cache, nn.Loss.MSE, np.array([0.0]))
    assert dw[0][0, 0] == pytest.approx(8.0)
    assert db[0][0] == pytest.approx(4.0)


@pytest.mark.parametrize("loss,act_out", [(nn.Loss.MSE, nn.ACT_ID),
                                          (nn.Loss.MSE, nn.ACT_SIGMOID),
                                          (nn.Loss.BCE, nn.ACT_SIGMOID)])
def test_grad_check_random_nets(loss, act_out):
    rng = np.random.default_rng(hash((loss.value, act_out)) % 2 ** 32)
    net = small_net(seed=int(rng.integers(1000)), act_out=act_out)
    samples = []
    for _ in range(4):
        x = rng.normal(size=4)
        t = rng.uniform(0.1, 0.9, size=2) if loss is nn.Loss.BCE \
            else rng.normal(size=2)
        samples.append((x, t))
    assert nn.grad_check(net, loss, samples) < 1e-4


def test_grad_check_identity_net_is_exact():
    # central differences are exact on a quadratic, up to roundoff
    net = nn.net_init((nn.LayerSpec(3, 2, nn.ACT_ID),), 7)
    samples = [(np.array([0.5, -1.0, 2.0]), np.array([1.0, 0.0]))]
    assert nn.grad_check(net, nn.Loss.MSE, samples) < 1e-9


def test_optimizer_momentum_zero_is_plain_sgd():
    net = nn.net_init((nn.LayerSpec(1, 1, nn.ACT_ID),), 0)
    net.weights[0][:] = 1.0
    opt = nn.OptimizerState(learning_rate=0.1, momentum=0.0)
    grads = ([np.array([[2.0]])], [np.array([0.0])])
    nn.optimizer_step(net, grads, opt)
    assert net.weights[0][0, 0] == pytest.approx(1.0 - 0.1 * 2.0)


def test_optimizer_zero_gradient_keeps_weights():
    net = small_net()
    before = [w.copy() for w in net.weights]
    grads = ([np.zeros_like(w) for w in net.weights],
             [np.zeros_like(b) for b in net.biases])
    nn.optimizer_step(net, grads, nn.OptimizerState())
    assert all(np.array_equal(a, b) for a, b in zip(before, net.weights))


def test_optimizer_momentum_two_steps():
    # with constant gradient g: second update is -lr*g*(1 + momentum)
    net = nn.net_init((nn.LayerSpec(1, 1, nn.ACT_ID),), 0)
    net.weights[0][:] = 0.0
    opt = nn.OptimizerState(learning_rate=0.1, momentum=0.9)
    grads = ([np.array([[1.0]])], [np.array([0.0])])
    nn.optimizer_step(net, grads, opt)
    w_after_first = net.weights[0][0, 0]
    nn.optimizer_step(net, grads, opt)
    second_delta = net.weights[0][0, 0] - w_after_first
    assert w_after_first == pytest.approx(-0.1)
    assert second_delta == pytest.approx(-0.1 * 1.9)


def test_optimizer_shape_mismatch():
    net = small_net()
    grads = ([np.zeros((1, 1)) for _ in net.weights],
             [np.zeros(1) for _ in net.biases])
    with pytest.raises(nn.ShapeMismatch):
        nn.optimizer_step(net, grads, nn.OptimizerState())


def test_save_load_round_trip_bit_exact():
    net = small_net(seed=42, act_out=nn.ACT_SIGMOID)
    doc = nn.save_model(net)
    loaded = nn.load_model(doc)
    assert nn.save_model(loaded) == doc
    assert all(np.array_equal(a, b)
               for a, b in zip(net.weights, loaded.weights))
    x = np.random.default_rng(0).normal(size=4)
    assert np.array_equal(nn.forward(net, x)[0], nn.forward(loaded, x)[0])


def test_load_model_truncated_document():
    doc = nn.save_model(small_net())
    with pytest.raises(nn.ParseError):
        nn.load_model(doc[: len(doc) // 2])


def test_load_model_version_mismatch():
    doc = json.loads(nn.save_model(small_net()))
    doc["version"] = 99
    with pytest.raises(nn.VersionMismatch):
        nn.load_model(json.dumps(doc))


def test_xor_training_sanity():
    """A 2-8-1 sigmoid net learns XOR within 20k full-batch steps for at
    least 8 of 10 seeds."""
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    T = np.array([[0.0], [1.0], [1.0], [0.0]])
    solved = 0
    for seed in range(10):
        net = nn.net_init((nn.LayerSpec(2, 8, nn.ACT_RELU),
                           nn.LayerSpec(8, 1, nn.ACT_SIGMOID)), seed)
        opt = nn.OptimizerState(learning_rate=0.05, momentum=0.9)
        for step in range(20000):
            out, cache = nn.forward(net, X)
            grads = nn.backward(net, cache, nn.Loss.MSE, T)
            nn.optimizer_step(net, grads, opt)
            if step % 500 == 0:
                if np.all((out[:, 0] >= 0.5) == (T[:, 0] == 1.0)):
                    solved += 1
                    break
        else:
            out, _ = nn.forward(net, X)
            if np.all((out[:, 0] >= 0.5) == (T[:, 0] == 1.0)):
                solved += 1
    assert solved >= 8, f"only {solved}/10 seeds solved XOR"
