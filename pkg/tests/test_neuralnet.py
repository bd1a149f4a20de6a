import numpy as np
import pytest

from kmfm.errors import ConfigError, DivergenceDetected, InvalidSpec, ShapeMismatch, StaleCache
from kmfm.neuralnet import (
    Adam,
    DenseLayer,
    EncoderDecoderNet,
    MseNumerical,
    NetworkSpec,
    Sgd,
    SoftmaxCategorical,
    TrainConfig,
    backward,
    encode_all,
    flat_grads,
    forward,
    init_network,
    layer_widths,
    load_network,
    mean_loss,
    mse,
    save_network,
    softmax_nll,
    softmax_probs,
    train,
)


def onehot_rows(rng, n, blocks):
    out = np.zeros((n, sum(blocks)))
    start = 0
    for m in blocks:
        out[np.arange(n), start + rng.integers(0, m, n)] = 1
        start += m
    return out


def total_loss(net, x, y, latent_weights=None):
    lat, out, _ = forward(net, x)
    val = float(np.sum(net.head.loss(out, y)))
    if latent_weights is not None:
        val += float(np.sum(latent_weights * lat))
    return val


def max_rel_error(net, x, y, latent_weights=None, h=1e-5):
    lat, out, cache = forward(net, x)
    lg = None if latent_weights is None else latent_weights
    grads = flat_grads(backward(net, cache, net.head.grad(out, y), lg))
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = total_loss(net, x, y, latent_weights)
            p[idx] = old - h
            down = total_loss(net, x, y, latent_weights)
            p[idx] = old
            num = (up - down) / (2 * h)
            denom = max(abs(num), abs(g[idx]), 1e-7)
            worst = max(worst, abs(num - g[idx]) / denom)
    return worst


# ----------------------------------------------------------------- losses

def test_softmax_examples():
    assert softmax_nll(np.zeros(4), np.array([0, 0, 1.0, 0])) == pytest.approx(np.log(4))
    assert softmax_nll(np.array([1000.0, 0.0]), np.array([0, 1.0])) == pytest.approx(1000.0)
    assert softmax_nll(np.array([1000.0, 0.0]), np.array([1.0, 0])) == pytest.approx(0.0, abs=1e-12)
    assert softmax_nll(np.zeros(3), np.array([1.0, 0, 0])) == softmax_nll(np.zeros(3), np.array([0, 1.0, 0]))


def test_softmax_normalization():
    rng = np.random.default_rng(0)
    logits = rng.normal(scale=30, size=(200, 9))
    p = softmax_probs(logits)
    assert np.max(np.abs(p.sum(axis=1) - 1)) < 1e-12
    head = SoftmaxCategorical(9, (4, 5))
    pb = softmax_probs(logits, head.blocks)
    assert np.max(np.abs(pb[:, :4].sum(axis=1) - 1)) < 1e-12
    assert np.max(np.abs(pb[:, 4:].sum(axis=1) - 1)) < 1e-12


def test_softmax_nonnegative():
    rng = np.random.default_rng(1)
    y = onehot_rows(rng, 50, [3, 4])
    assert np.all(softmax_nll(rng.normal(size=(50, 7)), y) >= 0)


def test_mse_examples():
    assert mse(np.zeros(2), np.zeros(2)) == 0
    assert mse(np.zeros(2), np.array([3.0, 4.0])) == 12.5
    r = np.array([1.0, -2.0, 0.5])
    assert mse(2 * r, np.zeros(3)) == pytest.approx(4 * mse(r, np.zeros(3)))
    with pytest.raises(ShapeMismatch):
        mse(np.zeros(2), np.zeros(3))


# ---------------------------------------------------------------- shapes

def test_init_shapes_and_determinism():
    spec = NetworkSpec((20, 10, 5), SoftmaxCategorical(13), seed=1)
    a, b = init_network(spec), init_network(spec)
    assert [l.weights.shape for l in a.encoder] == [(10, 20), (5, 10)]
    assert [l.weights.shape for l in a.decoder] == [(10, 5), (13, 10)]
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)
    assert all(np.all(l.bias == 0) for l in a.layers)
    assert a.decoder[-1].activation == "identity"


def test_invalid_spec():
    with pytest.raises(InvalidSpec):
        NetworkSpec((5, 10), MseNumerical(3))
    with pytest.raises(InvalidSpec):
        layer_widths(3, 3)


def test_layer_widths_strict():
    for d0 in (4, 7, 19, 54, 98):
        for kappa in range(1, min(8, d0)):
            dims = layer_widths(d0, kappa)
            assert len(dims) == kappa + 1 and dims[0] == d0
            assert all(a > b for a, b in zip(dims, dims[1:]))
            assert dims[-1] <= min(16, d0 - 1)


def _identity_net(weights):
    spec = NetworkSpec((2, 1), MseNumerical(2), use_bias=False)
    enc = [DenseLayer(np.asarray(weights, dtype=float), np.zeros(2), "relu")]
    dec = [DenseLayer(np.eye(2), np.zeros(2), "identity")]
    net = EncoderDecoderNet(spec, enc, dec)
    return net


def test_forward_relu_examples():
    assert np.array_equal(forward(_identity_net(np.eye(2)), np.array([2.0, 3.0]))[0], [2, 3])
    assert np.array_equal(forward(_identity_net(np.eye(2)), np.array([1.0, -1.0]))[0], [1, 0])
    assert np.array_equal(forward(_identity_net(-np.eye(2)), np.array([1.0, 2.0]))[0], [0, 0])
    with pytest.raises(ShapeMismatch):
        forward(_identity_net(np.eye(2)), np.zeros(3))


def test_encode_all_consistent_and_nonnegative():
    rng = np.random.default_rng(2)
    net = init_network(NetworkSpec((6, 4, 3), MseNumerical(5), seed=3))
    x = rng.normal(size=(11, 6))
    Y = encode_all(net, x, chunk=4)
    np.testing.assert_allclose(Y[0], forward(net, x[0])[0])
    perm = rng.permutation(11)
    np.testing.assert_array_equal(encode_all(net, x[perm]), Y[perm])
    assert np.all(Y >= 0)


# -------------------------------------------------------------- gradients

@pytest.mark.parametrize("blocks", [None, (3, 2, 2)])
def test_gradient_check_softmax(blocks):
    rng = np.random.default_rng(4)
    for trial in range(3):
        net = init_network(NetworkSpec((6, 5, 3), SoftmaxCategorical(7, blocks), seed=trial))
        for layer in net.layers:
            layer.bias = rng.normal(scale=0.1, size=layer.bias.shape)
        x = rng.normal(size=(8, 6))
        y = onehot_rows(rng, 8, blocks or (7,))
        assert max_rel_error(net, x, y) < 1e-4


def test_gradient_check_mse_with_latent_term():
    rng = np.random.default_rng(5)
    for trial in range(3):
        net = init_network(NetworkSpec((8, 6, 4, 3), MseNumerical(5), seed=10 + trial))
        for layer in net.layers:
            layer.bias = rng.normal(scale=0.1, size=layer.bias.shape)
        x = rng.normal(size=(16, 8))
        y = rng.normal(size=(16, 5))
        assert max_rel_error(net, x, y) < 1e-4
        assert max_rel_error(net, x, y, latent_weights=rng.normal(size=(16, 3))) < 1e-4


def test_zero_loss_grad_gives_zero_grads_and_duplication_doubles():
    rng = np.random.default_rng(6)
    net = init_network(NetworkSpec((4, 3), MseNumerical(2), seed=0))
    x = rng.normal(size=(1, 4))
    _, out, cache = forward(net, x)
    for dw, db in backward(net, cache, np.zeros_like(out)):
        assert not dw.any() and not db.any()
    y = rng.normal(size=(1, 2))
    g1 = flat_grads(backward(net, cache, net.head.grad(out, y)))
    x2, y2 = np.vstack([x, x]), np.vstack([y, y])
    _, out2, cache2 = forward(net, x2)
    g2 = flat_grads(backward(net, cache2, net.head.grad(out2, y2)))
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, 2 * a)


def test_stale_cache():
    net = init_network(NetworkSpec((4, 3), MseNumerical(2)))
    _, out, cache = forward(net, np.ones((2, 4)))
    net.version += 1
    with pytest.raises(StaleCache):
        backward(net, cache, np.zeros_like(out))
    other = net.copy()
    with pytest.raises(StaleCache):
        backward(other, cache, np.zeros_like(out))


# --------------------------------------------------------------- training

def test_sgd_step_is_minus_lr_grad():
    rng = np.random.default_rng(7)
    net = init_network(NetworkSpec((5, 3), MseNumerical(4), seed=2))
    x, y = rng.normal(size=(6, 5)), rng.normal(size=(6, 4))
    _, out, cache = forward(net, x)
    grads = flat_grads(backward(net, cache, net.head.grad(out, y)))
    before = [p.copy() for p in net.parameters()]
    Sgd(1e-3).step(net.parameters(), grads)
    for b, p, g in zip(before, net.parameters(), grads):
        np.testing.assert_array_equal(p, b - 1e-3 * g)


def test_zero_lr_keeps_parameters():
    rng = np.random.default_rng(8)
    net = init_network(NetworkSpec((5, 3), MseNumerical(4), seed=2))
    x, y = rng.normal(size=(10, 5)), rng.normal(size=(10, 4))
    for opt in ("sgd", "momentum", "adam"):
        trained, _ = train(net, (x, y), None, TrainConfig(epochs=3, batch_size=4, learning_rate=0.0,
                                                           optimizer=opt))
        for p, q in zip(net.parameters(), trained.parameters()):
            np.testing.assert_array_equal(p, q)


def test_separable_task_loss_decreases():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(8, 3))
    y = np.zeros((8, 2))
    y[np.arange(8), (x[:, 0] > 0).astype(int)] = 1
    net = init_network(NetworkSpec((3, 2), SoftmaxCategorical(2), seed=4))
    _, hist = train(net, (x, y), None, TrainConfig(epochs=200, batch_size=8, learning_rate=0.1,
                                                   optimizer="sgd"))
    assert hist.train[-1] < mean_loss(net, x, y)


def test_convex_case_monotone():
    # one identity-activation layer + MSE head: the loss is a convex quadratic in the weights
    rng = np.random.default_rng(10)
    x = rng.normal(size=(30, 4))
    y = x @ rng.normal(size=(4, 3)) + 0.1 * rng.normal(size=(30, 3))
    spec = NetworkSpec((4, 3), MseNumerical(3), use_bias=False, seed=0)
    net = EncoderDecoderNet(spec, [], [DenseLayer(rng.normal(size=(3, 4)), np.zeros(3), "identity")])
    # mean loss gradient is Lipschitz with constant 2 * sigma_max(x)^2 / (p1 * n)
    lip = 2 * np.linalg.svd(x, compute_uv=False)[0] ** 2 / (3 * 30)
    hist = []
    opt = Sgd(0.9 / lip)
    for _ in range(50):
        out = x @ net.decoder[0].weights.T
        hist.append(float(np.mean(net.head.loss(out, y))))
        g = net.head.grad(out, y) / 30
        opt.step([net.decoder[0].weights], [g.T @ x])
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_training_determinism_and_history_length():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(40, 6))
    y = onehot_rows(rng, 40, [3, 3])
    net = init_network(NetworkSpec((6, 4, 2), SoftmaxCategorical(6), seed=5))
    cfg = TrainConfig(epochs=15, batch_size=8, shuffle_seed=3)
    a, ha = train(net, (x[:30], y[:30]), (x[30:], y[30:]), cfg)
    b, hb = train(net, (x[:30], y[:30]), (x[30:], y[30:]), cfg)
    assert ha == hb and len(ha) == 15
    assert all(np.isfinite(v) and v >= 0 for v in ha.train + ha.validation)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)


def test_divergence_detected():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(16, 4)) * 1e3
    y = rng.normal(size=(16, 3)) * 1e3
    net = init_network(NetworkSpec((4, 3), MseNumerical(3), seed=0))
    with pytest.raises(DivergenceDetected) as err:
        train(net, (x, y), None, TrainConfig(epochs=50, batch_size=16, learning_rate=10.0, optimizer="sgd"))
    assert err.value.epoch >= 1


def test_batch_larger_than_data():
    net = init_network(NetworkSpec((4, 3), MseNumerical(3)))
    with pytest.raises(ConfigError):
        train(net, (np.zeros((4, 4)), np.zeros((4, 3))), None, TrainConfig(batch_size=5))


def test_adam_moves_against_gradient():
    p = [np.array([1.0, -1.0])]
    Adam(0.1).step(p, [np.array([2.0, -3.0])])
    np.testing.assert_allclose(p[0], [0.9, -0.9])


# ------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(13)
    net = init_network(NetworkSpec((7, 5, 2), SoftmaxCategorical(6, (2, 4)), seed=99))
    for layer in net.layers:
        layer.weights = rng.normal(size=layer.weights.shape)
        layer.bias = rng.normal(size=layer.bias.shape)
    path = tmp_path / "net.npz"
    save_network(net, path)
    back = load_network(path)
    assert back.spec == net.spec
    for p, q in zip(net.parameters(), back.parameters()):
        assert p.tobytes() == q.tobytes()
    x = rng.normal(size=(3, 7))
    assert np.array_equal(forward(net, x)[1], forward(back, x)[1])
