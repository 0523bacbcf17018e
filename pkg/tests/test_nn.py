import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bodylatent import container
from bodylatent.nn import (
    AdamState,
    Mlp,
    TrainingError,
    adam_step,
    backward,
    forward,
    forward_batch,
    load_weights,
    minibatches,
    mse_loss,
    run_training,
    save_weights,
    train_regression,
)


def naive_forward(net, x):
    """Second evaluation path: explicit per-unit loops."""
    h = list(x)
    for li, (W, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for j in range(W.shape[1]):
            s = b[j]
            for i in range(W.shape[0]):
                s += h[i] * W[i, j]
            out.append(max(s, 0.0) if li < len(net.weights) - 1 else s)
        h = out
    return np.array(h)


def test_param_count():
    net = Mlp([3, 7, 5, 2])
    assert net.n_params == 3 * 7 + 7 + 7 * 5 + 5 + 5 * 2 + 2
    assert sum(p.size for p in net.params()) == net.n_params


def test_width_validation():
    with pytest.raises(ValueError):
        Mlp([3])
    with pytest.raises(ValueError):
        Mlp([3, 2], weights=[np.zeros((2, 3))])
    with pytest.raises(ValueError):
        forward(Mlp([3, 2]), np.zeros(4))


def test_zero_weights_give_bias():
    net = Mlp([4, 6, 3])
    for w in net.weights:
        w[:] = 0
    net.biases[-1][:] = [1.0, -2.0, 3.0]
    np.testing.assert_array_equal(forward(net, np.ones(4)), [1.0, -2.0, 3.0])


def test_linear_layer():
    net = Mlp([3, 3], weights=[2 * np.eye(3)])
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(forward(net, x), 2 * x)


def test_dual_path_oracle():
    rng = np.random.default_rng(0)
    net = Mlp([5, 9, 8, 4], seed=3)
    for b in net.biases:
        b[:] = rng.normal(size=b.shape)
    for _ in range(5):
        x = rng.normal(size=5)
        np.testing.assert_allclose(forward(net, x), naive_forward(net, x), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 40), st.integers(0, 2**31))
def test_batch_rows_equal_single(width_in, n, seed):
    rng = np.random.default_rng(seed)
    net = Mlp([width_in, 17, 6], seed=seed)
    X = rng.normal(size=(n, width_in))
    Y = forward_batch(net, X)
    for i in range(n):
        assert forward(net, X[i]).tobytes() == Y[i].tobytes()


def _fd_param_grads(net, x, cot, h=1e-6):
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = np.sum(forward_batch(net, x) * cot)
            p[i] = old - h
            fm = np.sum(forward_batch(net, x) * cot)
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def _rel(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_param_gradients_finite_difference():
    rng = np.random.default_rng(1)
    net = Mlp([10, 10, 10], seed=2)
    x = rng.normal(size=(4, 10))
    cot = rng.normal(size=(4, 10))
    grads, dx = backward(net, x, cot)
    assert _rel(grads, _fd_param_grads(net, x, cot)) < 1e-5
    fd_x = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += 1e-6
        xm[i] -= 1e-6
        fd_x[i] = (np.sum(forward_batch(net, xp) * cot) - np.sum(forward_batch(net, xm) * cot)) / 2e-6
    assert np.linalg.norm(dx - fd_x) / np.linalg.norm(fd_x) < 1e-5


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 2**31))
def test_gradient_check_property(widths, seed):
    rng = np.random.default_rng(seed)
    net = Mlp(widths, seed=seed)
    for b in net.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=(3, widths[0]))
    cot = rng.normal(size=(3, widths[-1]))
    # stay away from ReLU kinks so that central differences are valid
    _, acts = net.forward_cached(x)
    pre = [a for a in acts[1:-1]]
    if any(np.abs(a[a != 0]).min(initial=1.0) < 1e-4 for a in pre):
        return
    grads, _ = backward(net, x, cot)
    fd = _fd_param_grads(net, x, cot)
    flat = np.concatenate([g.ravel() for g in grads])
    assert _rel(grads, fd) < 1e-5 or np.abs(flat).max() < 1e-12


def test_linear_input_gradient():
    rng = np.random.default_rng(3)
    W = rng.normal(size=(4, 3))
    net = Mlp([4, 3], weights=[W])
    cot = rng.normal(size=3)
    _, dx = backward(net, rng.normal(size=4), cot)
    np.testing.assert_allclose(dx, W @ cot, atol=1e-15)


def test_zero_cotangent():
    net = Mlp([4, 5, 3], seed=1)
    grads, dx = backward(net, np.ones(4), np.zeros(3))
    assert all(np.all(g == 0) for g in grads) and np.all(dx == 0)
    with pytest.raises(ValueError):
        backward(net, np.ones(4), np.zeros(2))


def test_relu_subgradient_zero_at_zero():
    net = Mlp([1, 1, 1], weights=[np.ones((1, 1)), np.ones((1, 1))])
    grads, dx = backward(net, np.zeros(1), np.ones(1))
    assert dx[0] == 0.0 and grads[0][0, 0] == 0.0


def test_fit_linear_function():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, size=(256, 1))
    y = 2 * x + 1
    net = Mlp([1, 16, 1], seed=0)
    hist = train_regression(net, (x, y), epochs=250, batch=32, seed=0, lr=1e-2)
    assert len(hist) <= 2000
    assert mse_loss(forward_batch(net, x), y)[0] < 1e-4


def test_zero_lr_and_determinism():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(50, 2)), rng.normal(size=(50, 1))
    net = Mlp([2, 8, 1], seed=1)
    before = [p.copy() for p in net.params()]
    train_regression(net, (x, y), epochs=3, batch=8, lr=0.0)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))
    h1 = train_regression(Mlp([2, 8, 1], seed=1), (x, y), epochs=5, batch=8, seed=7)
    h2 = train_regression(Mlp([2, 8, 1], seed=1), (x, y), epochs=5, batch=8, seed=7)
    assert h1 == h2 and len(h1) > 0
    assert train_regression(Mlp([2, 8, 1]), (x, y), epochs=0)


def test_minibatches_cover_and_repeat():
    a = np.concatenate(list(minibatches(23, 5, 3, 0)))
    assert sorted(a) == list(range(23))
    assert a.tobytes() == np.concatenate(list(minibatches(23, 5, 3, 0))).tobytes()
    assert a.tobytes() != np.concatenate(list(minibatches(23, 5, 3, 1))).tobytes()


def test_adam_first_step():
    p = [np.array([1.0, -1.0])]
    g = [np.array([0.5, -2.0])]
    st_ = AdamState.for_params(p, lr=0.1)
    adam_step(p, g, st_)
    # bias-corrected first step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p[0], [0.9, -0.9], atol=1e-7)
    assert st_.m[0].shape == p[0].shape and st_.step == 1
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(3)], st_)


def test_nan_loss_aborts():
    p = [np.zeros(2)]
    with pytest.raises(TrainingError, match="non-finite"):
        run_training(p, 4, lambda idx: (float("nan"), [np.zeros(2)]), 1, 2, 0, AdamState.for_params(p))


def test_lr_decay_reaches_final():
    p = [np.zeros(1)]
    st_ = AdamState.for_params(p, lr=1e-2)
    run_training(p, 10, lambda idx: (0.0, [np.ones(1)]), 3, 5, 0, st_, lr_final=1e-4)
    assert st_.lr == pytest.approx(1e-4)


def test_weights_round_trip(tmp_path):
    net = Mlp([3, 11, 2], seed=8)
    save_weights(net, tmp_path / "w.bin")
    back = load_weights(tmp_path / "w.bin")
    assert all(a.tobytes() == b.tobytes() for a, b in zip(net.params(), back.params()))
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert forward_batch(net, x).tobytes() == forward_batch(back, x).tobytes()


def test_weights_truncated_and_mismatched(tmp_path):
    net = Mlp([3, 4, 2], seed=8)
    save_weights(net, tmp_path / "w.bin")
    blob = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(blob[:-9])
    with pytest.raises(container.ContainerError, match="truncated"):
        load_weights(tmp_path / "cut.bin")
    arrays = {"widths": np.array([3.0, 5.0, 2.0]), "W0": net.weights[0], "b0": net.biases[0],
              "W1": net.weights[1], "b1": net.biases[1]}
    container.write(tmp_path / "bad.bin", "mlp", arrays)
    with pytest.raises(container.ContainerError, match="mismatch"):
        load_weights(tmp_path / "bad.bin")
