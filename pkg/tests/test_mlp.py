import numpy as np
import pytest

from odassign.errors import CheckpointError, ContractViolation
from odassign.mlp import (Adam, MlpParams, backward, clip_by_global_norm, deserialize_params,
                          dumps_checkpoint, forward, global_norm, init_mlp, loads_checkpoint,
                          serialize_params)


def zero_net(sizes):
    return MlpParams(sizes[0], tuple(sizes[1:-1]), sizes[-1],
                     [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                     [np.zeros(b) for b in sizes[1:]])


def test_zero_weights_give_zero_output():
    p = zero_net((4, 3, 2))
    out, _ = forward(p, np.ones(4))
    np.testing.assert_array_equal(out, [0.0, 0.0])


def test_identity_output_layer():
    p = MlpParams(3, (), 3, [np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -2.0, 7.0])
    np.testing.assert_array_equal(forward(p, x)[0], x)


def test_two_layer_hand_value():
    p = MlpParams(2, (2,), 1, [np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[1.0], [-1.0]])],
                  [np.array([0.0, 0.5]), np.array([0.25])])
    x = np.array([0.3, -0.1])
    expect = np.tanh(0.3) - np.tanh(-0.2 + 0.5) + 0.25
    assert forward(p, x)[0][0] == pytest.approx(expect, abs=1e-15)


def test_batch_matches_single_rows():
    p = init_mlp(5, (7, 7), 3, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((4, 5))
    batch, _ = forward(p, x)
    for i in range(4):
        np.testing.assert_allclose(forward(p, x[i])[0], batch[i], rtol=1e-14)


def test_input_shape_checked():
    p = init_mlp(5, (4,), 2, np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        forward(p, np.ones(4))


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = init_mlp(4, (6, 5, 4), 3, rng, final_scale=1.0)
    for b in p.biases:
        b += 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 3))

    def loss(q, xx):
        return float(np.sum(forward(q, xx)[0] * w))

    _, cache = forward(p, x)
    grads, gin = backward(p, cache, w)
    h = 1e-6
    for t, g in zip(p.tensors(), grads):
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + h
            up = loss(p, x)
            t[idx] = old - h
            down = loss(p, x)
            t[idx] = old
            num = (up - down) / (2 * h)
            assert abs(num - g[idx]) <= max(1e-4 * abs(num), 1e-6)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num = (loss(p, xp) - loss(p, xm)) / (2 * h)
        assert abs(num - gin[idx]) <= max(1e-4 * abs(num), 1e-6)


def test_stale_cache_rejected():
    rng = np.random.default_rng(0)
    p = init_mlp(3, (4,), 2, rng)
    _, cache = forward(p, np.ones(3))
    p.version += 1
    with pytest.raises(ContractViolation):
        backward(p, cache, np.ones(2))
    other = p.copy()
    _, cache = forward(p, np.ones(3))
    with pytest.raises(ContractViolation):
        backward(other, cache, np.ones(2))


def test_global_norm_clipping():
    grads = [np.array([3.0]), np.array([[4.0]])]
    assert global_norm(grads) == 5.0
    clipped, norm = clip_by_global_norm(grads, 0.5)
    assert norm == 5.0
    assert global_norm(clipped) == pytest.approx(0.5)
    same, _ = clip_by_global_norm(grads, 10.0)
    assert same is grads


def test_adam_zero_gradient_leaves_parameters():
    w = np.array([1.0, -2.0])
    opt = Adam(lr=0.1)
    assert opt.step([w], [np.zeros(2)])
    np.testing.assert_array_equal(w, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    w = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -7.0, 1e-3])
    opt = Adam(lr=0.01, eps=0.0)
    opt.step([w], [g])
    np.testing.assert_allclose(w, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], rtol=1e-12)


def test_adam_skips_non_finite_gradient():
    w = np.array([1.0])
    opt = Adam(lr=0.1)
    assert not opt.step([w], [np.array([np.nan])])
    assert opt.step([w], [np.array([np.inf])]) is False
    assert w[0] == 1.0 and opt.t == 0 and opt.skipped == 2 and opt.m is None


def test_adam_state_roundtrip():
    rng = np.random.default_rng(0)
    w1, w2 = np.ones(3), np.ones(3)
    a = Adam(lr=0.05)
    for _ in range(3):
        a.step([w1], [rng.standard_normal(3)])
    b = Adam.from_state(a.state_meta(), a.state_tensors("o"), "o", 1)
    w2[:] = w1
    g = rng.standard_normal(3)
    a.step([w1], [g])
    b.step([w2], [g])
    np.testing.assert_array_equal(w1, w2)


def test_checkpoint_roundtrip_full_size():
    rng = np.random.default_rng(0)
    p = init_mlp(101, (512, 512, 512), 6, rng)
    q = deserialize_params(serialize_params(p))
    assert q.sizes == (101, 512, 512, 512, 6)
    for a, b in zip(p.tensors(), q.tensors()):
        np.testing.assert_array_equal(a, b)
    x = rng.standard_normal((2, 101))
    np.testing.assert_array_equal(forward(p, x)[0], forward(q, x)[0])


def test_checkpoint_corruption_detected():
    data = dumps_checkpoint({"a": np.arange(6.0).reshape(2, 3)}, {"kind": "x"})
    t, meta = loads_checkpoint(data)
    assert meta == {"kind": "x"}
    np.testing.assert_array_equal(t["a"], np.arange(6.0).reshape(2, 3))
    for bad in (data[:-1], data[:12], b"NOTACKPT" + data[8:], data + b"\0"):
        with pytest.raises(CheckpointError):
            loads_checkpoint(bad)
    with pytest.raises(CheckpointError):
        deserialize_params(data)
