import numpy as np

from inkgrade import nn
from inkgrade.rng import Rng

from oracles import finite_diff_grads, relative_tensor_error


def test_conv_matches_direct_convolution():
    rng = Rng(1)
    x = rng.normal(size=1 * 5 * 5 * 2).reshape(1, 5, 5, 2)
    w = rng.normal(size=9 * 2 * 3).reshape(3, 3, 2, 3)
    b = rng.normal(size=3)
    out, _ = nn.conv3x3_forward(x, w, b)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    direct = np.zeros((1, 5, 5, 3))
    for f in range(3):
        for i in range(5):
            for j in range(5):
                direct[0, i, j, f] = (xp[0, i : i + 3, j : j + 3, :] * w[:, :, :, f]).sum() + b[f]
    assert np.allclose(out, direct, atol=1e-12)


def test_conv_gradients_match_finite_differences():
    rng = Rng(2)
    x = rng.normal(size=2 * 4 * 4 * 2).reshape(2, 4, 4, 2)
    w = rng.normal(size=9 * 2 * 3).reshape(3, 3, 2, 3)
    b = rng.normal(size=3)
    target = rng.normal(size=2 * 4 * 4 * 3).reshape(2, 4, 4, 3)

    def loss():
        out, _ = nn.conv3x3_forward(x, w, b)
        return float(((out - target) ** 2).sum() / 2)

    out, cache = nn.conv3x3_forward(x, w, b)
    dout = out - target
    dx, dw, db = nn.conv3x3_backward(dout, w, cache)
    numeric = finite_diff_grads(loss, {"x": x, "w": w, "b": b}, eps=1e-5)
    assert relative_tensor_error(dx, numeric["x"]) < 1e-6
    assert relative_tensor_error(dw, numeric["w"]) < 1e-6
    assert relative_tensor_error(db, numeric["b"]) < 1e-6


def test_maxpool_and_backward():
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
    out, cache = nn.maxpool2_forward(x)
    assert out.reshape(-1).tolist() == [5, 7, 13, 15]
    dout = np.ones_like(out)
    dx = nn.maxpool2_backward(dout, cache)
    assert dx.sum() == 4
    assert dx[0, 1, 1, 0] == 1 and dx[0, 0, 0, 0] == 0


def test_layernorm_gradients():
    rng = Rng(3)
    x = rng.normal(size=4 * 6).reshape(4, 6)
    g = rng.normal(size=6) + 1.0
    b = rng.normal(size=6)
    target = rng.normal(size=4 * 6).reshape(4, 6)

    def loss():
        out, _ = nn.layernorm_forward(x, g, b)
        return float(((out - target) ** 2).sum() / 2)

    out, cache = nn.layernorm_forward(x, g, b)
    dx, dg, db = nn.layernorm_backward(out - target, cache)
    numeric = finite_diff_grads(loss, {"x": x, "g": g, "b": b}, eps=1e-6)
    assert relative_tensor_error(dx, numeric["x"]) < 1e-5
    assert relative_tensor_error(dg, numeric["g"]) < 1e-5
    assert relative_tensor_error(db, numeric["b"]) < 1e-5


def test_softmax_cross_entropy_grad():
    rng = Rng(4)
    logits = rng.normal(size=3 * 5).reshape(3, 5)
    labels = np.array([0, 3, 2])

    def loss():
        return float(nn.cross_entropy(nn.softmax(logits), labels)[0])

    _, dlogits = nn.cross_entropy(nn.softmax(logits), labels)
    numeric = finite_diff_grads(loss, {"logits": logits}, eps=1e-6)
    assert relative_tensor_error(dlogits, numeric["logits"]) < 1e-6


def test_adam_zero_lr_is_identity():
    params = {"w": np.ones(3, dtype=np.float32)}
    grads = {"w": np.full(3, 5.0, dtype=np.float32)}
    state = nn.AdamState()
    nn.adam_step(params, grads, state, nn.AdamConfig(lr=0.0))
    assert np.array_equal(params["w"], np.ones(3, dtype=np.float32))


def test_adam_moves_against_gradient():
    params = {"w": np.zeros(2, dtype=np.float64)}
    state = nn.AdamState()
    for _ in range(10):
        nn.adam_step(params, {"w": np.array([1.0, -1.0])}, state, nn.AdamConfig(lr=0.1))
    assert params["w"][0] < 0 < params["w"][1]


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = Rng(5)
    tensors = {
        "a": rng.normal(size=12).reshape(3, 4).astype(np.float32),
        "b": rng.normal(size=7).astype(np.float32),
    }
    meta = {"kind": "test", "note": 42}
    p = tmp_path / "ck.bin"
    nn.save_checkpoint(p, meta, tensors)
    meta2, tensors2 = nn.load_checkpoint(p)
    assert meta2 == meta
    for k in tensors:
        assert tensors2[k].dtype == np.dtype("<f4")
        assert np.array_equal(tensors[k], tensors2[k])
