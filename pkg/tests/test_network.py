import numpy as np
import pytest

from xaugseg.errors import BadSpatialSize, CheckpointError, EmptyDataset, ShapeMismatch
from xaugseg.metrics import dice_score
from xaugseg.model import (
    AdamConfig,
    AdamState,
    NetworkConfig,
    ResidualUNet,
    TrainConfig,
    adam_step,
    batch_soft_dice_loss,
    dump_checkpoint,
    load_checkpoint,
    parse_checkpoint,
    predict_volume,
    save_checkpoint,
    soft_dice,
    soft_dice_loss,
    train,
    unet_forward,
)
from xaugseg.model.network import ResidualBlock
from xaugseg.patching import TilingConfig
from xaugseg.volume_io import Volume3D

from gradcheck import check_param_grads, numeric_grad, rel_error, sample_coords


def tiny_net(seed=0, depth=2, filters=2, patch=8):
    return ResidualUNet(NetworkConfig(depth, filters, patch, seed), dtype=np.float64)


@pytest.mark.parametrize("cin, cout", [(3, 3), (2, 5)])
def test_residual_block_gradients(cin, cout, rng):
    block = ResidualBlock("b", cin, cout)
    params = {k: rng.standard_normal(s) * 0.5 for k, s in block.shapes().items()}
    assert ("b.proj.w" in params) == (cin != cout)
    x = rng.standard_normal((2, cin, 6, 6))
    y, cache = block.forward(params, x)
    r = rng.standard_normal(y.shape)
    grads = {}
    dx = block.backward(r, cache, grads)
    f = lambda: float(np.sum(block.forward(params, x)[0] * r))  # noqa: E731
    idx = sample_coords(x.size, 25, rng)
    assert rel_error(dx.reshape(-1)[idx], numeric_grad(f, x, idx)) < 1e-6
    for name, p in params.items():
        idx = sample_coords(p.size, 10, rng)
        assert rel_error(grads[name].reshape(-1)[idx], numeric_grad(f, p, idx)) < 1e-6


def test_residual_block_closed_forms(rng):
    block = ResidualBlock("b", 3, 3)
    zeros = {k: np.zeros(s) for k, s in block.shapes().items()}
    x = rng.standard_normal((2, 3, 4, 4))
    # the residual branch vanishes, leaving relu(0 + x)
    np.testing.assert_array_equal(block.forward(zeros, x)[0], np.maximum(x, 0))
    params = {k: rng.standard_normal(s) for k, s in ResidualBlock("c", 3, 5).shapes().items()}
    params = {k: (np.zeros_like(v) if k.endswith(".b") else v) for k, v in params.items()}
    assert not np.any(ResidualBlock("c", 3, 5).forward(params, np.zeros((1, 3, 4, 4)))[0])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_network_gradients(seed):
    rng = np.random.default_rng(seed)
    net = tiny_net(seed)
    x = rng.standard_normal((2, 1, 8, 8))
    assert check_param_grads(net, x, rng) < 1e-4


def test_zero_weights_give_one_half():
    net = ResidualUNet(NetworkConfig(2, 2, 8))
    for p in net.params.values():
        p[:] = 0
    prob = unet_forward(net, np.random.default_rng(0).random((8, 8)))
    assert prob.shape == (8, 8)
    assert np.all(prob == 0.5)


def test_outputs_in_open_interval_and_deterministic(rng):
    net = ResidualUNet(NetworkConfig(2, 3, 8, seed=2))
    for scale in (1.0, 1e3):
        x = rng.standard_normal((3, 1, 8, 8)) * scale
        a, b = net.forward(x)[0], net.forward(x)[0]
        assert a.tobytes() == b.tobytes()
        assert np.all((a > 0) & (a < 1))


def test_filter_doubling():
    cfg = NetworkConfig(3, 4, 32)
    assert cfg.stage_channels() == [4, 8, 16, 32]
    shapes = ResidualUNet(cfg).param_shapes()
    assert shapes["down0.conv1.w"] == (4, 1, 3, 3)
    assert shapes["down2.conv2.w"] == (16, 16, 3, 3)
    assert shapes["center.conv1.w"] == (32, 16, 3, 3)
    assert shapes["up2.conv1.w"] == (16, 32 + 16, 3, 3)
    assert shapes["up0.conv2.w"] == (4, 4, 3, 3)
    assert shapes["head.w"] == (1, 4, 1, 1)


def test_spatial_checks():
    with pytest.raises(BadSpatialSize):
        NetworkConfig(3, 4, 20)
    net = ResidualUNet(NetworkConfig(2, 2, 8))
    with pytest.raises(BadSpatialSize):
        net.forward(np.zeros((1, 1, 6, 8)))
    with pytest.raises(BadSpatialSize):
        net.forward(np.zeros((1, 2, 8, 8)))
    # any multiple of 2**depth works, not just the configured patch size
    assert net.forward(np.zeros((1, 1, 12, 16)))[0].shape == (1, 1, 12, 16)


def test_init_is_seeded():
    a = ResidualUNet(NetworkConfig(seed=5))
    b = ResidualUNet(NetworkConfig(seed=5))
    c = ResidualUNet(NetworkConfig(seed=6))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["down0.conv1.w"], c.params["down0.conv1.w"])
    assert all(v.dtype == np.float32 for v in a.params.values())


# --- loss -------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_soft_dice_on_binary_matches_hard_dice(seed):
    rng = np.random.default_rng(seed)
    a = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    b = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    hard = dice_score(a, b)
    assert soft_dice(a.astype(float), b, eps=0.0) == hard
    # 1 - (1 - D) can differ from D in the last bit
    loss, _ = soft_dice_loss(a.astype(float), b, eps=0.0)
    assert 1 - loss == pytest.approx(hard, abs=2e-16)


def test_soft_dice_hand_values():
    p = np.array([0.5, 0.5, 0.0])
    g = np.array([1, 0, 0])
    # (2 * 0.5 + 1) / (1 + 1 + 1)
    assert soft_dice(p, g) == pytest.approx(2 / 3)
    assert soft_dice(np.zeros(4), np.zeros(4)) == 1.0
    assert soft_dice(np.full(4, 0.5), np.array([1, 1, 0, 0]), eps=0.0) == 0.5
    loss, _ = soft_dice_loss(np.array([1.0, 0.0, 1.0]), np.array([1, 0, 1]))
    assert loss == 0.0


def test_soft_dice_gradient(rng):
    p = rng.random((3, 5))
    g = (rng.random((3, 5)) > 0.5).astype(float)
    _, grad = soft_dice_loss(p, g)
    f = lambda: soft_dice_loss(p, g)[0]  # noqa: E731
    idx = np.arange(p.size)
    assert rel_error(grad.ravel(), numeric_grad(f, p, idx)) < 1e-8


def test_batch_loss_is_mean_of_samples(rng):
    p = rng.random((4, 1, 6, 6))
    g = (rng.random((4, 1, 6, 6)) > 0.7).astype(float)
    loss, dice, grad = batch_soft_dice_loss(p, g)
    per = [soft_dice_loss(p[i], g[i]) for i in range(4)]
    assert loss == pytest.approx(np.mean([lv for lv, _ in per]))
    assert dice == pytest.approx(1 - loss)
    np.testing.assert_allclose(grad[2], per[2][1] / 4)
    with pytest.raises(ShapeMismatch):
        batch_soft_dice_loss(p, g[:3])


# --- optimizer ----------------------------------------------------------------


def test_adam_hand_trace():
    cfg = AdamConfig(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    p = {"w": np.array([1.0])}
    state = AdamState()
    adam_step(p, {"w": np.array([2.0])}, state, cfg)
    # bias-corrected first step moves by lr * sign(g)
    p1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8)
    assert p["w"][0] == pytest.approx(p1, abs=1e-15)
    adam_step(p, {"w": np.array([-1.0])}, state, cfg)
    m = 0.9 * 0.2 + 0.1 * -1.0
    v = 0.999 * 0.004 + 0.001 * 1.0
    step = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert p["w"][0] == pytest.approx(p1 - step, abs=1e-15)
    assert state.t == 2


def test_adam_zero_gradient_is_still():
    p = {"w": np.ones(3)}
    adam_step(p, {"w": np.zeros(3)}, AdamState(), AdamConfig())
    np.testing.assert_array_equal(p["w"], np.ones(3))


def test_adam_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(lr=0)
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)


# --- training and inference ------------------------------------------------------


def _pairs(n, size=8, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        img = rng.random((size, size)).astype(np.float32)
        out.append((img, (img > 0.5).astype(np.uint8)))
    return out


def test_zero_epochs_leave_weights(rng):
    net = ResidualUNet(NetworkConfig(2, 2, 8))
    before = {k: v.copy() for k, v in net.params.items()}
    assert train(net, _pairs(3), 0) == []
    assert all(np.array_equal(before[k], net.params[k]) for k in before)


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train(ResidualUNet(NetworkConfig(2, 2, 8)), [], 1)


def test_training_is_deterministic_and_learns():
    def run():
        net = ResidualUNet(NetworkConfig(2, 4, 8, seed=1))
        hist = train(net, _pairs(6), 30, TrainConfig(batch_size=3, adam=AdamConfig(lr=3e-3)))
        return net, hist

    (a, ha), (b, hb) = run(), run()
    assert ha == hb
    assert all(0.0 <= d <= 1.0 for d in ha)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert ha[-1] > ha[0] + 0.1


def test_list_and_array_datasets_agree():
    pairs = _pairs(5)
    arrays = (np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))
    a = ResidualUNet(NetworkConfig(2, 2, 8))
    b = ResidualUNet(NetworkConfig(2, 2, 8))
    assert train(a, pairs, 2, TrainConfig(batch_size=2)) == train(b, arrays, 2, TrainConfig(batch_size=2))


def test_predict_volume_shape_and_determinism(rng):
    net = ResidualUNet(NetworkConfig(2, 2, 8))
    vol = Volume3D(rng.random((20, 12, 3)))
    a = predict_volume(net, vol, TilingConfig(8, 4))
    b = predict_volume(net, vol, TilingConfig(8, 4))
    assert a.dims == vol.dims
    assert a.data.dtype == np.uint8 and set(np.unique(a.data)) <= {0, 1}
    np.testing.assert_array_equal(a.data, b.data)


def test_predict_threshold_is_strict():
    net = ResidualUNet(NetworkConfig(2, 2, 8))
    for p in net.params.values():
        p[:] = 0  # every probability is exactly 0.5
    out = predict_volume(net, Volume3D(np.zeros((8, 8, 1))), TilingConfig(8, 8))
    assert out.data.sum() == 0


# --- checkpoint ------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, rng):
    net = ResidualUNet(NetworkConfig(2, 3, 8, seed=9))
    train(net, _pairs(2), 1)
    save_checkpoint(tmp_path / "m.ckpt", net)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == net.config
    assert all(back.params[k].tobytes() == net.params[k].tobytes() for k in net.params)
    x = rng.random((2, 1, 8, 8))
    np.testing.assert_array_equal(back.forward(x)[0], net.forward(x)[0])
    assert dump_checkpoint(back) == dump_checkpoint(net)


def test_checkpoint_rejects_corruption():
    raw = dump_checkpoint(ResidualUNet(NetworkConfig(2, 2, 8)))
    for bad in (b"NOTACKPT" + raw[8:], raw[:-3], raw[:20], b""):
        with pytest.raises(CheckpointError):
            parse_checkpoint(bad)
