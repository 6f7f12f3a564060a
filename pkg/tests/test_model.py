import numpy as np
import pytest
import torch

from sheetseg.errors import ConfigurationError, ContractError, FormatError
from sheetseg.model import (
    ModelConfig,
    build_model,
    dice_loss,
    dice_loss_grad,
    forward,
    load_checkpoint,
    param_count_report,
    save_checkpoint,
)

SMALL = ModelConfig(input_size=(16, 16), channel_widths=(8, 16, 32), seed=0)


def _fd_grad(p, g, s, h=1e-4):
    """Central finite differences, independent of the analytic expression."""
    p = np.asarray(p, dtype=np.float64)
    grad = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi = p.copy()
        lo = p.copy()
        hi[idx] += h
        lo[idx] -= h
        grad[idx] = (dice_loss(hi, g, s) - dice_loss(lo, g, s)) / (2 * h)
        it.iternext()
    return grad


# config


def test_default_config_has_sixteen_conv_layers():
    cfg = ModelConfig()
    assert cfg.input_size == (180, 180)
    assert cfg.pool_stages == 2
    assert cfg.convs_per_block == 3
    assert cfg.conv_layer_count == 16


def test_indivisible_input_rejected():
    with pytest.raises(ConfigurationError):
        ModelConfig(input_size=(181, 180))
    with pytest.raises(ConfigurationError):
        ModelConfig(input_size=(180, 182), pool_stages=2)  # 182/4 not integral


def test_widths_must_cover_every_level():
    with pytest.raises(ConfigurationError):
        ModelConfig(channel_widths=(64, 128))  # pool_stages=2 needs 3 widths


def test_default_param_count():
    m = build_model(ModelConfig())
    assert m.param_count == 2_841_154


def test_param_count_matches_weight_enumeration():
    m = build_model(SMALL)
    by_store = sum(w.size for w in m.weights.values())
    assert m.param_count == by_store
    # closed-form: sum over 3x3 and 1x1 kernels of k*k*cin*cout + cout
    cfg = SMALL
    widths = cfg.channel_widths
    total = 0
    cin = cfg.in_channels
    for w in widths[:-1]:  # encoder levels
        for _ in range(cfg.convs_per_block):
            total += 9 * cin * w + w
            cin = w
    for _ in range(cfg.convs_per_block):  # bottleneck
        total += 9 * cin * widths[-1] + widths[-1]
        cin = widths[-1]
    for w in reversed(widths[:-1]):  # decoder with skip concat on first conv
        total += 9 * (cin + w) * w + w
        cin = w
        for _ in range(cfg.convs_per_block - 1):
            total += 9 * cin * w + w
    total += cin * cfg.num_classes + cfg.num_classes  # 1x1 head
    assert m.param_count == total


def test_param_report_mentions_both_counts():
    report = param_count_report(build_model(ModelConfig()))
    assert "2,841,154" in report.replace("_", ",") or "2841154" in report
    assert "4,641,209" in report.replace("_", ",") or "4641209" in report


def test_init_is_seeded():
    a = build_model(SMALL)
    b = build_model(SMALL)
    c = build_model(ModelConfig(input_size=(16, 16), channel_widths=(8, 16, 32), seed=1))
    for k in a.weights:
        np.testing.assert_array_equal(a.weights[k], b.weights[k])
    assert any((a.weights[k] != c.weights[k]).any() for k in a.weights)


# forward


def test_forward_shape_and_normalization():
    m = build_model(SMALL)
    rng = np.random.default_rng(0)
    batch = rng.normal(size=(3, 16, 16)).astype(np.float32)
    out = forward(m, batch)
    assert out.shape == (3, 16, 16, 2)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-5)
    assert (out >= 0).all()


def test_forward_deterministic():
    m = build_model(SMALL)
    rng = np.random.default_rng(1)
    batch = rng.normal(size=(2, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(forward(m, batch), forward(m, batch))


def test_forward_rejects_wrong_slice_shape():
    m = build_model(SMALL)
    with pytest.raises(ContractError):
        forward(m, np.zeros((2, 16, 20), dtype=np.float32))


def test_fresh_model_starts_near_foreground_prior():
    # guards against the all-background collapse: training must not start at p=0.5
    m = build_model(SMALL)
    out = forward(m, np.random.default_rng(7).normal(size=(4, 16, 16)).astype(np.float32))
    fg = out[..., 1].mean()
    assert 0.001 < fg < 0.05


def test_zero_head_gives_exact_half():
    m = build_model(SMALL)
    with torch.no_grad():
        m.net.convs["head"].weight.zero_()
        m.net.convs["head"].bias.zero_()
    out = forward(m, np.random.default_rng(2).normal(size=(1, 16, 16)).astype(np.float32))
    assert (out == 0.5).all()


# dice loss


def test_dice_loss_perfect_overlap():
    g = (np.random.default_rng(3).random((2, 8, 8)) > 0.5).astype(np.float64)
    assert g.sum() > 0
    assert dice_loss(g, g, 1.0) == pytest.approx(-1.0, abs=1e-12)


def test_dice_loss_both_empty_with_smoothing():
    z = np.zeros((1, 4, 4))
    assert dice_loss(z, z, 1.0) == -1.0


def test_dice_loss_missed_foreground_example():
    g = np.zeros((1, 10, 10))
    g.flat[:99] = 1.0
    p = np.zeros((1, 10, 10))
    assert dice_loss(p, g, 1.0) == pytest.approx(-0.01, abs=1e-15)


def test_dice_loss_binary_symmetry():
    rng = np.random.default_rng(4)
    p = (rng.random((2, 6, 6)) > 0.5).astype(np.float64)
    g = (rng.random((2, 6, 6)) > 0.5).astype(np.float64)
    assert dice_loss(p, g, 1.0) == pytest.approx(dice_loss(g, p, 1.0), abs=1e-15)


def test_dice_loss_monotone_along_scaled_truth():
    g = np.zeros((1, 6, 6))
    g[0, 2:4, 2:4] = 1.0
    vals = [dice_loss(t * g, g, 1.0) for t in np.linspace(0, 1, 11)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_dice_loss_validates_inputs():
    g = np.zeros((1, 4, 4))
    with pytest.raises(ContractError):
        dice_loss(np.zeros((1, 4, 5)), g, 1.0)
    with pytest.raises(ContractError):
        dice_loss(np.full((1, 4, 4), 1.2), g, 1.0)
    with pytest.raises(ContractError):
        dice_loss(g, g, 0.0)


def test_dice_grad_matches_fd_random():
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = rng.uniform(0.05, 0.95, size=(1, 8, 8))
        g = (rng.random((1, 8, 8)) > 0.5).astype(np.float64)
        analytic = dice_loss_grad(p, g, 1.0)
        fd = _fd_grad(p, g, 1.0)
        assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) <= 1e-4


def test_dice_grad_matches_fd_empty_truth():
    rng = np.random.default_rng(6)
    p = rng.uniform(0.1, 0.9, size=(1, 6, 6))
    g = np.zeros((1, 6, 6))
    analytic = dice_loss_grad(p, g, 1.0)
    fd = _fd_grad(p, g, 1.0)
    assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) <= 1e-4


def test_dice_grad_matches_fd_single_voxel_truth():
    p = np.full((1, 5, 5), 0.5)
    g = np.zeros((1, 5, 5))
    g[0, 2, 2] = 1.0
    analytic = dice_loss_grad(p, g, 1.0)
    fd = _fd_grad(p, g, 1.0)
    assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) <= 1e-4


def test_dice_grad_near_perfect_prediction():
    # probe just inside [0, 1] so central differences stay in-domain
    h = 1e-4
    g = np.zeros((1, 6, 6))
    g[0, 1:3, 1:3] = 1.0
    p = np.where(g > 0, 1.0 - 2 * h, 2 * h)
    analytic = dice_loss_grad(p, g, 1.0)
    fd = _fd_grad(p, g, 1.0, h=h)
    assert np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12) <= 1e-4


# checkpointing


def test_checkpoint_roundtrip(tmp_path):
    m = build_model(SMALL, view="axial")
    path = tmp_path / "model.npz"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.config == m.config
    assert back.param_count == m.param_count
    assert back.view == m.view
    for k in m.weights:
        np.testing.assert_array_equal(back.weights[k], m.weights[k])
    x = np.random.default_rng(7).normal(size=(1, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(forward(back, x), forward(m, x))


def test_checkpoint_rejects_tampered_weights(tmp_path):
    m = build_model(SMALL)
    path = tmp_path / "model.npz"
    save_checkpoint(m, path)
    blob = np.load(path, allow_pickle=False)
    payload = {k: blob[k] for k in blob.files}
    key = next(k for k in payload if k.startswith("weights/") and payload[k].ndim == 1)
    payload[key] = payload[key][:-1]  # drop one bias element
    np.savez(path, **payload)
    with pytest.raises(FormatError):
        load_checkpoint(path)
