import math

import numpy as np
import pytest
from scipy.special import erf

from lpfm.attention import HeadKind
from lpfm.checkpoint import load_checkpoint, save_checkpoint
from lpfm.data import LabeledDataset
from lpfm.errors import ConfigurationError, FormatError
from lpfm.model import ModelConfig, init_params, model_forward, patchify, tokenize_image
from lpfm.numeric import RngState, layer_norm, softmax_rows
from lpfm.train import (OptimizerState, TrainHyper, adamw_step, clip_by_global_norm, loss_and_grads, lr_at,
                        no_decay_names, train)


def tiny_cfg(**kw):
    base = dict(depth=2, heads=2, dim=8, num_classes=3, input_dim=5, seq_len=4,
                head_assignment=["LS", "SL"])
    base.update(kw)
    return ModelConfig(**base)


def perturbed_params(cfg, seed=0, std=0.3):
    p = init_params(cfg, RngState(seed))
    g = np.random.default_rng(seed + 100)
    return {k: v + std * g.normal(size=v.shape) for k, v in p.items()}


# -- tokenization ----------------------------------------------------------

def test_token_counts():
    for size, patch, t in ((32, 4, 64), (224, 16, 196)):
        img = np.zeros((size, size, 3))
        emb = np.ones((patch * patch * 3, 2))
        assert tokenize_image(img, patch, emb, np.zeros((t, 2))).shape == (t, 2)


def test_zero_image_gives_zero_tokens():
    out = tokenize_image(np.zeros((8, 8, 1)), 4, np.random.default_rng(0).normal(size=(16, 3)), np.zeros((4, 3)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_patch_order_and_divisibility():
    img = np.arange(16.0).reshape(4, 4, 1)
    patches = patchify(img, 2)[0]
    np.testing.assert_array_equal(patches[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(patches[1], [2, 3, 6, 7])
    np.testing.assert_array_equal(patches[2], [8, 9, 12, 13])
    with pytest.raises(ConfigurationError):
        patchify(np.zeros((6, 6, 1)), 4)
    with pytest.raises(ConfigurationError):
        ModelConfig(input_kind="image", image_size=30, patch_size=4)


def test_config_invariants():
    with pytest.raises(ConfigurationError):
        ModelConfig(num_classes=1)
    with pytest.raises(ConfigurationError):
        ModelConfig(depth=2, heads=2, dim=8, head_assignment=["LS"])
    cfg = tiny_cfg()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# -- forward ---------------------------------------------------------------

def gelu(z):
    return 0.5 * z * (1 + erf(z / math.sqrt(2)))


def straight_line_logits(cfg, p, seq):
    """Token-by-token recomputation of the classifier, written without the tape."""
    x = seq @ p["embed.w"] + p["pos"]
    for i, kinds in enumerate(cfg.head_assignment):
        b = f"blocks.{i}."
        h = layer_norm(x, p[b + "ln1_g"], p[b + "ln1_b"])
        heads = []
        for j, kind in enumerate(kinds):
            q, k, v = h @ p[b + "w_q"][j], h @ p[b + "w_k"][j], h @ p[b + "w_v"][j]
            a = softmax_rows(q @ k.T / math.sqrt(cfg.d_k))
            heads.append(v - a @ v if kind == "L" else a @ v)
        x = x + np.hstack(heads) @ p[b + "w_o"]
        z = layer_norm(x, p[b + "ln2_g"], p[b + "ln2_b"])
        x = x + gelu(z @ p[b + "mlp_w1"] + p[b + "mlp_b1"]) @ p[b + "mlp_w2"] + p[b + "mlp_b2"]
    f = layer_norm(x, p["norm.g"], p["norm.b"]).mean(axis=0)
    return f @ p["head.w"] + p["head.b"]


def test_forward_matches_straight_line_oracle():
    cfg = tiny_cfg()
    p = perturbed_params(cfg)
    batch = np.random.default_rng(1).normal(size=(3, 4, 5))
    logits, _ = model_forward(cfg, p, batch)
    for b in range(3):
        np.testing.assert_allclose(logits.data[b], straight_line_logits(cfg, p, batch[b]), atol=1e-12)


def test_depth_zero_model():
    cfg = tiny_cfg(depth=0, head_assignment=[])
    p = perturbed_params(cfg)
    batch = np.random.default_rng(2).normal(size=(2, 4, 5))
    logits, _ = model_forward(cfg, p, batch)
    tokens = batch @ p["embed.w"] + p["pos"]
    want = layer_norm(tokens, p["norm.g"], p["norm.b"]).mean(axis=1) @ p["head.w"] + p["head.b"]
    np.testing.assert_allclose(logits.data, want, atol=1e-14)


def test_duplicate_rows_identical_logits():
    cfg = tiny_cfg(drop_path=0.3)
    p = perturbed_params(cfg)
    seq = np.random.default_rng(3).normal(size=(4, 5))
    logits, _ = model_forward(cfg, p, np.stack([seq, seq, -seq]))
    np.testing.assert_array_equal(logits.data[0], logits.data[1])


def test_capture_sites_and_head_trace():
    cfg = tiny_cfg()
    _, cap = model_forward(cfg, perturbed_params(cfg), np.zeros((2, 4, 5)) + 0.1, capture=True)
    assert len(cap.block_outputs) == len(cap.pre_mlp_ln) == 2
    assert cap.final_norm.shape == (2, 4, 8) and cap.features.shape == (2, 8)
    assert ["".join(k.value for k in ks) for ks in cap.head_kinds] == ["LS", "SL"]


def test_baseline_traverses_only_standard_heads():
    cfg = tiny_cfg(head_assignment=[])
    _, cap = model_forward(cfg, perturbed_params(cfg), np.ones((1, 4, 5)), capture=True)
    assert all(k is HeadKind.STANDARD for ks in cap.head_kinds for k in ks)


# -- loss and gradients ----------------------------------------------------

def test_saddle_bias_gradient():
    cfg = tiny_cfg()
    zero = {k: np.zeros_like(v) for k, v in init_params(cfg, RngState(0)).items()}
    x = np.random.default_rng(4).normal(size=(1, 4, 5))
    loss, _, grads = loss_and_grads(cfg, zero, x, np.array([2]))
    assert loss == pytest.approx(math.log(3), abs=1e-15)
    np.testing.assert_allclose(grads["head.b"], softmax_rows(np.zeros(3)) - np.eye(3)[2], atol=1e-15)


def test_untrainable_parameters_get_no_gradient():
    cfg = tiny_cfg()
    p = perturbed_params(cfg)
    _, _, grads = loss_and_grads(cfg, p, np.ones((2, 4, 5)), np.array([0, 1]),
                                 trainable=lambda k: k.startswith("head."))
    assert set(grads) == {"head.w", "head.b"}


# -- optimizer -------------------------------------------------------------

def test_adamw_zero_gradient_is_pure_decay():
    p = {"w": np.array([[1.0, -2.0], [0.5, 3.0]])}
    st = OptimizerState(lr=0.1, weight_decay=0.05)
    out = adamw_step(st, p, {"w": np.zeros((2, 2))})
    np.testing.assert_array_equal(out["w"], p["w"] * (1 - 0.1 * 0.05))


def test_adamw_first_step_sign():
    for g in (3.7, -0.002):
        st = OptimizerState(lr=0.01, eps=0.0, weight_decay=0.0, grad_clip=None)
        out = adamw_step(st, {"w": np.array([1.0])}, {"w": np.array([g])})
        assert out["w"][0] - 1.0 == pytest.approx(-0.01 * math.copysign(1, g), rel=1e-12)


def test_clip_to_unit_norm():
    g = np.random.default_rng(5)
    grads = {"a": g.normal(size=(3, 4)), "b": g.normal(size=7)}
    norm = math.sqrt(sum(float(np.sum(v * v)) for v in grads.values()))
    grads = {k: v * 10 / norm for k, v in grads.items()}
    clipped, before = clip_by_global_norm(grads, 1.0)
    assert before == pytest.approx(10.0, rel=1e-12)
    after = math.sqrt(sum(float(np.sum(v * v)) for v in clipped.values()))
    assert abs(after - 1.0) <= 1e-12


def test_no_decay_names():
    cfg = tiny_cfg(qk_norm=True)
    nd = no_decay_names(init_params(cfg, RngState(0)))
    assert "head.b" in nd and "blocks.0.ln1_g" in nd and "blocks.0.q_gain" in nd
    assert "head.w" not in nd and "blocks.1.w_q" not in nd


def test_schedule_points():
    assert lr_at(10, 10, 110, 1e-3, 1e-5, 1e-6) == 1e-3
    assert lr_at(110, 10, 110, 1e-3, 1e-5, 1e-6) == pytest.approx(1e-6, abs=1e-18)
    assert lr_at(60, 10, 110, 1e-3, 1e-5, 1e-6) == pytest.approx(1e-6 + (1e-3 - 1e-6) / 2, rel=1e-12)
    assert lr_at(0, 10, 110, 1e-3, 1e-5) == 1e-5
    assert lr_at(5, 10, 110, 1e-3, 0.0) == pytest.approx(5e-4)


# -- training --------------------------------------------------------------

def toy_data(n=12, seed=0):
    g = np.random.default_rng(seed)
    return LabeledDataset(g.normal(size=(n, 4, 5)), np.arange(n) % 3, 3)


def test_zero_lr_leaves_params():
    cfg = tiny_cfg()
    p = init_params(cfg, RngState(0))
    hyper = TrainHyper(epochs=2, batch_size=5, peak_lr=0.0, start_lr=0.0, warmup_epochs=1)
    res = train(cfg, toy_data(), None, hyper, seed=0, params=p)
    for k in p:
        np.testing.assert_array_equal(res.params[k], p[k])


def test_single_sample_descent():
    cfg = tiny_cfg()
    data = toy_data(1)
    p = init_params(cfg, RngState(1))
    before, _, _ = loss_and_grads(cfg, p, data.inputs, data.labels)
    hyper = TrainHyper(epochs=1, batch_size=1, peak_lr=1.0, warmup_epochs=0, weight_decay=0.0)
    res = train(cfg, data, None, hyper, seed=0, params=p, trainable=lambda k: k.startswith("head."))
    after, _, _ = loss_and_grads(cfg, res.params, data.inputs, data.labels)
    assert after < before
    changed = [k for k in p if not np.array_equal(p[k], res.params[k])]
    assert set(changed) <= {"head.w", "head.b"}


def test_training_is_deterministic():
    cfg = tiny_cfg(drop_path=0.2)
    hyper = TrainHyper(epochs=2, batch_size=4, peak_lr=1e-2, warmup_epochs=1)
    a = train(cfg, toy_data(), toy_data(6, 1), hyper, seed=3)
    b = train(cfg, toy_data(), toy_data(6, 1), hyper, seed=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert a.history == b.history
    assert len(a.history) == 2
    c = train(cfg, toy_data(), None, hyper, seed=4)
    assert not np.array_equal(a.params["head.w"], c.params["head.w"])


# -- checkpoint ------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_cfg()
    p = perturbed_params(cfg)
    path = tmp_path / "model.lpfm"
    save_checkpoint(path, p, cfg.to_dict())
    back = load_checkpoint(path, cfg.to_dict())
    assert list(back) == list(p)
    for k in p:
        np.testing.assert_array_equal(back[k], p[k])
    raw = path.read_bytes()
    assert raw[:4] == b"LPFM"


def test_checkpoint_errors(tmp_path):
    cfg = tiny_cfg()
    path = tmp_path / "m.lpfm"
    save_checkpoint(path, {"a": np.ones((2, 3)), "s": np.array(2.0)}, cfg.to_dict())
    raw = path.read_bytes()
    with pytest.raises(FormatError):
        load_checkpoint(path, tiny_cfg(num_classes=4).to_dict())
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError) as exc:
        load_checkpoint(tmp_path / "bad")
    assert exc.value.offset == 0
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "long")
    assert float(load_checkpoint(path)["s"]) == 2.0
