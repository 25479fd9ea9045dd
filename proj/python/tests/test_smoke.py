import math

import numpy as np
import pytest

import sals


def small_config(n=2, d=8):
    cfg = sals.AttentionConfig(n, d)
    cfg.latent_rank = n * d
    cfg.score_rank = n * d
    cfg.value_bits = 16
    cfg.quant_group = d
    return cfg


def test_tensor_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((5, 7)).astype(np.float32)
    path = str(tmp_path / "a.sals")
    sals.write_tensor(a, path)
    np.testing.assert_array_equal(sals.read_tensor(path), a)


def test_missing_tensor_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        sals.read_tensor(str(tmp_path / "missing.sals"))


def test_calibrate_is_orthonormal_and_sorted():
    keys = np.random.default_rng(1).standard_normal((200, 16)).astype(np.float32)
    U, eig, energy = sals.calibrate(keys, 6)
    assert U.shape == (16, 6)
    np.testing.assert_allclose(U.T @ U, np.eye(6), atol=1e-6)
    assert all(a >= b for a, b in zip(eig, eig[1:]))
    _, _, per_head = sals.calibrate(keys, 6, kind="per_head", num_heads=2)
    assert energy >= per_head - 1e-9 * float((keys.astype(np.float64) ** 2).sum())


def test_rope_matches_rotation_by_hand():
    y = sals.apply_rope(np.array([[1.0, 0.0]], dtype=np.float32), [1], head_dim=2)
    np.testing.assert_allclose(y[0], [math.cos(1.0), math.sin(1.0)], atol=1e-7)


def test_select_topk_keeps_sink_recent_and_best():
    scores = np.array([0.0, 5.0, 1.0, 4.0, 0.0, 0.0])
    assert sals.select_topk(scores, sink=1, critical_budget=2, recent=1) == [0, 1, 3, 5]


def test_quantization_error_bound():
    v = np.random.default_rng(2).standard_normal(64).astype(np.float32)
    back, scales = sals.quantize_roundtrip(v, 4, 16)
    err = np.abs(np.asarray(back) - v.astype(np.float64))
    assert np.all(err <= np.repeat(scales, 16) / 2)


def test_memory_speedup_example():
    assert sals.memory_speedup(0.125, 0.25, 0.25) == pytest.approx(8.0)
    with pytest.raises(ValueError):
        sals.memory_speedup(0.0, 0.25, 0.25)


def test_lossless_decode_matches_full_attention():
    rng = np.random.default_rng(3)
    s, cfg = 24, small_config()
    cfg.recent_window = s
    K, V, Q = (rng.standard_normal((s, 16)).astype(np.float32) for _ in range(3))
    U, _, _ = sals.calibrate(K, 16)
    policy = sals.SelectionPolicy(sink=0, critical_budget=s, recent=1, score_rank=16)
    y, traffic = sals.decode(Q, K, V, U, cfg, policy)
    np.testing.assert_allclose(y, sals.full_attention(Q, K, V, cfg), atol=1e-5)
    assert len(traffic) == s
    assert traffic[-1]["seq_len"] == s


def test_sparse_decode_traffic_is_below_dense():
    rng = np.random.default_rng(4)
    s = 200
    cfg = sals.AttentionConfig(2, 32)
    K, V, Q = (rng.standard_normal((s, 64)).astype(np.float32) for _ in range(3))
    U, _, _ = sals.calibrate(K, cfg.latent_rank)
    policy = sals.SelectionPolicy(sink=4, critical_budget=16, recent=8, score_rank=cfg.score_rank)
    cfg.recent_window = 8
    y, traffic = sals.decode(Q, K, V, U, cfg, policy, layer=2)
    assert np.isfinite(y).all()
    assert traffic[-1]["measured_ratio"] < 0.5
    assert traffic[-1]["measured_ratio"] == traffic[-1]["predicted_ratio"]


def test_invalid_config_raises_value_error():
    cfg = sals.AttentionConfig(2, 8)
    cfg.latent_rank = 0
    with pytest.raises(ValueError):
        cfg.validate()
