import numpy as np
import pytest

from gmark.errors import BadMagicError, BadVersionError, PayloadError, TruncatedError
from gmark.fusion import (
    FuserModel,
    FuserTrainConfig,
    load_fuser,
    save_fuser,
    train_fuser,
    training_accuracy,
)
from gmark.nn import numerical_gradient, sigmoid
from gmark.stats import evaluate


def _cluster(rng, center, n, spread=0.1):
    return rng.standard_normal((n, 2)) * spread + np.asarray(center)


def test_separable_clusters_reach_full_accuracy():
    rng = np.random.default_rng(0)
    pos = _cluster(rng, (1.0, 1.0), 100)
    neg = _cluster(rng, (-1.0, -1.0), 100)
    model = train_fuser(FuserTrainConfig(seed=0), pos, neg)
    assert training_accuracy(model, pos, neg) == 1.0


def test_indistinguishable_classes_stay_near_chance():
    rng = np.random.default_rng(1)
    pos = _cluster(rng, (0.0, 0.0), 200, spread=1.0)
    neg = _cluster(rng, (0.0, 0.0), 200, spread=1.0)
    model = train_fuser(FuserTrainConfig(seed=1), pos, neg)
    assert 0.4 <= training_accuracy(model, pos, neg) <= 0.6


def test_zero_weight_model_outputs_half():
    m = FuserModel(hidden=16, seed=0)
    for p in m.params:
        p[...] = 0.0
    assert m.score(123.0, -456.0) == 0.5


def test_monotone_on_separable():
    rng = np.random.default_rng(2)
    model = train_fuser(
        FuserTrainConfig(seed=2), _cluster(rng, (1.0, 1.0), 100), _cluster(rng, (-1.0, -1.0), 100)
    )
    assert model.score(1.0, 1.0) > model.score(-1.0, -1.0)


def test_score_range_and_finite_check():
    m = FuserModel(seed=3)
    assert 0.0 < m.score(5.0, -3.0) < 1.0
    with pytest.raises(ValueError):
        m.score(float("nan"), 0.0)
    with pytest.raises(ValueError):
        m.score(float("inf"), 0.0)


def test_empty_class_rejected():
    with pytest.raises(ValueError):
        train_fuser(FuserTrainConfig(), np.zeros((0, 2)), np.ones((3, 2)))


def test_degenerate_dimension_rejected():
    pos = np.column_stack([np.ones(10), np.arange(10)])
    neg = np.column_stack([np.ones(10), -np.arange(1, 11)])
    with pytest.raises(ValueError):
        train_fuser(FuserTrainConfig(), pos, neg)


def test_standardization_invariance_at_decision_cut():
    rng = np.random.default_rng(4)
    pos = _cluster(rng, (2.0, -1.0), 150, spread=0.5)
    neg = _cluster(rng, (-2.0, 1.0), 150, spread=0.5)
    cfg = FuserTrainConfig(seed=5)
    base = train_fuser(cfg, pos, neg)
    a = np.array([3.0, 0.25])
    b = np.array([-7.0, 11.0])
    scaled = train_fuser(cfg, pos * a + b, neg * a + b)
    grid = rng.standard_normal((200, 2)) * 2.0
    d1 = base.score_many(grid) >= 0.5
    d2 = scaled.score_many(grid * a + b) >= 0.5
    assert np.array_equal(d1, d2)


def test_gradient_check():
    rng = np.random.default_rng(6)
    m = FuserModel(hidden=8, seed=7)
    m.mean = np.array([0.5, -0.5])
    m.std = np.array([2.0, 3.0])
    pairs = rng.standard_normal((5, 2))
    y = (rng.random(5) < 0.5).astype(np.float64)

    def f():
        from gmark.nn import bce_with_logits

        return bce_with_logits(m.logits(pairs), y)

    cache = {}
    logits = m.logits(pairs, cache)
    grads = m.backward(cache, (sigmoid(logits) - y) / len(y))
    rng2 = np.random.default_rng(8)
    for _ in range(20):
        pi = int(rng2.integers(len(m.params)))
        arr, g = m.params[pi], grads[pi]
        idx = tuple(int(rng2.integers(d)) for d in arr.shape)
        num = numerical_gradient(f, arr, idx, eps=1e-3)
        ana = float(g[idx])
        assert abs(num - ana) / max(abs(num), abs(ana), 1e-8) < 1e-3


def test_fused_auc_dominates_singles_on_synthetic_scores():
    # one informative dimension per class structure; fusion should not lose
    rng = np.random.default_rng(9)
    n = 300
    pos = np.column_stack([rng.normal(0.0, 1.0, n), rng.normal(3.0, 1.0, n)])
    neg = np.column_stack([rng.normal(0.0, 1.0, n), rng.normal(0.0, 1.0, n)])
    model = train_fuser(FuserTrainConfig(seed=10), pos[:150], neg[:150])
    fused_pos = model.score_many(pos[150:])
    fused_neg = model.score_many(neg[150:])
    _, auc_fused = evaluate(fused_pos, fused_neg)
    _, auc_s = evaluate(pos[150:, 0], neg[150:, 0])
    _, auc_f = evaluate(pos[150:, 1], neg[150:, 1])
    assert auc_fused >= max(auc_s, auc_f) - 0.01


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    model = train_fuser(
        FuserTrainConfig(seed=12), _cluster(rng, (1.0, 0.5), 50), _cluster(rng, (-1.0, -0.5), 50)
    )
    p = tmp_path / "fuser.gmfu"
    save_fuser(model, p)
    back = load_fuser(p)
    for _ in range(100):
        rs, rf = rng.standard_normal(2) * 5
        assert abs(model.score(rs, rf) - back.score(rs, rf)) < 1e-9


def test_load_errors(tmp_path):
    p = tmp_path / "fuser.gmfu"
    save_fuser(FuserModel(seed=0), p)
    blob = bytearray(p.read_bytes())
    blob[:4] = b"XXXX"
    p.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        load_fuser(p)
    save_fuser(FuserModel(seed=0), p)
    blob = bytearray(p.read_bytes())
    blob[4] = 77
    p.write_bytes(bytes(blob))
    with pytest.raises(BadVersionError):
        load_fuser(p)
    save_fuser(FuserModel(seed=0), p)
    blob = p.read_bytes()
    p.write_bytes(blob[:40])
    with pytest.raises(TruncatedError):
        load_fuser(p)
    save_fuser(FuserModel(seed=0), p)
    blob = bytearray(p.read_bytes())
    blob[30] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(PayloadError):
        load_fuser(p)
