import numpy as np
import pytest

from spat.attacks import AttackConfig
from spat.data import Dataset
from spat.losses import LossConfig
from spat.net import NetConfig, init_params
from spat.train import (
    TrainConfig,
    TrainingAborted,
    confusion_matrix,
    evaluate,
    lr_schedule,
    sgd_step,
    train,
)

NATURAL = LossConfig(acc_mode="ce", lam=0.0)


def blobs(seed, n=100, dim=4):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(0.3, 0.05, (n, dim)), rng.normal(0.7, 0.05, (n, dim))])
    return Dataset(np.clip(x, 0, 1), np.repeat([0, 1], n), 2, "blobs")


def small_adversarial(epochs=2, seed=0):
    cfg = NetConfig((4, 12, 6, 2), head_mode="hypersphere", scale_s=5.0)
    tc = TrainConfig(epochs=epochs, batch_size=80, lr_initial=0.1, seed=seed,
                     loss_cfg=LossConfig(), atk_train=AttackConfig.for_training(0.05, steps=3))
    return cfg, tc


def same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, lr_decay_epochs=(5, 3))
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, lr_decay_epochs=(10,))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_sgd_step_arithmetic(rng):
    p = init_params(NetConfig((3, 2)), 0)
    g = p.zeros_like()
    assert same(sgd_step(p, g, 0.5), p)
    g.head_W[:] = rng.standard_normal(g.head_W.shape)
    assert same(sgd_step(p, g, 0.0), p)
    g = p.zeros_like()
    g.head_bias[0] = 2.0
    stepped = sgd_step(p, g, 0.1)
    assert stepped.head_bias[0] == pytest.approx(p.head_bias[0] - 0.2, abs=1e-15)
    assert p.head_bias[0] == 0.0


def test_zero_epochs_and_zero_lr_leave_params_alone():
    data = blobs(0)
    cfg = NetConfig((4, 8, 2))
    p0 = init_params(cfg, 0)
    p, hist = train(p0, data, cfg, TrainConfig(epochs=0, loss_cfg=NATURAL))
    assert hist == [] and same(p, p0)
    p, hist = train(p0, data, cfg, TrainConfig(epochs=3, lr_initial=0.0, loss_cfg=NATURAL))
    assert len(hist) == 3 and same(p, p0)


def test_separable_blobs_are_learned():
    cfg = NetConfig((4, 8, 2))
    accs = []
    for seed in range(3):
        data = blobs(seed)
        p, _ = train(init_params(cfg, seed), data, cfg,
                     TrainConfig(epochs=30, batch_size=32, seed=seed, loss_cfg=NATURAL))
        accs.append(evaluate(p, cfg, blobs(seed + 50))[0])
        assert evaluate(p, cfg, data)[0] > 0.99
    assert np.median(accs) >= 0.95


def test_lr_schedule_in_metrics():
    cfg = NetConfig((4, 2))
    tc = TrainConfig(epochs=6, lr_initial=0.3, lr_decay_factor=10, lr_decay_epochs=(2, 4), loss_cfg=NATURAL)
    _, hist = train(init_params(cfg, 0), blobs(0), cfg, tc)
    expect = [0.3, 0.3, 0.03, 0.03, 0.003, 0.003]
    np.testing.assert_allclose([m.learning_rate for m in hist], expect, rtol=1e-15)
    assert lr_schedule(tc) == [m.learning_rate for m in hist]


def test_metrics_fields():
    cfg, tc = small_adversarial(epochs=2)
    data = blobs(1)
    _, hist = train(init_params(cfg, 0), data, cfg, tc, eval_data=blobs(2), atk_eval=AttackConfig.for_evaluation(0.05))
    for m in hist:
        for v in (m.clean_accuracy, m.robust_accuracy, m.eval_clean_accuracy, m.eval_robust_accuracy):
            assert 0.0 <= v <= 1.0
        assert -1 <= m.mean_cos_true <= 1 and m.wall_ms > 0
        assert set(m.to_dict()) >= {"epoch", "mean_total_loss", "learning_rate"}


def test_evaluate_counts_and_zero_epsilon(rng):
    cfg = NetConfig((4, 8, 2))
    p = init_params(cfg, 1)
    data = blobs(3)
    acc, cm = evaluate(p, cfg, data)
    np.testing.assert_array_equal(cm.sum(axis=1), data.class_counts())
    assert acc == pytest.approx(np.trace(cm) / len(data))
    acc0, cm0 = evaluate(p, cfg, data, AttackConfig(epsilon=0.0, random_start=False, attack_loss="ce_on_adv"))
    assert acc0 == acc and np.array_equal(cm0, cm)


def test_self_surrogate_equals_white_box():
    cfg = NetConfig((4, 8, 2))
    p = init_params(cfg, 1)
    atk = AttackConfig.for_evaluation(0.1)
    white = evaluate(p, cfg, blobs(3), atk)
    black = evaluate(p, cfg, blobs(3), atk, surrogate=(p, cfg))
    assert white[0] == black[0] and np.array_equal(white[1], black[1])


def test_confusion_matrix_hand():
    cm = confusion_matrix(np.array([0, 0, 1, 2]), np.array([0, 1, 1, 1]), 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 1, 0]]


def test_adversarial_training_is_deterministic_across_threads():
    cfg, tc = small_adversarial(epochs=2, seed=3)
    data = blobs(4)
    p0 = init_params(cfg, 3)
    a, ha = train(p0, data, cfg, tc, threads=1)
    b, hb = train(p0, data, cfg, tc, threads=1)
    c, hc = train(p0, data, cfg, tc, threads=8)
    assert same(a, b) and same(a, c)
    strip = lambda h: [{k: v for k, v in m.to_dict().items() if k != "wall_ms"} for m in h]  # noqa: E731
    assert strip(ha) == strip(hc)


def test_non_finite_loss_aborts():
    cfg = NetConfig((4, 8, 2))
    p = init_params(cfg, 0)
    p.head_W[0, 0] = np.nan
    with pytest.raises(TrainingAborted) as info:
        train(p, blobs(0), cfg, TrainConfig(epochs=1, loss_cfg=NATURAL))
    assert info.value.epoch == 0 and info.value.batch_index == 0
    assert "batch_indices" in info.value.dump


def test_train_rejects_mismatched_data():
    with pytest.raises(ValueError, match="features"):
        train(init_params(NetConfig((5, 2)), 0), blobs(0), NetConfig((5, 2)), TrainConfig(loss_cfg=NATURAL))
