import numpy as np
import pytest

from histopet.autodiff import Tensor
from histopet.io import read_checkpoint
from histopet.network import NetworkConfig, build_network, forward
from histopet.training import (AugmentConfig, AugmentParams, IncompatibleCheckpointError, LrSchedule,
                               OptimizerState, TrainConfig, TrainConfigError, TrainingDiverged, TrainingSample,
                               adam_step, augment, cyclic_lr, fine_tune, global_scales, load_checkpoint,
                               make_batch, moving_average, save_checkpoint, train)

TINY = NetworkConfig(base_channels=2, resolution_levels=2)


@pytest.fixture
def dataset(rng):
    out = []
    for _ in range(3):
        t = rng.random((2, 16, 16)) * 100
        out.append(TrainingSample((t + rng.normal(size=t.shape)).astype(np.float32),
                                  np.full(t.shape, 0.0096, np.float32), t.astype(np.float32)))
    return out


def _quick(**kw):
    base = dict(iterations=6, crop=(16, 16), crop_depth=None, augment=False, lr_lower=1e-3, lr_upper=1e-2,
                samples_per_epoch=4, prefetch=0)
    base.update(kw)
    return TrainConfig(**base)


# --- optimizer and schedule ------------------------------------------------------------

def test_adam_matches_hand_computation():
    p = Tensor(np.array([1.0, -2.0]), True)
    st = OptimizerState()
    g1, g2 = np.array([0.5, -1.0]), np.array([0.1, 0.2])
    adam_step([p], [g1], st, 0.1)
    # first step moves each coordinate by lr * sign(g) (up to eps)
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)
    after1 = p.data.copy()
    adam_step([p], [g2], st, 0.1)
    m = 0.5 * (0.5 * g1) + 0.5 * g2
    v = 0.999 * (0.001 * g1 ** 2) + 0.001 * g2 ** 2
    step = 0.1 * (m / 0.75) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    np.testing.assert_allclose(p.data, after1 - step, rtol=1e-12)
    assert st.step == 2


def test_adam_rejects_nonfinite():
    p = Tensor(np.zeros(2), True)
    with pytest.raises(TrainingDiverged):
        adam_step([p], [np.array([np.nan, 0.0])], OptimizerState(), 0.1)


def test_cyclic_lr_shape():
    s = LrSchedule(1.0, 3.0, cycle=10, gamma=0.5)
    assert cyclic_lr(0, s) == 1.0
    assert cyclic_lr(5, s) == 3.0
    assert cyclic_lr(10, s) == 1.0
    assert cyclic_lr(15, s) == 2.0  # amplitude halves in the second cycle
    assert cyclic_lr(2, s) == pytest.approx(1.8)
    with pytest.raises(ValueError):
        cyclic_lr(-1, s)
    with pytest.raises(TrainConfigError):
        LrSchedule(2.0, 1.0)


# --- augmentation and batches -------------------------------------------------------------

def test_augment_shares_geometry(rng):
    t = rng.random((3, 16, 16))
    s = TrainingSample(t, t.copy(), t.copy())
    out = augment(s, (2, 8, 8), AugmentParams(angle=17.0, flip_h=True, flip_v=True, scale=1.5, crop=(1, 2, 3)))
    np.testing.assert_allclose(out.histo, 1.5 * out.mu)
    np.testing.assert_allclose(out.target, out.histo)
    assert out.mu.shape == (2, 8, 8)
    flipped = augment(s, None, AugmentParams(flip_h=True))
    np.testing.assert_array_equal(flipped.mu, t[:, :, ::-1])
    centred = augment(s, (3, 8, 8), AugmentParams())
    np.testing.assert_array_equal(centred.mu, t[:, 4:12, 4:12])


def test_augment_rotation_preserves_centre_mass(rng):
    t = np.zeros((1, 32, 32))
    t[0, 12:20, 12:20] = 1.0
    out = augment(TrainingSample(t, t, t), None, AugmentParams(angle=30.0))
    assert out.mu.sum() == pytest.approx(64.0, rel=0.02)
    with pytest.raises(TrainConfigError):
        augment(TrainingSample(t, t, t), (1, 40, 40), AugmentParams())


def test_augment_draws_are_seeded(rng):
    t = rng.random((2, 16, 16))
    s = TrainingSample(t, t, t)
    a = augment(s, (2, 8, 8), rng=3)
    b = augment(s, (2, 8, 8), rng=3)
    np.testing.assert_array_equal(a.histo, b.histo)
    off = augment(s, (2, 8, 8), rng=3, cfg=AugmentConfig(enabled=False))
    assert set(np.unique(np.isin(off.histo, t))) == {True}  # crop only


def test_batches_are_pure_functions_of_step(dataset):
    cfg = _quick(augment=True, crop=(8, 8), batch_size=2)
    a, b = make_batch(dataset, cfg, 5), make_batch(dataset, cfg, 5)
    assert a[0].shape == (2, 2, 2, 8, 8) and a[1].shape == (2, 1, 2, 8, 8)
    np.testing.assert_array_equal(a[0], b[0])
    assert not np.array_equal(a[0], make_batch(dataset, cfg, 6)[0])
    cyc = _quick(sampling="cycle", batch_size=2)
    np.testing.assert_array_equal(make_batch(dataset, cyc, 1)[1][0, 0], dataset[2].target)
    np.testing.assert_array_equal(make_batch(dataset, cyc, 1)[1][1, 0], dataset[0].target)


def test_train_config_validation():
    for kw in (dict(batch_size=0), dict(normalize="x"), dict(sampling="x"), dict(iterations=-1)):
        with pytest.raises(TrainConfigError):
            TrainConfig(**kw)
    cfg = TrainConfig(samples_per_epoch=100, batch_size=4, epochs=3, lr_cycle_epochs=2)
    assert cfg.total_iterations == 75 and cfg.schedule().cycle == 50
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(TrainConfigError):
        TrainConfig.from_dict({"nope": 1})


def test_global_scales(dataset):
    s = global_scales(dataset)
    assert s["output_scale"] == pytest.approx(np.mean([d.target.max() for d in dataset]))
    assert s["mu_scale"] == pytest.approx(0.0096)


# --- the loop ---------------------------------------------------------------------------

def test_training_is_deterministic_and_prefetch_invariant(dataset):
    a = train(dataset, TINY, _quick(augment=True))
    b = train(dataset, TINY, _quick(augment=True, prefetch=2))
    assert [r["total"] for r in a.history] == [r["total"] for r in b.history]
    for p, q in zip(a.model.parameters(), b.model.parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    assert [r["step"] for r in a.history] == list(range(6))
    assert a.history[0]["alpha"] == 0.5 and a.history[1]["alpha"] != 0.5


def test_resume_equals_uninterrupted(dataset, tmp_path):
    full = train(dataset, TINY, _quick(iterations=6))
    first = train(dataset, TINY, _quick(iterations=3, checkpoint_dir=str(tmp_path)))
    model, opt, extra = load_checkpoint(first.last_checkpoint)
    from histopet.loss import LossBalancer
    rest = train(dataset, train_config=_quick(iterations=6), model=model, optimizer=opt,
                 balancer=LossBalancer.from_state(extra["balancer"]), start_step=extra["step"])
    assert [r["total"] for r in first.history + rest.history] == pytest.approx(
        [r["total"] for r in full.history], rel=1e-12)


def test_periodic_checkpoints(dataset, tmp_path):
    res = train(dataset, TINY, _quick(iterations=4, checkpoint_every=2, checkpoint_dir=str(tmp_path)))
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["final.hnet", "step0000002.hnet", "step0000004.hnet"]
    ck = read_checkpoint(res.last_checkpoint)
    assert ck["optimizer"][0] == 4 and ck["extra"]["step"] == 4


def test_normalize_sets_scales(dataset):
    res = train(dataset, TINY, _quick(iterations=1, normalize="global"))
    assert res.model.config.output_scale == pytest.approx(global_scales(dataset)["output_scale"])


def test_divergence_is_reported(dataset):
    bad = [TrainingSample(s.histo, s.mu, np.full_like(s.target, np.nan)) for s in dataset]
    with pytest.raises(TrainingDiverged):
        train(bad, TINY, _quick(iterations=2))


def test_crop_must_fit_divisor(dataset):
    with pytest.raises(TrainConfigError):
        train(dataset, NetworkConfig(base_channels=2, resolution_levels=3), _quick(crop=(14, 14)))


def test_fine_tune_starts_from_base(dataset, tmp_path):
    base = train(dataset, TINY, _quick(iterations=3, checkpoint_dir=str(tmp_path)))
    ft = fine_tune(base.last_checkpoint, dataset, _quick(iterations=2))
    assert ft.optimizer.step == 2 and ft.history[0]["alpha"] == 0.5
    x = Tensor(np.stack([dataset[0].histo, dataset[0].mu])[None].astype(np.float64))
    first = forward(base.model, x).data
    # a zero learning rate leaves the copied weights untouched
    frozen = fine_tune(base.model, dataset, _quick(iterations=1, lr_lower=1e-30, lr_upper=1e-30))
    np.testing.assert_allclose(forward(frozen.model, x).data, first, rtol=1e-9)
    with pytest.raises(IncompatibleCheckpointError):
        fine_tune(base.last_checkpoint, dataset, _quick(), net_config=NetworkConfig(base_channels=4))


def test_moving_average():
    np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    assert moving_average([1.0], 2).size == 0


def test_save_checkpoint_without_optimizer(tmp_path):
    m = build_network(TINY)
    save_checkpoint(tmp_path / "m.hnet", m)
    model, opt, extra = load_checkpoint(tmp_path / "m.hnet")
    assert opt is None and extra["step"] == 0
