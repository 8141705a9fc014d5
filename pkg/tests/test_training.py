import numpy as np
import pytest

from bridgespot.harness import training as T
from bridgespot.harness.checkpoint import decode, encode
from bridgespot.harness.config import ExperimentConfig
from bridgespot.harness.experiments import RunCache, Runner, compare_paradigms, read_table
from bridgespot.spotter import Spotter, TrainingAbort

TINY = dict(det_train_size=24, rec_train_size=64, bridge_train_size=16, test_size=6,
            det_iters=4, rec_iters=4, bridge_iters=3, finetune_iters=2, e2e_iters=2,
            batch_size=2, rec_batch_size=8, curve_points=3, log_every=0)


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig(seed=5, **TINY)


@pytest.fixture(scope="module")
def splits(cfg):
    return T.splits_for(cfg)


@pytest.fixture(scope="module")
def base(cfg, splits):
    return T.train_detector(cfg, splits), T.train_recognizer(cfg, splits)


def test_lr_schedule_warms_up_then_decays_to_ten_percent():
    assert T.lr_at(0, 1000, 1.0) == pytest.approx(0.01)
    assert T.lr_at(99, 1000, 1.0) == pytest.approx(1.0)
    assert T.lr_at(100, 1000, 1.0) == pytest.approx(1.0)
    assert T.lr_at(1000, 1000, 1.0) == pytest.approx(0.1)
    mid = [T.lr_at(s, 1000, 1.0) for s in range(100, 1001)]
    assert all(a >= b for a, b in zip(mid, mid[1:]))


def test_detector_loss_decreases(cfg, splits):
    res = T.train_detector(cfg.replace(det_iters=40, batch_size=4), splits)
    assert np.mean(res.losses[-5:]) < np.mean(res.losses[:5])


def test_recognizer_loss_decreases(cfg, splits):
    res = T.train_recognizer(cfg.replace(rec_iters=40), splits)
    assert np.mean(res.losses[-5:]) < np.mean(res.losses[:5])


def test_stage_training_is_deterministic(cfg, splits, base):
    again = T.train_detector(cfg, splits)
    assert encode(again.checkpoint) == encode(base[0].checkpoint)
    assert again.losses == base[0].losses


def test_bridge_stage_leaves_frozen_weights_bit_identical(cfg, splits, base):
    det_ckpt, rec_ckpt = base[0].checkpoint, base[1].checkpoint
    system, res = T.train_bridge(det_ckpt, rec_ckpt, cfg, splits)
    out = res.checkpoint
    for name, arr in {**det_ckpt.tensors, **rec_ckpt.tensors}.items():
        if out.frozen[name]:
            assert out.tensors[name].tobytes() == arr.tobytes(), name
    trainable = [n for n, f in out.frozen.items() if not f]
    assert any(n.startswith("bridge.") for n in trainable)
    assert all(n.startswith("bridge.") or "adapter" in n or "norm" in n for n in trainable)
    assert system.store.count(trainable_only=True) < 0.10 * system.store.count()


def test_bridge_stage_does_not_touch_upstream_checkpoints(cfg, splits, base):
    before = encode(base[0].checkpoint), encode(base[1].checkpoint)
    T.train_bridge(base[0].checkpoint, base[1].checkpoint, cfg, splits)
    assert (encode(base[0].checkpoint), encode(base[1].checkpoint)) == before


def test_untrained_bridge_reproduces_two_step_predictions(cfg, splits, base):
    det_ckpt, rec_ckpt = base[0].checkpoint, base[1].checkpoint
    system, _ = T.train_bridge(det_ckpt, rec_ckpt, cfg, splits, iters=0)
    plain = Spotter(T.load_detector(det_ckpt), T.load_recognizer(rec_ckpt))
    images = np.stack([s.image for s in splits["test"][:4]])
    for a, b in zip(plain.spot_batch(images), system.spotter().spot_batch(images)):
        np.testing.assert_array_equal(a.boxes, b.boxes)
        assert a.texts == b.texts


def test_system_checkpoint_round_trip(cfg, splits, base):
    _, res = T.train_bridge(base[0].checkpoint, base[1].checkpoint, cfg, splits)
    ckpt = decode(encode(res.checkpoint))
    system = T.load_system(ckpt)
    assert system.store.count(trainable_only=True) == sum(
        ckpt.tensors[n].size for n, f in ckpt.frozen.items() if not f)
    for n, arr in ckpt.tensors.items():
        assert system.store[n].data.tobytes() == arr.tobytes()


def test_curve_has_requested_points(cfg, splits, base):
    calls = []
    _, res = T.train_bridge(base[0].checkpoint, base[1].checkpoint, cfg, splits,
                            evaluator=lambda s: calls.append(1) or 0.5)
    assert [k for k, _ in res.curve] == [0, 1, 2, 3]
    assert len(calls) == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(cfg, splits):
    with pytest.raises(TrainingAbort):
        T.train_detector(cfg.replace(det_lr=1e12, det_iters=30), splits)


def test_end_to_end_trains_every_parameter(cfg, splits):
    system, res = T.train_end_to_end(cfg, splits)
    assert system.store.count(trainable_only=True) == system.store.count()
    assert res.checkpoint.kind == "end_to_end"


def test_compare_table_is_reproducible(cfg, tmp_path):
    a = compare_paradigms(cfg, tmp_path / "a", RunCache())
    b = compare_paradigms(cfg, tmp_path / "b", RunCache())
    text_a = (tmp_path / "a" / "compare.csv").read_bytes()
    assert text_a == (tmp_path / "b" / "compare.csv").read_bytes()
    table = read_table(tmp_path / "a" / "compare.csv")
    assert list(table) == ["two_step", "two_step_finetune", "end_to_end", "bridge"]
    assert table["two_step"]["trainable_params"] == table["two_step"]["total_params"]
    assert table["bridge"]["trainable_params"] < table["bridge"]["total_params"]
    assert a and b


def test_disk_cache_reuses_stages(cfg, tmp_path):
    runner = Runner(cfg, RunCache(tmp_path))
    first = runner.detector()
    again = Runner(cfg, RunCache(tmp_path)).detector()
    assert encode(first.checkpoint) == encode(again.checkpoint)
    assert first.losses == again.losses


def test_crop_augmentation_never_moves_glyphs_between_columns():
    crops = np.zeros((6, 1, 32, 96))
    crops[:, :, 12:20, 30:41] = 1.0
    out = T.augment_word_crops(crops, np.random.default_rng(0))
    assert out.shape == crops.shape and out.min() >= 0 and out.max() <= 1
    ink_cols = (out > 0.4).any(axis=(1, 2))
    assert (ink_cols[:, 30:41].all()) and not ink_cols[:, :30].any() and not ink_cols[:, 41:].any()
    rows = [np.nonzero((o[0] > 0.4).any(axis=1))[0] for o in out]
    assert all(abs(r[0] - 12) <= 2 and len(r) == 8 for r in rows)


def test_memoized_detector_stem_matches_recomputation(cfg, splits, base):
    det = T.load_detector(base[0].checkpoint)
    det.store.freeze("*")
    assert det.stem_frozen()
    data, cache = splits["bridge_train"], {}
    first = T._stem_tokens(det, data, np.array([3, 1, 3]), cache)
    assert sorted(cache) == [1, 3]
    again = T._stem_tokens(det, data, np.array([1, 3]), cache)
    fresh = T._stem_tokens(det, data, np.array([1, 3]), None)
    np.testing.assert_allclose(again.data, fresh.data, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(first.data[0], first.data[2])
    det.store.unfreeze("det.backbone.conv1.*")
    assert not det.stem_frozen()
