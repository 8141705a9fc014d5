import numpy as np
import pytest

from bridgespot import autodiff as ad
from bridgespot.autodiff import ConfigurationError, DimensionError, Tensor
from bridgespot.bridge import BridgeConfig, BridgeState
from bridgespot.datasynth import ALPHABET, render_scene
from bridgespot.spotter import (BLANK, DetectionPrediction, LossWeights, Spotter, ToyDetector,
                                ToyRecognizer, TrainingAbort, box_iou, column_targets,
                                crop_features, crop_image, crop_region, decode_boxes, detect,
                                detection_loss, detection_targets, greedy_decode, greedy_match,
                                match_for_supervision, nms, recognition_loss, recognize,
                                total_loss)


@pytest.fixture(scope="module")
def models():
    rng = np.random.default_rng(0)
    return ToyDetector(rng=rng), ToyRecognizer(rng=rng)


def test_detector_feature_shape_and_stride_check(models):
    det, _ = models
    f_det, p = detect(det, render_scene(1).image)
    assert f_det.shape == (32, 12, 24)
    assert ((p.scores >= 0) & (p.scores <= 1)).all()
    with pytest.raises(ConfigurationError):
        detect(det, np.zeros((1, 46, 96)))


def test_backbone_is_stem_then_encoder(models):
    det, _ = models
    x = Tensor(np.stack([render_scene(s).image for s in (1, 2)]))
    f_det, raw = det.forward(x)
    f2, raw2 = det.forward_from_stem(det.stem(x))
    np.testing.assert_array_equal(f_det.data, f2.data)
    np.testing.assert_array_equal(raw.data, raw2.data)


def test_decoded_boxes_are_clamped_and_ordered():
    from bridgespot.spotter import DetectorConfig
    cfg = DetectorConfig()
    raw = np.random.default_rng(1).normal(scale=3, size=(2, 5, 12, 24))
    for p in decode_boxes(raw, cfg):
        b = p.boxes
        assert (b[:, 0] < b[:, 2]).all() and (b[:, 1] < b[:, 3]).all()
        assert b[:, [0, 2]].min() >= 0 and b[:, [0, 2]].max() <= cfg.width
        assert b[:, [1, 3]].min() >= 0 and b[:, [1, 3]].max() <= cfg.height
        assert len(p) <= cfg.max_detections


def test_detection_targets_decode_back_to_ground_truth():
    from bridgespot.spotter import DetectorConfig
    cfg = DetectorConfig()
    gt = np.array([[10.0, 6.0, 60.0, 27.0], [20.0, 33.0, 43.0, 40.0]])
    obj, weight, reg, pos = detection_targets([gt], cfg)
    # turn the targets into a "perfect" raw map and decode it
    raw = np.zeros((1, 5, 12, 24))
    raw[0, 0] = np.where(obj[0] > 0, 20.0, -20.0)
    raw[0, 1:] = reg[0]
    (p,) = decode_boxes(raw, cfg)
    assert len(p) == 2
    assert box_iou(p.boxes, gt).max(axis=0).min() == pytest.approx(1.0)
    assert detection_loss(Tensor(raw), (obj, weight, reg, pos)).item() < 1e-6


def test_objectness_is_positive_on_the_centre_block_only():
    from bridgespot.spotter import DetectorConfig
    gt = np.array([[10.0, 6.0, 60.0, 27.0]])
    obj, weight, reg, pos = detection_targets([gt], DetectorConfig())
    r, c = int(16.5 // 4), int(35 // 4)
    expected = np.zeros((12, 24))
    expected[r - 1:r + 2, c - 1:c + 2] = 1
    np.testing.assert_array_equal(obj[0], expected)
    assert (weight == 1).all()  # the rest of the box is an explicit negative
    assert pos[0].sum() > 9  # regression uses the whole central band


def test_non_peak_cells_are_suppressed_before_nms():
    from bridgespot.spotter import DetectorConfig
    cfg = DetectorConfig()
    raw = np.full((1, 5, 12, 24), -20.0)
    raw[0, 1:3] = 0.0
    raw[0, 3:] = np.log(3.0)
    raw[0, 0, 5, 10], raw[0, 0, 5, 11] = 5.0, 4.0  # adjacent cells, boxes barely overlap
    (p,) = decode_boxes(raw, cfg)
    assert len(p) == 1 and p.scores[0] == pytest.approx(1 / (1 + np.exp(-5.0)))


def test_nms_keeps_highest_of_overlapping_pair():
    boxes = np.array([[0, 0, 10, 10], [1, 0, 11, 10], [20, 20, 30, 30.0]])
    keep = nms(boxes, np.array([0.6, 0.9, 0.7]), 0.5)
    assert list(keep) == [1, 2]


def test_full_image_crop_reproduces_image():
    img = np.random.default_rng(2).random((1, 32, 96))
    np.testing.assert_array_equal(crop_region(img, (0, 0, 96, 32), 32, 96), img)


def test_upsampled_crop_preserves_aligned_corners():
    img = np.random.default_rng(3).random((1, 16, 48))
    out = crop_region(img, (0, 0, 48, 16), 32, 96)
    for (r, c), (sr, sc) in {(0, 0): (0, 0), (0, -1): (0, -1), (-1, 0): (-1, 0),
                             (-1, -1): (-1, -1)}.items():
        assert out[0, r, c] == img[0, sr, sc]


def test_stride_aligned_feature_crop_reads_box_cells():
    fmap = np.arange(12 * 24, dtype=float).reshape(1, 12, 24)
    box = (16.0, 8.0, 112.0, 40.0)  # wider than the image so the clamp is exercised
    p = DetectionPrediction(np.array([box]), np.array([0.9]))
    (c_f,), sel = crop_features(Tensor(fmap), p, (48, 96))
    # clamped to x1 = 96 -> feature columns 4..23, rows 2..9
    assert c_f.data[0, 0, 0] == fmap[0, 2, 4]
    assert c_f.data[0, -1, -1] == fmap[0, 9, 23]


def test_degenerate_boxes_skipped_identically_for_both_crops():
    boxes = np.array([[0, 0, 40, 20], [10, 10, 11, 30], [50, 5, 90, 6.5], [5, 5, 60, 40.0]])
    p = DetectionPrediction(boxes, np.full(4, 0.9))
    c_i, si = crop_image(np.zeros((1, 48, 96)), p)
    c_f, sf = crop_features(Tensor(np.zeros((32, 12, 24))), p, (48, 96))
    assert si.kept == sf.kept == [0, 3] and si.skipped == [1, 2]
    assert len(c_i) == len(c_f) == 2


def test_greedy_decode_collapses_repeats_and_blanks():
    ids = [0, 3, 3, 0, 3, 5, 5, 0, 0]
    logits = np.eye(21)[ids][None]
    assert greedy_decode(logits) == [ALPHABET.decode([3, 3, 5])]


def test_recognizer_output_is_a_distribution(models):
    _, rec = models
    logits, texts = recognize(rec, None, np.random.default_rng(4).random((2, 1, 32, 96)))
    p = ad.softmax(logits, -1).data
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-9)
    assert all(len(t) <= 24 for t in texts)
    with pytest.raises(DimensionError):
        recognize(rec, None, np.zeros((1, 1, 32, 64)))


def test_bridge_at_init_gives_identical_logits(models):
    _, rec = models
    bridge = BridgeState(BridgeConfig(), np.random.default_rng(5))
    c_i = np.random.default_rng(6).random((3, 1, 32, 96))
    c_f = Tensor(np.random.default_rng(7).normal(size=(3, 32, 8, 24)))
    plain, _ = recognize(rec, None, c_i)
    bridged, _ = recognize(rec, bridge, c_i, c_f)
    assert plain.data.tobytes() == bridged.data.tobytes()
    with pytest.raises(DimensionError):
        recognize(rec, bridge, c_i)


def test_bridged_spotter_at_init_matches_two_step(models):
    det, rec = models
    images = np.stack([render_scene(s).image for s in range(4)])
    bridge = BridgeState(BridgeConfig(), np.random.default_rng(8))
    a = Spotter(det, rec).spot_batch(images)
    b = Spotter(det, rec, bridge).spot_batch(images)
    assert [x.texts for x in a] == [x.texts for x in b]


def test_column_targets_place_glyphs_under_their_tokens():
    # a 96 px box maps 1:1 onto the crop, so token t is centred on pixel 4t + 1.5
    spans = [(8.0, 18.0), (20.0, 30.0), (80.0, 90.0)]
    labels = column_targets(spans, "AAB", (0.0, 0.0, 96.0, 14.0))
    a, b = ALPHABET.encode("AB")
    assert list(labels[2:5]) == [a] * 3
    assert labels[5] == BLANK  # keeps the repeated A from collapsing
    assert list(labels[6:8]) == [a] * 2
    assert list(labels[20:23]) == [b] * 3
    assert labels[:2].sum() == labels[8:20].sum() == labels[23:].sum() == 0
    assert greedy_decode(np.eye(21)[labels][None]) == ["AAB"]


def test_column_targets_for_empty_text_are_blank():
    assert not column_targets([], "", (0, 0, 10, 10)).any()


def test_matching_contract():
    gt = np.array([[0, 0, 10, 10], [20, 0, 30, 10.0]])
    assert [(p, g, i) for p, g, i in greedy_match(gt, gt)] == [(0, 0, 1.0), (1, 1, 1.0)]
    assert greedy_match(np.array([[50, 50, 60, 60.0]]), gt) == []
    two = np.array([[0, 0, 10, 10], [0, 0, 10, 9.0]])
    assert len(greedy_match(two, gt[:1])) == 1
    m = match_for_supervision(DetectionPrediction(gt[::-1], np.ones(2)), gt, ["AB", "CD"])
    assert [(x.pred, x.target) for x in m] == [(0, "CD"), (1, "AB")]


def test_total_loss_weights_and_abort():
    assert total_loss(0.3, 0.7) == pytest.approx(1.0)
    assert total_loss(0.3, 0.7, LossWeights(1.0, 0.0)) == pytest.approx(0.3)
    with pytest.raises(TrainingAbort, match="step 12"):
        total_loss(float("nan"), 0.1, step=12)


def test_sum_loss_gradient_equals_scaled_recognition_gradient(models):
    _, rec = models
    bridge = BridgeState(BridgeConfig(init_mode="gaussian"), np.random.default_rng(9))
    rng = np.random.default_rng(10)
    f_i = rec.backbone(Tensor(rng.random((2, 1, 32, 96))))
    c_f = Tensor(rng.normal(size=(2, 32, 8, 24)))
    labels = rng.integers(0, 21, size=(2, 24))
    det_loss = Tensor(np.asarray(0.4))  # frozen detector path: a constant

    def grads(build):
        bridge.store.zero_grad()
        build().backward()
        return {n: t.grad.copy() for n, t in bridge.store.trainable()}

    rec_only = grads(lambda: recognition_loss(rec.head(bridge(f_i, c_f)), labels))
    summed = grads(lambda: total_loss(det_loss, recognition_loss(rec.head(bridge(f_i, c_f)),
                                                                 labels), LossWeights(1, 2.5)))
    for n in rec_only:
        np.testing.assert_allclose(summed[n], 2.5 * rec_only[n], rtol=1e-12, atol=1e-15)
