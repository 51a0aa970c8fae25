import math

import numpy as np
import pytest

import gfd


def test_overlaps():
    assert gfd.iobb((0, 0, 10, 10), (0, 0, 20, 20)) == 1.0
    assert gfd.iobb((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(0.5)
    assert gfd.iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)
    with pytest.raises(gfd.ValidationError):
        gfd.iobb((1, 1, 1, 5), (0, 0, 10, 10))


def test_nms_and_box_coding():
    boxes = [(0, 0, 5, 5), (0, 0, 5, 5), (10, 10, 20, 20)]
    assert gfd.nms(boxes, [0.8, 0.9, 0.1], 0.5) == [1, 2]
    anchor = (0, 0, 10, 10)
    target = (2, 3, 14, 9)
    back = gfd.decode_box(anchor, gfd.encode_box(anchor, target))
    assert back == pytest.approx(target)


def test_fixations_and_heatmap():
    samples = [(t, 100.0, 100.0) for t in range(0, 310, 10)]
    fx = gfd.detect_fixations(samples, 25.0, 100.0)
    assert len(fx) == 1
    assert fx[0][:2] == (100.0, 100.0)
    assert gfd.detect_fixations([], 25.0, 100.0) == []

    heat = gfd.render_heatmap([(32, 32, 0, 250)], 64, 64, 25 * 64 / 512)
    assert heat.shape == (64, 64)
    assert heat.max() == 1.0
    assert np.unravel_index(heat.argmax(), heat.shape) == (32, 32)
    assert not gfd.render_heatmap([], 8, 8, 2.0).any()


def test_metrics_and_table():
    gts = [(0, (0, 0, 10, 10))]
    assert gfd.average_precision([(0, (0, 0, 10, 10), 0.3)], gts) == 1.0
    assert gfd.average_precision([(0, (30, 30, 40, 40), 0.9), (0, (0, 0, 10, 10), 0.8)], gts) == 0.5
    assert gfd.average_precision([(0, (0, 0, 10, 10), 0.3)], []) is None
    assert gfd.average_recall([], gts) == 0.0

    table = gfd.table_report(
        {
            "enlarged_cardiac_silhouette": (0.429326, 0.810000),
            "atelectasis": (0.125410, 0.529412),
            "pleural_abnormality": (0.043422, 0.226519),
            "consolidation": (0.113867, 0.308642),
            "pulmonary_edema": (0.030728, 0.410959),
        }
    )
    assert f"{table['average_ap']:.6f}" == "0.148551"
    assert f"{table['average_ar']:.6f}" == "0.457106"
    assert "| AP@[IoBB=0.50] | AR@[IoBB=0.50] |" in table["markdown"]


def test_train_infer_evaluate(tmp_path):
    data = tmp_path / "data"
    gfd.synth(str(data), n=12, size=64, seed=3)
    model, curve = gfd.train(data, tmp_path / "run", epochs=1, seed=3)
    for step in curve["steps"]:
        assert step["total"] == step["cls"] + step["bbox"] + step["mask"]
    assert (tmp_path / "run" / "checkpoint_last.json").exists()

    reading = sorted((data / "readings").iterdir())[0]
    image = gfd.load_image(reading)
    assert image.shape == (64, 64)
    dets = model.infer(image)
    for d in dets:
        assert d["mask"].shape == (7, 7)
        assert 0.0 <= d["score"] <= 1.0

    loaded = gfd.Detector.load(tmp_path / "run" / "checkpoint_last.json")
    assert [d["box"] for d in loaded.infer(image)] == [d["box"] for d in dets]
    report = gfd.evaluate(loaded, data, kind="iou")
    assert "AP@[IoU=0.50]" in report["markdown"]


def test_fusion_identity():
    image_only = gfd.Detector('{"seed": 5}')
    fused = gfd.Detector('{"seed": 5, "use_fixations": true, "fusion_mode": "mul", "fusion_point": "input"}')
    rng = np.random.default_rng(0)
    image = rng.random((64, 64))
    a = image_only.infer(image)
    b = fused.infer(image, np.ones((64, 64)))
    assert [d["box"] for d in a] == [d["box"] for d in b]
    assert [d["score"] for d in a] == [d["score"] for d in b]


def test_gradcheck():
    errors = gfd.gradcheck(0)
    assert "model/rpn.conv" in errors
    assert max(errors.values()) < 1e-4
    assert all(math.isfinite(v) for v in errors.values())


def test_bad_config_is_validation_error():
    with pytest.raises(gfd.ValidationError):
        gfd.Detector('{"img_size": 30}')
    with pytest.raises(ValueError):
        gfd.Detector('{"no_such_key": 1}')
