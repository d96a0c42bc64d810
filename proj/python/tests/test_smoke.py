import math

import petal
import pytest


def test_primitives():
    assert petal.tiou(0, 10, 5, 15) == pytest.approx(1 / 3)
    assert petal.giou_loss_1d(2, 3, 2, 3) == 0.0
    assert petal.focal_term(0.0, True) == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-12)
    assert petal.lr_schedule(0, 100, 10, 1e-3) == pytest.approx(0.0)


def test_soft_nms_and_ap():
    segs = [petal.ActionSegment(0, 0.9, 0.0, 10.0), petal.ActionSegment(0, 0.8, 1.0, 10.0)]
    kept = petal.soft_nms(segs, sigma=0.5)
    assert kept[0].score == 0.9
    assert kept[1].score < 0.8
    gts = [petal.GroundTruthSegment(0, 0.0, 10.0)]
    assert petal.average_precision(kept, gts, 0.5) == pytest.approx(1.0)
    rep = petal.evaluate({"v": kept}, {"v": gts}, [0.5, 0.7])
    assert rep["average_map"] == pytest.approx(1.0)
    assert set(rep["per_threshold_map"]) == {0.5, 0.7}


def test_validation_errors_map_to_value_error():
    with pytest.raises(ValueError):
        petal.soft_nms([], sigma=0.0)
    cfg = petal.TrainConfig()
    cfg.warmup_epochs = cfg.epochs
    with pytest.raises(petal.ValidationError):
        cfg.validate()


def test_synth_train_infer_eval(tmp_path):
    spec = petal.SyntheticSpec()
    spec.num_videos = 2
    assert petal.synth(tmp_path / "data", spec) == 2
    cfg = petal.TrainConfig()
    cfg.K, cfg.L1, cfg.epochs, cfg.warmup_epochs = 3, 2, 2, 1
    log = petal.train(tmp_path / "data", tmp_path / "run", cfg)
    assert [e["epoch"] for e in log] == [1, 2]
    assert all(math.isfinite(e["mean_loss"]) for e in log)
    dets = petal.infer(tmp_path / "data", tmp_path / "run")
    assert len(dets) == 2
    petal.write_detections(tmp_path / "dets.jsonl", dets)
    back = petal.read_detections(tmp_path / "dets.jsonl")
    assert {k: len(v) for k, v in back.items()} == {k: len(v) for k, v in dets.items()}
    rep = petal.evaluate(back, petal.ground_truth(tmp_path / "data"))
    assert 0.0 <= rep["average_map"] <= 1.0


def test_gradient_suite_runs():
    entries = petal.gradient_suite(0)
    assert entries[-1]["name"] == "end_to_end_loss"
    assert all(e["passed"] for e in entries)
