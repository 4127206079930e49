import json
import shutil
from pathlib import Path

import cv2
import jsonschema
import numpy as np
import pytest

from centerface.cli import main
from centerface.codec import load_targets
from centerface.core import Box, Detection, FaceAnnotation, LandmarkSet, iou
from centerface.documents import (
    ImageResult,
    PlantedImage,
    load_schema,
    read_document,
    write_document,
    write_plants,
)
from oracles import disjoint_faces, random_landmarks

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def plants(tmp_path):
    rng = np.random.default_rng(0)
    images = []
    for i, (w, h) in enumerate([(320, 240), (200, 300), (256, 256)]):
        faces = [
            FaceAnnotation(f.box, random_landmarks(rng, f.box), True) for f in disjoint_faces(rng, w, h, 4)
        ]
        images.append(PlantedImage(f"img{i}.jpg", w, h, faces))
    path = tmp_path / "plants.json"
    write_plants(path, images)
    return path, images


def run_detect(tmp_path, plants_path, *extra):
    out = tmp_path / "dets.json"
    code = main(["detect", "--backend", "synthetic", "--plant", str(plants_path), "--output", str(out), *extra])
    return code, out


def test_detect_synthetic_recovers_plants(tmp_path, plants):
    path, images = plants
    code, out = run_detect(tmp_path, path)
    assert code == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, load_schema())
    results = {r.path: r for r in read_document(out)}
    for im in images:
        dets = results[im.path].detections
        assert len(dets) == len(im.faces)
        for f in im.faces:
            best = max(dets, key=lambda d: iou(d.box, f.box))
            assert iou(best.box, f.box) >= 0.99
            np.testing.assert_allclose(best.landmarks.as_array(), f.landmarks.as_array(), atol=1e-3)


def test_detect_then_eval_is_perfect(tmp_path, plants, capsys):
    path, _ = plants
    _, out = run_detect(tmp_path, path, "--scales", "0.5,1.0", "--flip")
    metrics = tmp_path / "m.json"
    assert main(["eval", str(out), str(path), "--json", str(metrics), "--curve-out", str(tmp_path / "c")]) == 0
    assert json.loads(metrics.read_text())["ap"] == 1.0
    assert "AP            1.0000" in capsys.readouterr().out
    assert (tmp_path / "c_pr.csv").read_text().startswith("# curve=pr")
    assert (tmp_path / "c_roc.csv").exists()


def test_detect_threads_match_serial(tmp_path, plants):
    path, _ = plants
    _, one = run_detect(tmp_path, path)
    serial = json.loads(one.read_text())["images"]
    out = tmp_path / "par.json"
    main(["detect", "--backend", "synthetic", "--plant", str(path), "--output", str(out), "--threads", "3"])
    assert json.loads(out.read_text())["images"] == serial


def test_detect_empty_dir(tmp_path, plants):
    path, _ = plants
    empty = tmp_path / "empty"
    empty.mkdir()
    code, out = run_detect(tmp_path, path, str(empty))
    assert code == 0
    assert json.loads(out.read_text())["images"] == []


def test_detect_needs_model(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("CENTERFACE_MODEL", raising=False)
    assert main(["detect", str(tmp_path)]) == 2
    assert "no model" in capsys.readouterr().err


def test_detect_unreadable_model_reports_per_file(tmp_path):
    img = tmp_path / "a.png"
    cv2.imwrite(str(img), np.zeros((32, 32, 3), np.uint8))
    bad = tmp_path / "bad.onnx"
    bad.write_bytes(b"not a model")
    out = tmp_path / "d.json"
    assert main(["detect", str(img), "--model", str(bad), "--output", str(out)]) == 1
    (entry,) = json.loads(out.read_text())["images"]
    assert entry["error"] and entry["detections"] == []


def test_detect_partial_failure(tmp_path, plants):
    path, _ = plants
    code, out = run_detect(tmp_path, path, "img0.jpg", "unknown.jpg")
    assert code == 1
    errors = [im["error"] for im in json.loads(out.read_text())["images"]]
    assert errors[0] is None and "unknown.jpg" in errors[1]


def write_preds(path, by_image):
    write_document(path, [ImageResult(p, dets) for p, dets in by_image.items()])


def write_gt(path, by_image):
    write_plants(path, [PlantedImage(p, 100, 100, [FaceAnnotation(b) for b in boxes]) for p, boxes in by_image.items()])


def test_eval_hand_case(tmp_path):
    gt = {"a.jpg": [Box(0, 0, 10, 10), Box(50, 50, 60, 60)]}
    preds = {"a.jpg": [Detection(Box(0, 0, 10, 10), 0.9), Detection(Box(80, 80, 90, 90), 0.95)]}
    write_gt(tmp_path / "gt.json", gt)
    write_preds(tmp_path / "p.json", preds)
    assert main(["eval", str(tmp_path / "p.json"), str(tmp_path / "gt.json"), "--json", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text())["ap"] == 0.25


def test_eval_empty_predictions(tmp_path):
    write_gt(tmp_path / "gt.json", {"a.jpg": [Box(0, 0, 10, 10)]})
    write_preds(tmp_path / "p.json", {"a.jpg": []})
    main(["eval", str(tmp_path / "p.json"), str(tmp_path / "gt.json"), "--json", str(tmp_path / "m.json")])
    assert json.loads((tmp_path / "m.json").read_text())["ap"] == 0.0


def test_eval_path_mismatch_is_listed(tmp_path, capsys):
    write_gt(tmp_path / "gt.json", {"a.jpg": [Box(0, 0, 10, 10)], "b.jpg": [Box(0, 0, 10, 10)]})
    write_preds(tmp_path / "p.json", {"root/a.jpg": [Detection(Box(0, 0, 10, 10), 0.9)], "c.jpg": []})
    main(["eval", str(tmp_path / "p.json"), str(tmp_path / "gt.json"), "--json", str(tmp_path / "m.json")])
    err = capsys.readouterr().err
    assert "b.jpg" in err and "c.jpg" in err
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["ap"] == 1.0 and m["images"] == 1


def test_eval_wider_ground_truth_and_subset(tmp_path):
    (tmp_path / "gt.txt").write_text("a.jpg\n2\n0 0 10 10 0 0 0 0 0 0\n50 50 10 10 0 0 0 0 0 0\n")
    write_preds(tmp_path / "p.json", {"a.jpg": [Detection(Box(0, 0, 10, 10), 0.9), Detection(Box(50, 50, 60, 60), 0.8)]})
    (tmp_path / "subset.txt").write_text("# keep only the first face\na.jpg 0\n")
    args = ["eval", str(tmp_path / "p.json"), str(tmp_path / "gt.txt"), "--json", str(tmp_path / "m.json")]
    main(args)
    assert json.loads((tmp_path / "m.json").read_text())["total_gt"] == 2
    main(args + ["--subset-filter", str(tmp_path / "subset.txt")])
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["total_gt"] == 1 and m["ap"] == 1.0


def test_config_precedence_and_dump(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[detect]\nscore_thresh = 0.2\ntop_k = 50\n")
    assert main(["detect", "--config", str(cfg), "--top-k", "7", "--dump-config"]) == 0
    out = capsys.readouterr().out
    assert "score_thresh = 0.2" in out
    assert "top_k = 7" in out
    assert "nms_iou = 0.3" in out and "vote_iou = 0.4" in out


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[detect]\nbogus = 1\n")
    assert main(["detect", "--config", str(cfg), "--dump-config"]) == 2
    cfg.write_text("[detect]\ntop_k = many\n")
    assert main(["detect", "--config", str(cfg), "--dump-config"]) == 2
    assert main(["detect", "--config", str(tmp_path / "nope.ini"), "--dump-config"]) == 2


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    assert main(["bench", "--backend", "synthetic", "--sizes", "64by64"]) == 2


def test_bench_synthetic_report(tmp_path, capsys):
    out = tmp_path / "b.json"
    code = main(["bench", "--backend", "synthetic", "--sizes", "640x480,1280x720,1920x1080",
                 "--iters", "1", "--warmup", "0", "--json", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    for label in ("640*480", "1280*720", "1920*1080"):
        assert label in text
    for phase in ("preprocess", "backend", "decode", "postprocess", "total"):
        assert phase in text
    report = json.loads(out.read_text())
    assert [r["iterations"] for r in report["results"]] == [1, 1, 1]
    assert report["warmup"] == 0


def test_bench_phase_sum_close_to_total(tmp_path):
    out = tmp_path / "b.json"
    main(["bench", "--backend", "synthetic", "--sizes", "640x480", "--iters", "5", "--warmup", "1",
          "--json", str(out)])
    (res,) = json.loads(out.read_text())["results"]
    phase_sum = sum(p["mean"] for p in res["phases"].values())
    assert phase_sum == pytest.approx(res["total"]["mean"], rel=0.05)


def test_bench_model_failure_names_phase(tmp_path, caplog):
    bad = tmp_path / "bad.onnx"
    bad.write_bytes(b"junk")
    assert main(["bench", "--model", str(bad), "--sizes", "64x64", "--iters", "1", "--warmup", "0"]) == 1
    assert "aborted during backend setup" in caplog.text


def one_detection_doc(tmp_path, score=0.95):
    src = tmp_path / "overlay_source.png"
    shutil.copy(FIXTURES / "overlay_source.png", src)
    pts = np.array([[22, 26], [38, 26], [30, 34], [24, 42], [36, 42]], float)
    write_document(tmp_path / "d.json", [ImageResult(str(src), [Detection(Box(10, 12, 50, 52), score, LandmarkSet.from_array(pts))])])
    return src


def test_visualize_matches_golden(tmp_path):
    one_detection_doc(tmp_path)
    assert main(["visualize", str(tmp_path / "d.json"), "--out-dir", str(tmp_path / "o")]) == 0
    got = cv2.imread(str(tmp_path / "o" / "overlay_source.png"))
    golden = cv2.imread(str(FIXTURES / "overlay_golden.png"))
    assert np.array_equal(got, golden)


def test_visualize_threshold_above_one_copies(tmp_path):
    src = one_detection_doc(tmp_path)
    main(["visualize", str(tmp_path / "d.json"), "--out-dir", str(tmp_path / "o"), "--score-thresh", "1.1"])
    assert (tmp_path / "o" / "overlay_source.png").read_bytes() == src.read_bytes()


def test_visualize_skips_missing_images(tmp_path, caplog):
    write_document(tmp_path / "d.json", [ImageResult("gone.png", [])])
    assert main(["visualize", str(tmp_path / "d.json"), "--out-dir", str(tmp_path / "o")]) == 1
    assert "gone.png" in caplog.text


def test_encode_writes_containers(tmp_path):
    labels = tmp_path / "label.txt"
    labels.write_text("# a/x.jpg\n10 20 30 40 " + " ".join(["20 30 0"] * 5) + "\n")
    assert main(["encode", "--labels", str(labels), "--size", "64x64", "--out-dir", str(tmp_path / "t")]) == 0
    tm = load_targets((tmp_path / "t" / "a__x.jpg.cftm").read_bytes())
    assert tm.heatmap.shape == (16, 16)
    assert len(tm.pos_index) == 1 and tm.landmark_mask.tolist() == [True]


def test_encode_reads_image_dims(tmp_path):
    cv2.imwrite(str(tmp_path / "i.png"), np.zeros((50, 70, 3), np.uint8))
    (tmp_path / "gt.txt").write_text("i.png\n1\n5 5 20 20 0 0 0 0 0 0\nmissing.png\n1\n5 5 20 20 0 0 0 0 0 0\n")
    code = main(["encode", "--labels", str(tmp_path / "gt.txt"), "--image-root", str(tmp_path), "--out-dir", str(tmp_path / "t")])
    assert code == 1
    tm = load_targets((tmp_path / "t" / "i.png.cftm").read_bytes())
    assert tm.heatmap.shape == (64 // 4, 96 // 4)
