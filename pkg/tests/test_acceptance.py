"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line
that is echoed in the pytest terminal summary."""

import json
import math
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from centerface.backend import OnnxBackend, SyntheticBackend, preprocess
from centerface.bench import run_bench
from centerface.cli import main
from centerface.codec import STRIDE, decode_single, encode_targets
from centerface.core import Box, Detection, FaceAnnotation, iou
from centerface.data import load_image
from centerface.decoder import DecodeConfig, OutputHeads, decode_detections, extract_peaks
from centerface.documents import ImageResult, PlantedImage, write_document, write_plants
from centerface.evaluation import average_precision, match_detections
from centerface.losses import LossConfig, focal_center_loss, total_loss
from centerface.pipeline import detect_image
from centerface.postprocess import VOTE_IOU, PostConfig, ViewTransform, box_vote, nms_indices, tta_merge
from oracles import brute_force_peaks, disjoint_faces, nms_reference, random_face, random_landmarks


def test_criterion_1_codec_round_trip(acceptance):
    rng = np.random.default_rng(1)
    W, H = 640, 480
    faces = [random_face(rng, W, H, min_side=8.0, max_side=400.0) for _ in range(1000)]
    worst_box = worst_lm = 0.0
    start = time.process_time()
    for face in faces:
        tm = encode_targets([face], (W, H))
        (_, gx, gy), = tm.pos_index
        box, lms = decode_single(tm.cell_vector(gx, gy), (gx, gy), STRIDE, face.landmarks.valid)
        worst_box = max(worst_box, float(np.max(np.abs(np.subtract(box.as_tuple(), face.box.as_tuple())))))
        v = np.array(face.landmarks.valid)
        if v.any():
            diff = np.abs(lms.as_array()[v] - face.landmarks.as_array()[v])
            worst_lm = max(worst_lm, float(diff.max()))
    elapsed = time.process_time() - start
    ok = worst_box <= 1e-4 and worst_lm <= 1e-3 and elapsed < 10.0
    acceptance(1, ok, f"corner err {worst_box:.2e} px, landmark err {worst_lm:.2e} px, {elapsed:.2f} s")
    assert ok


def _fd_gradient(heads, tm, name, cfg, step=1e-4):
    plane = getattr(heads, name)
    out = np.zeros_like(plane)
    for idx in np.ndindex(plane.shape):
        orig = plane[idx]
        plane[idx] = orig + step
        up = total_loss(heads, tm, cfg).total
        plane[idx] = orig - step
        down = total_loss(heads, tm, cfg).total
        plane[idx] = orig
        out[idx] = (up - down) / (2 * step)
    return out


def test_criterion_2_gradient_check(acceptance):
    rng = np.random.default_rng(2)
    cfg = LossConfig()
    worst = 0.0
    instances = 20
    for _ in range(instances):
        faces = [random_face(rng, 32, 32, max_side=24) for _ in range(rng.integers(1, 4))]
        tm = encode_targets(faces, (32, 32))
        heads = OutputHeads(
            heatmap=rng.uniform(0.05, 0.95, (8, 8)),
            size=tm.size + rng.normal(0, 0.6, tm.size.shape),
            offset=tm.offset + rng.normal(0, 0.6, tm.offset.shape),
            landmarks=tm.landmarks + rng.normal(0, 0.6, tm.landmarks.shape),
        )
        analytic = total_loss(heads, tm, cfg).grads
        for name in ("heatmap", "offset", "size", "landmarks"):
            a, n = analytic[name], _fd_gradient(heads, tm, name, cfg)
            big = (np.abs(a) > 1e-6) | (np.abs(n) > 1e-6)
            if big.any():
                rel = np.abs(a[big] - n[big]) / np.maximum(np.abs(a[big]), np.abs(n[big]))
                worst = max(worst, float(rel.max()))
    ok = worst <= 1e-4
    acceptance(2, ok, f"{instances} instances, max relative error {worst:.2e}")
    assert ok


def test_criterion_3_focal_golden(acceptance):
    pos, _ = focal_center_loss(np.array([[0.5]]), np.array([[1.0]]))
    neg, _ = focal_center_loss(np.array([[0.5]]), np.array([[0.0]]))
    target = np.array([[1.0, 0.0, 0.0]])
    near = focal_center_loss(np.array([[1 - 1e-5, 1e-5, 1e-5]]), target)[0]
    ok = abs(pos - 0.17329) <= 1e-5 and abs(neg - 0.17329) <= 1e-5 and near < 1e-4
    acceptance(3, ok, f"positive {pos:.6f}, background {neg:.6f}, near-target {near:.2e}")
    assert ok


def test_criterion_4_nms_oracle(acceptance):
    rng = np.random.default_rng(4)
    mismatches = 0
    for k in range(1000):
        xy = rng.uniform(0, 300, size=(200, 2))
        wh = rng.uniform(8, 80, size=(200, 2))
        boxes = np.hstack([xy, xy + wh])
        scores = rng.uniform(0, 1, 200)
        if k % 4 == 0:
            scores = np.round(scores, 1)  # heavy score ties
        thresh = (0.3, 0.4, 0.5, 0.7)[k % 4]
        if nms_indices(boxes, scores, thresh).tolist() != nms_reference(boxes, scores, thresh):
            mismatches += 1
    ok = mismatches == 0
    acceptance(4, ok, f"1000 instances x 200 boxes, {mismatches} keep-set mismatches")
    assert ok


def test_criterion_5_peak_oracle(acceptance):
    rng = np.random.default_rng(5)
    cfg = DecodeConfig(score_threshold=0.05, top_k=64 * 64)
    mismatches = 0
    for k in range(100):
        hm = rng.uniform(0, 1, (64, 64))
        if k % 2:
            hm = np.round(hm * 5) / 5  # plateaus and ties
        got = {(x, y) for x, y, _ in extract_peaks(hm, cfg)}
        if got != brute_force_peaks(hm, 0.05):
            mismatches += 1
    ok = mismatches == 0
    acceptance(5, ok, f"100 random 64x64 heatmaps (half with plateaus), {mismatches} mismatches")
    assert ok


def test_criterion_6_end_to_end_synthetic(acceptance, tmp_path):
    rng = np.random.default_rng(6)
    decode_cfg = DecodeConfig()
    plants, results = [], []
    missed = spurious = 0
    for k in range(100):
        W, H = int(rng.integers(160, 720)), int(rng.integers(160, 560))
        count = int(rng.integers(1, 21))
        faces = [
            FaceAnnotation(f.box, random_landmarks(rng, f.box), True)
            for f in disjoint_faces(rng, W, H, count, min_side=10.0, max_side=120.0, gap=1.0)
        ]
        post_cfg = PostConfig(tta_scales=(0.5, 1.0) if k % 3 == 0 else (1.0,), tta_flip=k % 2 == 0)
        image = np.zeros((3, H, W), np.float32)
        dets = detect_image(image, SyntheticBackend(faces, (W, H)), decode_cfg, post_cfg)
        for f in faces:
            if not dets or max(iou(d.box, f.box) for d in dets) < 0.99:
                missed += 1
        for d in dets:
            if d.score > 0.5 and max(iou(d.box, f.box) for f in faces) < 0.99:
                spurious += 1
        plants.append(PlantedImage(f"scene{k:03d}.png", W, H, faces))
        results.append(ImageResult(f"scene{k:03d}.png", dets, (W, H)))
    write_plants(tmp_path / "plants.json", plants)
    write_document(tmp_path / "dets.json", results)
    code = main(["eval", str(tmp_path / "dets.json"), str(tmp_path / "plants.json"), "--json", str(tmp_path / "m.json")])
    ap = json.loads((tmp_path / "m.json").read_text())["ap"]
    n_faces = sum(len(p.faces) for p in plants)
    ok = missed == 0 and spurious == 0 and code == 0 and ap == 1.0
    acceptance(6, ok, f"100 scenes / {n_faces} faces: {missed} missed, {spurious} spurious, eval AP {ap!r}")
    assert ok


def test_criterion_7_box_voting(acceptance, capsys):
    a = Detection(Box(0, 0, 100, 100), 0.6)
    b = Detection(Box(4, 4, 104, 104), 0.2)
    (voted,) = box_vote([a], pool=[a, b])
    expected = [(0.6 * p + 0.2 * q) / 0.8 for p, q in zip(a.box.as_tuple(), b.box.as_tuple())]
    weighted_ok = np.allclose(voted.box.as_tuple(), expected, atol=1e-6, rtol=0)

    c, d = Detection(Box(0, 0, 10, 10), 1.0), Detection(Box(0, 0, 20, 20), 1.0)
    apart_ok = [v.box for v in box_vote([c, d])] == [c.box, d.box]

    main(["detect", "--dump-config"])
    cli_default = "vote_iou = 0.4" in capsys.readouterr().out
    config_ok = VOTE_IOU == 0.4 and PostConfig().vote_iou == 0.4 and cli_default
    ok = weighted_ok and apart_ok and config_ok
    acceptance(7, ok, f"default vote IoU {PostConfig().vote_iou}, weighted mean {voted.box.as_tuple()}")
    assert ok


def test_criterion_8_ap_hand_cases(acceptance):
    gt, other = Box(0, 0, 10, 10), Box(50, 50, 60, 60)
    perfect = average_precision(match_detections([Detection(gt, 0.9), Detection(other, 0.8)], [gt, other])).ap
    trailing_fp = average_precision(match_detections([Detection(gt, 0.9), Detection(other, 0.8)], [gt])).ap
    leading_fp = average_precision(
        match_detections([Detection(gt, 0.9), Detection(Box(80, 80, 90, 90), 0.95)], [gt, other])
    ).ap
    ok = (perfect, trailing_fp, leading_fp) == (1.0, 1.0, 0.25)
    acceptance(8, ok, f"AP = {perfect!r}, {trailing_fp!r}, {leading_fp!r}")
    assert ok


def test_criterion_9_latency(acceptance):
    rng = np.random.default_rng(9)
    H, W = 270, 480
    heat = rng.uniform(0.0, 0.04, (H, W))
    cells = rng.choice((H // 3) * (W // 3), 200, replace=False)
    ys, xs = (cells // (W // 3)) * 3 + 1, (cells % (W // 3)) * 3 + 1
    heat[ys, xs] = rng.uniform(0.3, 1.0, 200)
    heads = OutputHeads(heat, rng.uniform(1, 4, (2, H, W)), rng.uniform(0, 1, (2, H, W)), rng.normal(0, 0.2, (10, H, W)))
    cfg = DecodeConfig(score_threshold=0.05, top_k=200)
    timings = []
    for _ in range(9):
        start = time.perf_counter()
        dets = decode_detections(heads, (W * STRIDE, H * STRIDE), cfg)
        tta_merge([(ViewTransform(), dets)], PostConfig())
        timings.append((time.perf_counter() - start) * 1e3)
    median = statistics.median(timings)

    def backend_for(w, h):
        return SyntheticBackend([FaceAnnotation(Box(w / 4, h / 4, w / 2, h / 2))], (w, h))

    report = run_bench(backend_for, iters=1, warmup=0)
    lines = report.to_text().splitlines()
    header = lines[1].split()
    shaped = header[1:] == ["640*480", "1280*720", "1920*1080"] and [ln.split()[0] for ln in lines[2:]] == [
        "preprocess", "backend", "decode", "postprocess", "total"
    ]
    ok = len(dets) == 200 and median <= 50.0 and shaped
    acceptance(9, ok, f"decode+NMS+vote on 480x270 heads, 200 peaks: median {median:.1f} ms; bench table shaped={shaped}")
    assert ok


def test_criterion_10_published_model(acceptance, tmp_path):
    model = os.environ.get("CENTERFACE_MODEL")
    samples = os.environ.get("CENTERFACE_SAMPLES")
    if not model or not Path(model).exists() or not samples:
        acceptance(10, None, "published model / sample photos not provided (set CENTERFACE_MODEL and CENTERFACE_SAMPLES)")
        pytest.skip("published model not available")
    photos = sorted(p for p in Path(samples).iterdir() if p.suffix.lower() in {".jpg", ".jpeg", ".png"})[:3]
    outs = []
    for rep in range(2):
        out = tmp_path / f"run{rep}.json"
        main(["detect", *map(str, photos), "--model", model, "--score-thresh", "0.35", "--output", str(out)])
        outs.append(json.loads(out.read_text())["images"])
    per_photo = [len(im["detections"]) for im in outs[0]]
    deterministic = outs[0] == outs[1]
    backend = OnnxBackend(model)
    shapes_ok = True
    for p in photos:
        prep = preprocess(load_image(p))
        heads = backend.run(prep)
        w, h = prep.input_dims
        shapes_ok &= heads.heatmap.shape == (h // 4, w // 4) and heads.landmarks.shape == (10, h // 4, w // 4)
    ok = len(photos) == 3 and min(per_photo) >= 1 and deterministic and shapes_ok
    acceptance(10, ok, f"detections per photo {per_photo}, deterministic={deterministic}, stride-4 heads={shapes_ok}")
    assert ok
