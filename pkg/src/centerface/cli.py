"""Command-line entry point: ``centerface {encode,detect,eval,bench,visualize}``.

Exit codes: 0 success, 1 partial failure, 2 usage or configuration error.
Settings resolve as command-line flag, then ``--config`` file (INI, one
section per subcommand), then built-in default.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .backend import MODEL_ENV_VAR, BackendError, BackendSpec, SyntheticBackend, load_backend, preprocess
from .bench import BenchError, parse_sizes, run_bench
from .codec import STRIDE, dump_targets, encode_targets
from .core import Box, FaceAnnotation, LandmarkSet
from .data import AnnotationParseError, load_image, read_annotations
from .decoder import DecodeConfig
from .documents import ImageResult, read_document, read_plants, write_document
from .evaluation import evaluate
from .pipeline import detect_image
from .postprocess import PostConfig
from .visualize import render_file

log = logging.getLogger("centerface")

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp", ".tif", ".tiff"}

# (type, default) per setting; None defaults mean "not set"
SETTINGS = {
    "encode": {
        "format": (str, "auto"),
        "size": (str, None),
        "image_root": (str, "."),
        "min_face": (float, 8.0),
    },
    "detect": {
        "model": (str, None),
        "backend": (str, "onnx"),
        "backend_config": (str, None),
        "score_thresh": (float, 0.05),
        "top_k": (int, 200),
        "nms_iou": (float, 0.3),
        "vote_iou": (float, 0.4),
        "scales": (str, "1.0"),
        "flip": (bool, False),
        "long_side": (int, None),
        "threads": (int, 1),
    },
    "eval": {
        "iou": (float, 0.5),
        "fp_budget": (float, 1000.0),
        "gt_format": (str, "auto"),
    },
    "bench": {
        "model": (str, None),
        "backend": (str, "onnx"),
        "backend_config": (str, None),
        "sizes": (str, "640x480,1280x720,1920x1080"),
        "iters": (int, 20),
        "warmup": (int, 3),
        "threads": (int, 1),
        "faces": (int, 10),
        "score_thresh": (float, 0.05),
        "top_k": (int, 200),
        "nms_iou": (float, 0.3),
        "vote_iou": (float, 0.4),
    },
    "visualize": {
        "score_thresh": (float, 0.35),
        "image_root": (str, "."),
    },
}


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge flag > config file > default for the active subcommand."""
    table = SETTINGS[args.command]
    file_values = {}
    if args.config:
        parser = configparser.ConfigParser()
        try:
            with open(args.config) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if parser.has_section(args.command):
            file_values = dict(parser[args.command])
        unknown = set(file_values) - set(table)
        if unknown:
            raise UsageError(f"unknown [{args.command}] keys in {args.config}: {', '.join(sorted(unknown))}")
    out = {}
    for key, (typ, default) in table.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            raw = file_values[key]
            try:
                out[key] = _parse_bool(raw) if typ is bool else typ(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key} in {args.config}: {raw!r}") from exc
        else:
            out[key] = default
    if "model" in out and out["model"] is None:
        out["model"] = os.environ.get(MODEL_ENV_VAR)
    return out


def _parse_scales(text: str) -> tuple[float, ...]:
    try:
        scales = tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"bad --scales value {text!r}") from None
    if not scales or any(s <= 0 for s in scales):
        raise UsageError("--scales needs positive factors")
    return scales


def _configs(cfg: dict) -> tuple[DecodeConfig, PostConfig]:
    try:
        decode_cfg = DecodeConfig(score_threshold=cfg["score_thresh"], top_k=cfg["top_k"])
        post_cfg = PostConfig(
            nms_iou=cfg["nms_iou"],
            vote_iou=cfg["vote_iou"],
            tta_scales=_parse_scales(cfg.get("scales", "1.0")),
            tta_flip=bool(cfg.get("flip", False)),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return decode_cfg, post_cfg


def _backend_spec(cfg: dict) -> BackendSpec:
    if not cfg.get("backend_config"):
        return BackendSpec()
    try:
        return BackendSpec.load(cfg["backend_config"])
    except (OSError, ValueError, configparser.Error) as exc:
        raise UsageError(f"cannot read backend config: {exc}") from exc


def _collect_images(inputs) -> list[str]:
    out = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            out.extend(str(q) for q in sorted(p.rglob("*")) if q.suffix.lower() in IMAGE_SUFFIXES)
        else:
            out.append(str(p))
    return out


# ---------------------------------------------------------------- encode


def cmd_encode(args, cfg) -> int:
    try:
        records = read_annotations(args.labels, cfg["format"])
    except (OSError, AnnotationParseError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    fixed = None
    if cfg["size"]:
        try:
            (fixed,) = parse_sizes(cfg["size"])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if fixed[0] % STRIDE or fixed[1] % STRIDE:
            raise UsageError(f"--size must be a multiple of {STRIDE} on both sides")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for rec in records:
        dims = fixed
        if dims is None:
            try:
                image = load_image(Path(cfg["image_root"]) / rec.path)
            except OSError as exc:
                log.error("%s: %s (pass --size to encode without images)", rec.path, exc)
                failures += 1
                continue
            dims = preprocess(image).input_dims
        targets = encode_targets(rec.faces, dims, min_face=cfg["min_face"])
        name = rec.path.replace("/", "__").replace("\\", "__")
        (out_dir / f"{name}.cftm").write_bytes(dump_targets(targets))
    print(f"encoded {len(records) - failures} of {len(records)} image(s) into {out_dir}")
    return 1 if failures else 0


# ---------------------------------------------------------------- detect


def _make_backend(cfg, spec: BackendSpec, plants=None, dims=None):
    if cfg["backend"] == "synthetic":
        return SyntheticBackend(plants or [], dims)
    return load_backend(cfg["model"], spec, cfg.get("threads"))


def cmd_detect(args, cfg) -> int:
    decode_cfg, post_cfg = _configs(cfg)
    spec = _backend_spec(cfg)
    plants = {}
    if cfg["backend"] == "synthetic":
        if not args.plant:
            raise UsageError("--backend synthetic needs --plant FILE")
        plants = {p.path: p for p in read_plants(args.plant)}
        paths = _collect_images(args.inputs) if args.inputs else list(plants)
    elif cfg["backend"] == "onnx":
        if not cfg["model"]:
            raise UsageError(f"no model: pass --model or set ${MODEL_ENV_VAR}")
        paths = _collect_images(args.inputs)
    else:
        raise UsageError(f"unknown backend {cfg['backend']!r}")

    threads = max(1, int(cfg["threads"] or 1))
    shared = None
    if cfg["backend"] == "onnx" and paths:
        try:
            shared = _make_backend(cfg, spec)
        except BackendError as exc:
            log.error("%s", exc)
            results = [ImageResult(p, [], error=str(exc)) for p in paths]
            _emit_document(args.output, results, cfg)
            return 1
    local = threading.local()

    def work(path: str) -> ImageResult:
        try:
            if cfg["backend"] == "synthetic":
                plant = plants.get(path)
                if plant is None:
                    raise FileNotFoundError(f"no planted faces for {path}")
                if Path(path).exists():
                    image = load_image(path)
                else:
                    image = np.zeros((3, plant.height, plant.width), dtype=np.float32)
                backend = SyntheticBackend(plant.faces, (image.shape[2], image.shape[1]))
            else:
                image = load_image(path)
                if not hasattr(local, "backend"):
                    # one session per worker thread
                    local.backend = shared if threads == 1 else shared.clone()
                backend = local.backend
            dets = detect_image(image, backend, decode_cfg, post_cfg, long_side=cfg["long_side"], spec=spec)
            input_size = preprocess(image, cfg["long_side"], spec).input_dims
            return ImageResult(path, dets, (image.shape[2], image.shape[1]), input_size)
        except Exception as exc:  # per-file failure is reported, not fatal
            log.error("%s: %s", path, exc)
            return ImageResult(path, [], error=str(exc))

    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, paths))
    else:
        results = [work(p) for p in paths]
    _emit_document(args.output, results, cfg)
    return 1 if any(r.error for r in results) else 0


def _emit_document(output, results, cfg) -> None:
    config = {k: v for k, v in cfg.items() if k != "model"}
    if output and output != "-":
        write_document(output, results, config)
    else:
        from .documents import build_document

        json.dump(build_document(results, config), sys.stdout, indent=1)
        sys.stdout.write("\n")


# ---------------------------------------------------------------- eval


def _normalize(path: str) -> str:
    return Path(path).as_posix().lstrip("./")


def _pair_paths(pred_keys, gt_keys) -> dict[str, str]:
    """Map prediction paths onto ground-truth paths: exact, then path-suffix match."""
    gt_norm = {_normalize(k): k for k in gt_keys}
    mapping = {}
    for p in pred_keys:
        n = _normalize(p)
        if n in gt_norm:
            mapping[p] = gt_norm[n]
            continue
        hits = [g for gn, g in gt_norm.items() if n.endswith("/" + gn) or gn.endswith("/" + n)]
        if len(hits) == 1:
            mapping[p] = hits[0]
    return mapping


def read_subset_filter(path) -> dict[str, set[int]]:
    """``<image path> <face index> ...`` per line; listed faces are kept, others become ignore regions."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            out[parts[0]] = {int(v) for v in parts[1:]}
        except ValueError:
            raise UsageError(f"{path}:{lineno}: face indices must be integers") from None
    return out


def _read_ground_truth(path, fmt) -> dict[str, list[FaceAnnotation]]:
    if fmt == "plants" or (fmt == "auto" and str(path).endswith(".json")):
        return {p.path: p.faces for p in read_plants(path)}
    return {r.path: r.faces for r in read_annotations(path, fmt)}


def cmd_eval(args, cfg) -> int:
    try:
        docs = read_document(args.predictions)
        gt_faces = _read_ground_truth(args.ground_truth, cfg["gt_format"])
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 2
    subset = read_subset_filter(args.subset_filter) if args.subset_filter else {}

    gts, ignore = {}, {}
    for key, faces in gt_faces.items():
        keep = subset.get(key)
        boxes = [f.box for f in faces]
        if keep is None:
            gts[key] = boxes
        else:
            gts[key] = [b for i, b in enumerate(boxes) if i in keep]
            ignore[key] = [b for i, b in enumerate(boxes) if i not in keep]

    mapping = _pair_paths([d.path for d in docs], gts)
    preds = {}
    for d in docs:
        key = mapping.get(d.path, d.path)
        preds[key] = d.detections
    report = evaluate(preds, gts, iou_thresh=cfg["iou"], fp_budget=cfg["fp_budget"], ignore=ignore)
    for name in report.excluded:
        print(f"warning: excluded {name} (no matching prediction/ground-truth entry)", file=sys.stderr)
    print(report.summary())
    if args.curve_out:
        prefix = Path(args.curve_out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{prefix}_pr.csv").write_text(report.pr.to_csv())
        Path(f"{prefix}_roc.csv").write_text(report.roc.to_csv())
    if args.json:
        Path(args.json).write_text(
            json.dumps(
                {
                    "ap": report.ap,
                    "tpr_at_budget": report.tpr_at_budget,
                    "fp_budget": report.fp_budget,
                    "total_gt": report.total_gt,
                    "images": report.n_images,
                    "excluded": report.excluded,
                },
                indent=1,
            )
        )
    return 0


# ---------------------------------------------------------------- bench


def _random_plants(width: int, height: int, count: int, seed: int = 0) -> list[FaceAnnotation]:
    rng = np.random.default_rng(seed)
    faces = []
    for _ in range(count):
        side = float(rng.uniform(16, max(17.0, min(width, height) / 6)))
        x = float(rng.uniform(0, width - side))
        y = float(rng.uniform(0, height - side))
        faces.append(FaceAnnotation(Box(x, y, x + side, y + side), LandmarkSet.missing(), False))
    return faces


def cmd_bench(args, cfg) -> int:
    try:
        sizes = parse_sizes(cfg["sizes"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    decode_cfg, post_cfg = _configs(cfg)
    spec = _backend_spec(cfg)
    threads = cfg["threads"]
    if threads:
        try:
            import cv2

            cv2.setNumThreads(int(threads))
        except Exception:  # pragma: no cover - cv2 always present
            pass

    if cfg["backend"] == "synthetic":
        approach = "CenterFace (synthetic backend)"

        def factory(w, h):
            return SyntheticBackend(_random_plants(w, h, cfg["faces"]), (w, h))

    elif cfg["backend"] == "onnx":
        if not cfg["model"]:
            raise UsageError(f"no model: pass --model or set ${MODEL_ENV_VAR}")
        approach = f"CenterFace ({Path(cfg['model']).name})"
        backend = None

        def factory(w, h):
            nonlocal backend
            if backend is None:
                backend = load_backend(cfg["model"], spec, threads)
            return backend

    else:
        raise UsageError(f"unknown backend {cfg['backend']!r}")

    try:
        report = run_bench(
            factory, sizes, iters=cfg["iters"], warmup=cfg["warmup"], decode_cfg=decode_cfg,
            post_cfg=post_cfg, spec=spec, approach=approach, threads=threads,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except BenchError as exc:
        log.error("%s", exc)
        return 1
    print(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json())
    return 0


# ---------------------------------------------------------------- visualize


def cmd_visualize(args, cfg) -> int:
    try:
        docs = read_document(args.predictions)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 2
    by_path = {d.path: d for d in docs}
    by_name = {Path(d.path).name: d for d in docs}
    targets = args.images or [d.path for d in docs]
    out_dir = Path(args.out_dir)
    skipped = 0
    for item in targets:
        doc = by_path.get(item) or by_name.get(Path(item).name)
        src = Path(item)
        if not src.exists():
            src = Path(cfg["image_root"]) / item
        if doc is None or not src.exists():
            log.warning("skipping %s: %s", item, "no detections entry" if doc is None else "image not found")
            skipped += 1
            continue
        try:
            render_file(src, doc.detections, out_dir / src.name, cfg["score_thresh"])
        except OSError as exc:
            log.warning("skipping %s: %s", item, exc)
            skipped += 1
    return 1 if skipped else 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="centerface", description="Anchor-free face detection and alignment toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with one section per subcommand")
    common.add_argument("--dump-config", action="store_true", help="print the effective settings and exit")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common], help="dump training target maps for an annotation file")
    p.add_argument("--labels", required=True, help="WIDER bbx_gt.txt or RetinaFace label.txt")
    p.add_argument("--format", choices=["auto", "wider", "retinaface"])
    p.add_argument("--image-root", dest="image_root")
    p.add_argument("--size", help="fixed network input WxH instead of reading each image")
    p.add_argument("--min-face", dest="min_face", type=float)
    p.add_argument("--out-dir", required=True)

    def add_decode_flags(p):
        p.add_argument("--model", help=f"ONNX model (default ${MODEL_ENV_VAR})")
        p.add_argument("--backend", choices=["onnx", "synthetic"])
        p.add_argument("--backend-config", dest="backend_config", help="INI head/input description of the model")
        p.add_argument("--score-thresh", dest="score_thresh", type=float)
        p.add_argument("--top-k", dest="top_k", type=int)
        p.add_argument("--nms-iou", dest="nms_iou", type=float)
        p.add_argument("--vote-iou", dest="vote_iou", type=float)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("detect", parents=[common], help="run detection on images")
    p.add_argument("inputs", nargs="*", help="image files or directories")
    add_decode_flags(p)
    p.add_argument("--plant", help="planted-face JSON for --backend synthetic")
    p.add_argument("--scales", help="comma-separated test-time scales, e.g. 0.5,1,1.5")
    p.add_argument("--flip", action="store_const", const=True, help="add mirrored views")
    p.add_argument("--long-side", dest="long_side", type=int)
    p.add_argument("--output", "-o", help="detection JSON (default stdout)")

    p = sub.add_parser("eval", parents=[common], help="AP / ROC of a detection document")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--gt-format", dest="gt_format", choices=["auto", "wider", "retinaface", "plants"])
    p.add_argument("--iou", type=float)
    p.add_argument("--fp-budget", dest="fp_budget", type=float)
    p.add_argument("--subset-filter", help="text file of GT indices to keep per image")
    p.add_argument("--curve-out", help="prefix for _pr.csv and _roc.csv")
    p.add_argument("--json", help="write metrics JSON here")

    p = sub.add_parser("bench", parents=[common], help="per-phase latency benchmark")
    add_decode_flags(p)
    p.add_argument("--sizes")
    p.add_argument("--iters", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--faces", type=int, help="planted faces per frame with --backend synthetic")
    p.add_argument("--json", help="write the report as JSON here")

    p = sub.add_parser("visualize", parents=[common], help="draw detections onto images")
    p.add_argument("predictions")
    p.add_argument("images", nargs="*")
    p.add_argument("--score-thresh", dest="score_thresh", type=float)
    p.add_argument("--image-root", dest="image_root")
    p.add_argument("--out-dir", required=True)
    return parser


COMMANDS = {
    "encode": cmd_encode,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "visualize": cmd_visualize,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_settings(args)
        if args.dump_config:
            cp = configparser.ConfigParser()
            cp[args.command] = {k: "" if v is None else str(v) for k, v in cfg.items()}
            cp.write(sys.stdout)
            return 0
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"centerface {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
