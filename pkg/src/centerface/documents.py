"""JSON documents exchanged by the CLI.

Detection document (``schema_version`` 1), coordinates in original image pixels::

    {"schema_version": 1,
     "images": [{"path": "a.jpg", "image_size": [W, H], "input_size": [Wp, Hp],
                 "error": null,
                 "detections": [{"box": [x1, y1, x2, y2], "score": 0.98,
                                 "landmarks": [[x, y], ... 5 entries, null if missing]}]}]}

Plant fixture (faces for the synthetic backend, also usable as ground truth)::

    {"images": [{"path": "a.jpg", "width": 640, "height": 480,
                 "faces": [{"box": [x1, y1, x2, y2], "landmarks": [[x, y], ...]}]}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .core import Box, Detection, FaceAnnotation, LandmarkSet

SCHEMA_VERSION = 1


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schemas/detections.schema.json").read_text())


def _landmarks_to_json(lms: LandmarkSet):
    return [[x, y] if v else None for (x, y), v in zip(lms.points, lms.valid)]


def _landmarks_from_json(items) -> LandmarkSet:
    if not items:
        return LandmarkSet.missing()
    valid = [p is not None for p in items]
    pts = [p if p is not None else (0.0, 0.0) for p in items]
    return LandmarkSet.from_array(pts, valid)


def detection_to_dict(d: Detection) -> dict:
    return {"box": list(d.box.as_tuple()), "score": d.score, "landmarks": _landmarks_to_json(d.landmarks)}


def detection_from_dict(item: dict) -> Detection:
    return Detection(Box(*item["box"]), item["score"], _landmarks_from_json(item.get("landmarks")))


@dataclass
class ImageResult:
    path: str
    detections: list[Detection]
    image_size: tuple[int, int] | None = None
    input_size: tuple[int, int] | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        out = {"path": self.path, "detections": [detection_to_dict(d) for d in self.detections]}
        if self.image_size is not None:
            out["image_size"] = list(self.image_size)
        if self.input_size is not None:
            out["input_size"] = list(self.input_size)
        out["error"] = self.error
        return out


def build_document(results: Sequence[ImageResult], config: dict | None = None) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "images": [r.to_dict() for r in results]}
    if config is not None:
        doc["config"] = config
    return doc


def write_document(path, results: Sequence[ImageResult], config: dict | None = None) -> dict:
    doc = build_document(results, config)
    Path(path).write_text(json.dumps(doc, indent=1))
    return doc


def read_document(path) -> list[ImageResult]:
    doc = json.loads(Path(path).read_text())
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported detection document version {version!r}")
    out = []
    for item in doc["images"]:
        out.append(
            ImageResult(
                path=item["path"],
                detections=[detection_from_dict(d) for d in item["detections"]],
                image_size=tuple(item["image_size"]) if "image_size" in item else None,
                input_size=tuple(item["input_size"]) if "input_size" in item else None,
                error=item.get("error"),
            )
        )
    return out


@dataclass
class PlantedImage:
    path: str
    width: int
    height: int
    faces: list[FaceAnnotation]


def face_to_dict(f: FaceAnnotation) -> dict:
    out = {"box": list(f.box.as_tuple())}
    if f.landmark_valid:
        out["landmarks"] = _landmarks_to_json(f.landmarks)
    return out


def face_from_dict(item: dict) -> FaceAnnotation:
    lms = _landmarks_from_json(item.get("landmarks"))
    return FaceAnnotation(Box(*item["box"]), lms, lms.any_valid)


def read_plants(path) -> list[PlantedImage]:
    doc = json.loads(Path(path).read_text())
    return [
        PlantedImage(item["path"], int(item["width"]), int(item["height"]), [face_from_dict(f) for f in item["faces"]])
        for item in doc["images"]
    ]


def write_plants(path, images: Sequence[PlantedImage]) -> None:
    doc = {
        "images": [
            {"path": im.path, "width": im.width, "height": im.height, "faces": [face_to_dict(f) for f in im.faces]}
            for im in images
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=1))
