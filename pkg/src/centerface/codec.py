"""Ground-truth faces to stride-4 training targets, and back.

Target planes for an ``H x W`` network input, with ``R = 4``:

* ``heatmap``   ``(H/R, W/R)``: Gaussian splats, exactly 1 at face centers.
* ``offset``    ``(2, H/R, W/R)``: sub-cell remainder ``c/R - floor(c/R)`` (x, y).
* ``size``      ``(2, H/R, W/R)``: ``log(box_w / R)``, ``log(box_h / R)``.
* ``landmarks`` ``(10, H/R, W/R)``: ``(lm_x - c_x) / box_w``, ``(lm_y - c_y) / box_h``
  interleaved per point.

Regression planes are only meaningful at the cells listed in ``pos_index``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import NUM_LANDMARKS, Box, FaceAnnotation, LandmarkSet, box_center

STRIDE = 4
MIN_FACE = 8.0
DEFAULT_MIN_OVERLAP = 0.7


@dataclass
class TargetMaps:
    heatmap: np.ndarray
    offset: np.ndarray
    size: np.ndarray
    landmarks: np.ndarray
    pos_index: list[tuple[int, int, int]]  # (face id, grid x, grid y)
    landmark_mask: np.ndarray  # (n_pos,) whole-face flag
    landmark_point_mask: np.ndarray  # (n_pos, 5) per point
    stride: int = STRIDE

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.heatmap.shape

    def cell_vector(self, gx: int, gy: int) -> np.ndarray:
        """Offset, size and landmark targets at one cell as a length-14 vector."""
        return np.concatenate([self.offset[:, gy, gx], self.size[:, gy, gx], self.landmarks[:, gy, gx]])


def gaussian_radius(box_w: float, box_h: float, min_overlap: float = DEFAULT_MIN_OVERLAP) -> float:
    """Largest corner shift that keeps IoU with the true box at ``min_overlap``.

    Minimum over the three CornerNet cases (one corner in / one out, both in,
    both out), each a quadratic in the shift ``r``.
    """
    if box_w <= 0 or box_h <= 0:
        raise ValueError(f"box dims must be positive, got {box_w} x {box_h}")
    if not 0.0 < min_overlap <= 1.0:
        raise ValueError(f"min_overlap must lie in (0, 1], got {min_overlap}")
    w, h, o = float(box_w), float(box_h), float(min_overlap)

    b1 = w + h
    c1 = w * h * (1 - o) / (1 + o)
    r1 = (b1 - math.sqrt(b1 * b1 - 4 * c1)) / 2

    a2 = 4.0
    b2 = 2 * (w + h)
    c2 = (1 - o) * w * h
    r2 = (b2 - math.sqrt(b2 * b2 - 4 * a2 * c2)) / (2 * a2)

    a3 = 4 * o
    b3 = -2 * o * (w + h)
    c3 = (o - 1) * w * h
    r3 = (b3 + math.sqrt(b3 * b3 - 4 * a3 * c3)) / (2 * a3)

    return max(0.0, min(r1, r2, r3))


def splat_gaussian(heatmap: np.ndarray, center: tuple[int, int], radius: float) -> np.ndarray:
    """Max-composite a Gaussian with ``sigma = radius / 3`` onto ``heatmap`` in place."""
    cx, cy = int(center[0]), int(center[1])
    height, width = heatmap.shape
    if not (0 <= cx < width and 0 <= cy < height):
        raise ValueError(f"center {center} outside grid {width}x{height}")
    if radius <= 0:
        heatmap[cy, cx] = 1.0
        return heatmap

    sigma = radius / 3.0
    k = int(math.ceil(radius))
    x0, x1 = max(0, cx - k), min(width, cx + k + 1)
    y0, y1 = max(0, cy - k), min(height, cy + k + 1)
    dx = np.arange(x0, x1) - cx
    dy = np.arange(y0, y1) - cy
    g = np.exp(-(dx[None, :] ** 2 + dy[:, None] ** 2) / (2 * sigma * sigma))
    region = heatmap[y0:y1, x0:x1]
    np.maximum(region, g, out=region)
    heatmap[cy, cx] = 1.0
    return heatmap


def encode_targets(
    faces: Sequence[FaceAnnotation],
    image_dims: tuple[int, int],
    *,
    stride: int = STRIDE,
    min_face: float = MIN_FACE,
    min_overlap: float = DEFAULT_MIN_OVERLAP,
) -> TargetMaps:
    """Build the target planes for ``faces`` on a ``(W, H)`` input.

    Faces smaller than ``min_face`` on either side, or whose center falls
    outside the input, are skipped. When two faces land on one cell the later
    face's regression targets win and the earlier entry leaves ``pos_index``.
    """
    width, height = int(image_dims[0]), int(image_dims[1])
    if width <= 0 or height <= 0 or width % stride or height % stride:
        raise ValueError(f"image dims {width}x{height} must be positive multiples of {stride}")
    gw, gh = width // stride, height // stride

    heatmap = np.zeros((gh, gw))
    offset = np.zeros((2, gh, gw))
    size = np.zeros((2, gh, gw))
    landmarks = np.zeros((2 * NUM_LANDMARKS, gh, gw))

    cells: dict[tuple[int, int], tuple[int, np.ndarray]] = {}
    for face_id, face in enumerate(faces):
        box = face.box
        bw, bh = box.width, box.height
        if min(bw, bh) < min_face:
            continue
        cx, cy = box_center(box)
        if not (0 <= cx < width and 0 <= cy < height):
            continue
        sx, sy = cx / stride, cy / stride
        gx, gy = int(math.floor(sx)), int(math.floor(sy))

        offset[:, gy, gx] = (sx - gx, sy - gy)
        size[:, gy, gx] = (math.log(bw / stride), math.log(bh / stride))

        point_mask = np.zeros(NUM_LANDMARKS, dtype=bool)
        landmarks[:, gy, gx] = 0.0
        if face.landmark_valid:
            pts = face.landmarks.as_array()
            point_mask[:] = face.landmarks.valid
            rel = np.empty((NUM_LANDMARKS, 2))
            rel[:, 0] = (pts[:, 0] - cx) / bw
            rel[:, 1] = (pts[:, 1] - cy) / bh
            rel[~point_mask] = 0.0
            landmarks[:, gy, gx] = rel.reshape(-1)

        splat_gaussian(heatmap, (gx, gy), gaussian_radius(bw / stride, bh / stride, min_overlap))
        cells.pop((gx, gy), None)
        cells[(gx, gy)] = (face_id, point_mask)

    pos_index = [(fid, gx, gy) for (gx, gy), (fid, _) in cells.items()]
    point_masks = np.array([m for _, m in cells.values()], dtype=bool).reshape(-1, NUM_LANDMARKS)
    return TargetMaps(
        heatmap=heatmap,
        offset=offset,
        size=size,
        landmarks=landmarks,
        pos_index=pos_index,
        landmark_mask=point_masks.any(axis=1),
        landmark_point_mask=point_masks,
        stride=stride,
    )


def decode_single(targets_at_cell, grid_cell: tuple[int, int], stride: int = STRIDE, landmark_valid=None):
    """Invert the cell encoding: returns ``(Box, LandmarkSet)`` in input pixels.

    ``targets_at_cell`` is the 14-vector ``[ox, oy, log_w, log_h, l0x, l0y, ...]``.
    """
    v = np.asarray(targets_at_cell, dtype=np.float64).reshape(-1)
    if v.size != 4 + 2 * NUM_LANDMARKS:
        raise ValueError(f"expected a {4 + 2 * NUM_LANDMARKS}-vector, got {v.size} values")
    gx, gy = grid_cell
    cx = (gx + v[0]) * stride
    cy = (gy + v[1]) * stride
    w = math.exp(v[2]) * stride
    h = math.exp(v[3]) * stride
    box = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    rel = v[4:].reshape(NUM_LANDMARKS, 2)
    pts = np.column_stack([cx + rel[:, 0] * w, cy + rel[:, 1] * h])
    return box, LandmarkSet.from_array(pts, landmark_valid)


# Binary container layout (all little-endian):
#   magic b"CFTM" | u32 version | u32 height | u32 width | u32 stride | u32 n_planes
#   f32 planes[n_planes][height][width]   (heatmap, offset x/y, size w/h, 10 landmark)
#   u32 n_pos | n_pos * (i32 face_id, i32 gx, i32 gy, u8 point_mask bits)
TARGETS_MAGIC = b"CFTM"
TARGETS_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
_POS = struct.Struct("<iiiB")


def dump_targets(targets: TargetMaps) -> bytes:
    planes = np.concatenate(
        [targets.heatmap[None], targets.offset, targets.size, targets.landmarks]
    ).astype("<f4")
    gh, gw = targets.heatmap.shape
    buf = io.BytesIO()
    buf.write(_HEADER.pack(TARGETS_MAGIC, TARGETS_VERSION, gh, gw, targets.stride, planes.shape[0]))
    buf.write(planes.tobytes(order="C"))
    buf.write(struct.pack("<I", len(targets.pos_index)))
    for (fid, gx, gy), mask in zip(targets.pos_index, targets.landmark_point_mask):
        bits = sum(1 << i for i, m in enumerate(mask) if m)
        buf.write(_POS.pack(fid, gx, gy, bits))
    return buf.getvalue()


def load_targets(data: bytes) -> TargetMaps:
    try:
        return _load_targets(data)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"corrupt target-map container: {exc}") from exc


def _load_targets(data: bytes) -> TargetMaps:
    magic, version, gh, gw, stride, n_planes = _HEADER.unpack_from(data, 0)
    if magic != TARGETS_MAGIC:
        raise ValueError(f"not a target-map container (magic {magic!r})")
    if version != TARGETS_VERSION:
        raise ValueError(f"unsupported target-map container version {version}")
    if n_planes != 5 + 2 * NUM_LANDMARKS:
        raise ValueError(f"expected {5 + 2 * NUM_LANDMARKS} planes, got {n_planes}")
    offset = _HEADER.size
    count = n_planes * gh * gw
    planes = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(n_planes, gh, gw)
    planes = planes.astype(np.float64)
    offset += 4 * count
    (n_pos,) = struct.unpack_from("<I", data, offset)
    offset += 4
    pos_index, masks = [], []
    for _ in range(n_pos):
        fid, gx, gy, bits = _POS.unpack_from(data, offset)
        offset += _POS.size
        pos_index.append((fid, gx, gy))
        masks.append([bool(bits >> i & 1) for i in range(NUM_LANDMARKS)])
    if offset != len(data):
        raise ValueError(f"{len(data) - offset} trailing bytes")
    point_masks = np.array(masks, dtype=bool).reshape(-1, NUM_LANDMARKS)
    return TargetMaps(
        heatmap=planes[0],
        offset=planes[1:3],
        size=planes[3:5],
        landmarks=planes[5:],
        pos_index=pos_index,
        landmark_mask=point_masks.any(axis=1),
        landmark_point_mask=point_masks,
        stride=stride,
    )
