"""Network boundary: input preprocessing, the backend interface, an ONNX adapter
and a synthetic backend that replays encoded ground truth.

Images everywhere in this package are float ``(3, H, W)`` arrays, RGB channel
order, values in ``[0, 255]``.
"""

from __future__ import annotations

import configparser
import io
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import cv2
import numpy as np

from .codec import STRIDE, encode_targets
from .core import Box, FaceAnnotation, flip_box, flip_landmarks
from .decoder import OutputHeads

HEAD_CHANNELS = {"heatmap": 1, "size": 2, "offset": 2, "landmarks": 10}
MODEL_ENV_VAR = "CENTERFACE_MODEL"


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class BackendSpec:
    """Input contract and head naming for a model.

    ``head_layout`` selects how raw outputs are interpreted: ``"native"`` means
    the heads already follow this package's encoding; ``"release"`` converts the
    publicly released model's conventions (y-before-x channel order, a half-cell
    center shift, landmarks relative to the top-left box corner).
    """

    input_multiple: int = 32
    value_scale: float = 1.0
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)
    channel_order: str = "RGB"
    head_names: dict = field(
        default_factory=lambda: {"heatmap": "537", "size": "538", "offset": "539", "landmarks": "540"}
    )
    head_layout: str = "release"
    heatmap_logits: bool = False

    def __post_init__(self):
        if self.input_multiple <= 0 or self.input_multiple % STRIDE:
            raise ValueError(f"input_multiple must be a positive multiple of {STRIDE}")
        if self.channel_order not in ("RGB", "BGR"):
            raise ValueError(f"channel_order must be RGB or BGR, got {self.channel_order!r}")
        if self.head_layout not in ("native", "release"):
            raise ValueError(f"unknown head_layout {self.head_layout!r}")
        if set(self.head_names) != set(HEAD_CHANNELS):
            raise ValueError(f"head_names must map exactly {sorted(HEAD_CHANNELS)}")

    def to_config(self) -> str:
        parser = configparser.ConfigParser()
        parser["input"] = {
            "multiple": str(self.input_multiple),
            "value_scale": repr(self.value_scale),
            "mean": ",".join(map(repr, self.mean)),
            "std": ",".join(map(repr, self.std)),
            "channel_order": self.channel_order,
        }
        parser["heads"] = dict(self.head_names)
        parser["heads"]["layout"] = self.head_layout
        parser["heads"]["heatmap_logits"] = str(self.heatmap_logits).lower()
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_config(cls, text: str) -> "BackendSpec":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        kwargs = {}
        if parser.has_section("input"):
            sec = parser["input"]
            kwargs["input_multiple"] = sec.getint("multiple", 32)
            kwargs["value_scale"] = sec.getfloat("value_scale", 1.0)
            if "mean" in sec:
                kwargs["mean"] = tuple(float(v) for v in sec["mean"].split(","))
            if "std" in sec:
                kwargs["std"] = tuple(float(v) for v in sec["std"].split(","))
            kwargs["channel_order"] = sec.get("channel_order", "RGB")
        if parser.has_section("heads"):
            sec = parser["heads"]
            names = cls().head_names
            names.update({k: sec[k] for k in HEAD_CHANNELS if k in sec})
            kwargs["head_names"] = names
            kwargs["head_layout"] = sec.get("layout", "release")
            kwargs["heatmap_logits"] = sec.getboolean("heatmap_logits", False)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "BackendSpec":
        return cls.from_config(Path(path).read_text())

    @classmethod
    def release(cls) -> "BackendSpec":
        """The bundled description of the published model file."""
        return cls.from_config(resources.files("centerface").joinpath("configs/release.ini").read_text())


@dataclass
class PreprocessResult:
    """Network-ready tensor plus the geometry needed to map results back.

    ``pad`` is the top-left offset of the image content inside the tensor (the
    quantity ``unpad_rescale`` subtracts); padding is added bottom/right so it
    is always ``(0, 0)`` here, with the added amount kept in ``pad_extent``.
    """

    tensor: np.ndarray  # (1, 3, Hp, Wp) float32
    scale: float
    pad: tuple[float, float]
    pad_extent: tuple[int, int]
    flip: bool
    source_dims: tuple[int, int]  # (W, H) of the original image

    @property
    def input_dims(self) -> tuple[int, int]:
        return (self.tensor.shape[3], self.tensor.shape[2])

    @property
    def content_dims(self) -> tuple[float, float]:
        return (self.source_dims[0] * self.scale, self.source_dims[1] * self.scale)


def _round_up(value: int, multiple: int) -> int:
    return int(math.ceil(value / multiple) * multiple)


def scale_image(image_hwc: np.ndarray, scale: float, out_w: int, out_h: int) -> np.ndarray:
    """Resample so that continuous coordinates map exactly as ``x' = scale * x``."""
    # warpAffine samples at pixel centers; the offset keeps corner coordinates exact
    shift = 0.5 * (scale - 1.0)
    m = np.array([[scale, 0.0, shift], [0.0, scale, shift]])
    return cv2.warpAffine(
        image_hwc, m, (out_w, out_h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0
    )


def preprocess(
    image: np.ndarray,
    target_long_side: int | None = None,
    spec: BackendSpec | None = None,
    *,
    scale: float = 1.0,
    flip: bool = False,
) -> PreprocessResult:
    """Mirror (optional), scale, pad bottom/right to the input multiple, normalise.

    The geometric scale is ``scale`` times the factor that brings the long side
    down to ``target_long_side`` (never up).
    """
    spec = spec or BackendSpec()
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {image.shape}")
    _, h, w = image.shape
    if h == 0 or w == 0:
        raise ValueError("image has a zero dimension")
    if scale <= 0:
        raise ValueError("scale must be positive")

    s = float(scale)
    if target_long_side is not None and max(w, h) > target_long_side:
        s *= target_long_side / max(w, h)

    hwc = np.ascontiguousarray(image.transpose(1, 2, 0), dtype=np.float32)
    if flip:
        hwc = np.ascontiguousarray(hwc[:, ::-1])
    cw, ch = max(1, int(math.ceil(w * s - 1e-9))), max(1, int(math.ceil(h * s - 1e-9)))
    pw, ph = _round_up(cw, spec.input_multiple), _round_up(ch, spec.input_multiple)
    if s == 1.0:
        canvas = np.zeros((ph, pw, 3), dtype=np.float32)
        canvas[:h, :w] = hwc
    else:
        canvas = scale_image(hwc, s, pw, ph)
        # zero anything beyond the scaled content so padding is clean
        canvas[ch:] = 0
        canvas[:, cw:] = 0

    if spec.channel_order == "BGR":
        canvas = canvas[..., ::-1]
    mean = np.asarray(spec.mean, dtype=np.float32)
    std = np.asarray(spec.std, dtype=np.float32)
    tensor = (canvas * np.float32(spec.value_scale) - mean) / std
    tensor = np.ascontiguousarray(tensor.transpose(2, 0, 1)[None], dtype=np.float32)
    return PreprocessResult(tensor, s, (0.0, 0.0), (pw - cw, ph - ch), bool(flip), (w, h))


class Backend(Protocol):
    """Anything that turns a preprocessed input into output heads.

    A handle is used from one thread at a time; ``clone`` gives another worker
    its own handle.
    """

    def run(self, prep: PreprocessResult) -> OutputHeads: ...

    def clone(self) -> "Backend": ...


def run(backend: Backend, prep: PreprocessResult) -> OutputHeads:
    heads = backend.run(prep)
    check_head_shapes(heads, prep.input_dims)
    return heads


def check_head_shapes(heads: OutputHeads, input_dims: tuple[int, int]) -> None:
    w, h = input_dims
    expected = (h // STRIDE, w // STRIDE)
    if heads.heatmap.shape != expected:
        raise BackendError(f"heatmap head has spatial dims {heads.heatmap.shape}, expected {expected}")
    if heads.heatmap.size and (heads.heatmap.min() < 0 or heads.heatmap.max() > 1):
        raise BackendError("heatmap head values fall outside [0, 1]")


class SyntheticBackend:
    """Test double: ignores pixels and returns the encoded targets of planted faces.

    Planted faces are given in source-image coordinates; each call maps them
    through the view's mirror and scale before encoding at the tensor size.
    """

    def __init__(self, planted_faces: Sequence[FaceAnnotation], dims: tuple[int, int]):
        self.planted_faces = list(planted_faces)
        self.dims = (int(dims[0]), int(dims[1]))

    def clone(self) -> "SyntheticBackend":
        return self

    def _view_faces(self, prep: PreprocessResult) -> list[FaceAnnotation]:
        width = self.dims[0]
        s = prep.scale
        px, py = prep.pad
        out = []
        for f in self.planted_faces:
            box, lms = f.box, f.landmarks
            if prep.flip:
                box, lms = flip_box(box, width), flip_landmarks(lms, width)
            box = Box(box.x1 * s + px, box.y1 * s + py, box.x2 * s + px, box.y2 * s + py)
            pts = lms.as_array() * s + np.array([px, py])
            out.append(FaceAnnotation(box, type(lms).from_array(pts, lms.valid), f.landmark_valid))
        return out

    def run(self, prep: PreprocessResult) -> OutputHeads:
        targets = encode_targets(self._view_faces(prep), prep.input_dims)
        return OutputHeads.from_targets(targets)


def synthetic_backend(planted_faces: Sequence[FaceAnnotation], dims: tuple[int, int]) -> SyntheticBackend:
    return SyntheticBackend(planted_faces, dims)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def release_to_native(heatmap, size, offset, landmarks):
    """Convert released-model head conventions to this package's encoding."""
    size = size[::-1]
    offset = offset[::-1] + 0.5
    lm = landmarks.reshape(5, 2, *landmarks.shape[1:])[:, ::-1] - 0.5
    return heatmap, np.ascontiguousarray(size), np.ascontiguousarray(offset), lm.reshape(10, *landmarks.shape[1:])


def _has_static_spatial_dims(session) -> bool:
    shape = session.get_inputs()[0].shape
    return len(shape) == 4 and all(isinstance(d, int) for d in shape[2:])


def _relax_static_shapes(model_path: str) -> bytes:
    try:
        import onnx
    except ImportError as exc:
        raise BackendError(
            f"{model_path} has a fixed input shape; install onnx so it can be relaxed to arbitrary sizes"
        ) from exc
    model = onnx.load(model_path)
    names = ("batch", "channels", "height", "width")
    for value in (*model.graph.input[:1], *model.graph.output):
        dims = value.type.tensor_type.shape.dim
        for i, dim in enumerate(dims):
            if i != 1:
                dim.dim_param = f"{value.name}_{names[i] if i < 4 else i}"
    return model.SerializeToString()


class OnnxBackend:
    """Runs an ONNX model file through onnxruntime."""

    def __init__(self, model_path, spec: BackendSpec | None = None, threads: int | None = None):
        try:
            import onnxruntime as ort
        except ImportError as exc:  # pragma: no cover - depends on install extras
            raise BackendError("onnxruntime is required for ONNX models (pip install 'centerface[onnx]')") from exc
        self.model_path = str(model_path)
        self.spec = spec or BackendSpec()
        self.threads = threads
        opts = ort.SessionOptions()
        opts.log_severity_level = 3
        if threads:
            opts.intra_op_num_threads = threads
            opts.inter_op_num_threads = 1
        try:
            self.session = ort.InferenceSession(self.model_path, sess_options=opts, providers=["CPUExecutionProvider"])
            if _has_static_spatial_dims(self.session):
                # exported with a fixed example shape; make batch and spatial dims symbolic
                self.session = ort.InferenceSession(
                    _relax_static_shapes(self.model_path), sess_options=opts, providers=["CPUExecutionProvider"]
                )
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"cannot load model {self.model_path}: {exc}") from exc
        self.input_name = self.session.get_inputs()[0].name
        outputs = [o.name for o in self.session.get_outputs()]
        missing = [f"{head} ({name})" for head, name in self.spec.head_names.items() if name not in outputs]
        if missing:
            raise BackendError(f"model outputs {outputs} lack heads: {', '.join(missing)}")

    def clone(self) -> "OnnxBackend":
        return OnnxBackend(self.model_path, self.spec, self.threads)

    def run(self, prep: PreprocessResult) -> OutputHeads:
        names = self.spec.head_names
        order = list(HEAD_CHANNELS)
        raw = self.session.run([names[k] for k in order], {self.input_name: prep.tensor})
        planes = {}
        w, h = prep.input_dims
        for key, arr in zip(order, raw):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim == 4:
                if arr.shape[0] != 1:
                    raise BackendError(f"{key} head ({names[key]}) has batch size {arr.shape[0]}, expected 1")
                arr = arr[0]
            if arr.ndim != 3 or arr.shape[0] != HEAD_CHANNELS[key]:
                raise BackendError(
                    f"{key} head ({names[key]}) has shape {arr.shape}, expected {HEAD_CHANNELS[key]} channels"
                )
            if arr.shape[1:] != (h // STRIDE, w // STRIDE):
                raise BackendError(
                    f"{key} head ({names[key]}) has spatial dims {arr.shape[1:]}, expected {(h // STRIDE, w // STRIDE)}"
                )
            planes[key] = arr
        heat = planes["heatmap"][0]
        if self.spec.heatmap_logits:
            heat = _sigmoid(heat)
        heat = np.clip(heat, 0.0, 1.0)
        size, offset, lms = planes["size"], planes["offset"], planes["landmarks"]
        if self.spec.head_layout == "release":
            heat, size, offset, lms = release_to_native(heat, size, offset, lms)
        return OutputHeads(heatmap=heat, size=size, offset=offset, landmarks=lms)


def load_backend(model_path=None, spec: BackendSpec | None = None, threads: int | None = None) -> OnnxBackend:
    model_path = model_path or os.environ.get(MODEL_ENV_VAR)
    if not model_path:
        raise BackendError(f"no model path given and ${MODEL_ENV_VAR} is unset")
    return OnnxBackend(model_path, spec, threads)


__all__ = [
    "Backend",
    "BackendError",
    "BackendSpec",
    "OnnxBackend",
    "PreprocessResult",
    "SyntheticBackend",
    "load_backend",
    "preprocess",
    "release_to_native",
    "run",
    "synthetic_backend",
]
