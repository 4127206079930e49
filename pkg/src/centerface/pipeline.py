"""Image to detections: preprocess, backend, decode and merge every view."""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager

from .backend import Backend, BackendSpec, preprocess, run
from .core import Detection
from .decoder import DecodeConfig, decode_detections
from .postprocess import PostConfig, ViewTransform, tta_merge, views_for

PHASES = ("preprocess", "backend", "decode", "postprocess")


class PhaseTimer:
    """Accumulates wall time per named phase (nanoseconds)."""

    def __init__(self):
        self.ns = defaultdict(int)
        self.current: str | None = None

    @contextmanager
    def phase(self, name: str):
        self.current = name
        start = time.perf_counter_ns()
        try:
            yield
        finally:
            self.ns[name] += time.perf_counter_ns() - start

    def ms(self) -> dict[str, float]:
        return {k: self.ns.get(k, 0) / 1e6 for k in PHASES}


def detect_image(
    image,
    backend: Backend,
    decode_cfg: DecodeConfig = DecodeConfig(),
    post_cfg: PostConfig = PostConfig(),
    *,
    long_side: int | None = None,
    spec: BackendSpec | None = None,
    timer: PhaseTimer | None = None,
) -> list[Detection]:
    """Run every requested view of ``image`` and merge the results in source coordinates."""
    timer = timer or PhaseTimer()
    width = image.shape[2]
    views = []
    for scale, flip in views_for(post_cfg):
        with timer.phase("preprocess"):
            prep = preprocess(image, long_side, spec, scale=scale, flip=flip)
        with timer.phase("backend"):
            heads = run(backend, prep)
        with timer.phase("decode"):
            dets = decode_detections(heads, prep.content_dims, decode_cfg)
        views.append((ViewTransform(prep.scale, prep.flip, prep.pad, width), dets))
    with timer.phase("postprocess"):
        return tta_merge(views, post_cfg)
