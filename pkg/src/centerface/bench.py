"""Per-phase latency benchmark over a set of input resolutions.

Frames are generated in memory before timing starts, so no file I/O lands in
the measured phases.
"""

from __future__ import annotations

import json
import os
import platform
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backend import Backend, BackendSpec
from .decoder import DecodeConfig
from .pipeline import PHASES, PhaseTimer, detect_image
from .postprocess import PostConfig

DEFAULT_SIZES = ((640, 480), (1280, 720), (1920, 1080))


class BenchError(RuntimeError):
    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"benchmark aborted during {phase}: {cause}")
        self.phase = phase


def parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        try:
            w, h = (int(v) for v in item.split("x"))
        except ValueError:
            raise ValueError(f"bad size {item!r}, expected WIDTHxHEIGHT") from None
        if w <= 0 or h <= 0:
            raise ValueError(f"bad size {item!r}: dimensions must be positive")
        sizes.append((w, h))
    if not sizes:
        raise ValueError("no sizes given")
    return sizes


def _stats(samples_ms: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(samples_ms, dtype=float)
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "p95": float(np.percentile(arr, 95)),
    }


@dataclass
class SizeResult:
    width: int
    height: int
    total_ms: list[float] = field(default_factory=list)
    phase_ms: dict[str, list[float]] = field(default_factory=lambda: {p: [] for p in PHASES})

    @property
    def label(self) -> str:
        return f"{self.width}*{self.height}"

    def to_dict(self) -> dict:
        return {
            "size": [self.width, self.height],
            "iterations": len(self.total_ms),
            "total": _stats(self.total_ms),
            "phases": {p: _stats(v) for p, v in self.phase_ms.items()},
        }


@dataclass
class BenchReport:
    approach: str
    results: list[SizeResult]
    warmup: int
    iterations: int
    threads: int | None = None
    hardware: str = field(
        default_factory=lambda: f"{platform.processor() or platform.machine()}, {os.cpu_count()} logical CPUs"
    )

    def to_dict(self) -> dict:
        return {
            "approach": self.approach,
            "warmup": self.warmup,
            "iterations": self.iterations,
            "threads": self.threads,
            "hardware": self.hardware,
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_text(self) -> str:
        """Rows are phases, columns are resolutions; cells are mean ms (median / p95)."""
        header = ["Phase"] + [r.label for r in self.results]
        rows = [header]
        for phase in (*PHASES, "total"):
            row = [phase]
            for r in self.results:
                s = _stats(r.total_ms if phase == "total" else r.phase_ms[phase])
                row.append(f"{s['mean']:.2f}ms ({s['median']:.2f}/{s['p95']:.2f})")
            rows.append(row)
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = [f"Approach: {self.approach}   warmup={self.warmup} iters={self.iterations}   {self.hardware}"]
        lines += ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
        return "\n".join(lines)


def synthetic_frame(width: int, height: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 255, size=(3, height, width)).astype(np.float32)


def run_bench(
    backend_for_size: Callable[[int, int], Backend],
    sizes: Sequence[tuple[int, int]] = DEFAULT_SIZES,
    *,
    iters: int = 20,
    warmup: int = 3,
    decode_cfg: DecodeConfig = DecodeConfig(),
    post_cfg: PostConfig = PostConfig(),
    spec: BackendSpec | None = None,
    approach: str = "CenterFace",
    threads: int | None = None,
) -> BenchReport:
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    results = []
    for width, height in sizes:
        try:
            backend = backend_for_size(width, height)
        except Exception as exc:
            raise BenchError("backend setup", exc) from exc
        frame = synthetic_frame(width, height)
        res = SizeResult(width, height)
        for i in range(warmup + iters):
            timer = PhaseTimer()
            start = time.perf_counter_ns()
            try:
                detect_image(frame, backend, decode_cfg, post_cfg, spec=spec, timer=timer)
            except Exception as exc:
                raise BenchError(timer.current or "preprocess", exc) from exc
            total = (time.perf_counter_ns() - start) / 1e6
            if i < warmup:
                continue
            res.total_ms.append(total)
            for p, v in timer.ms().items():
                res.phase_ms[p].append(v)
        results.append(res)
    return BenchReport(approach, results, warmup, iters, threads)
