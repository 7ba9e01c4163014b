"""Deterministic moving-shapes videos used as ground truth for desk-scale runs.

Each clip is a horizontal linear gradient with a small static noise texture,
overlaid with flat-colored rectangles and circles that translate at constant
integer velocity and wrap around the frame edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorio import save_clip

log = logging.getLogger(__name__)

# Saturated colors far apart from each other and from typical gradient values.
PALETTE = np.array(
    [
        [0.90, 0.10, 0.10],
        [0.10, 0.75, 0.20],
        [0.15, 0.25, 0.90],
        [0.95, 0.85, 0.10],
        [0.80, 0.15, 0.85],
        [0.10, 0.85, 0.85],
        [0.98, 0.55, 0.05],
        [0.05, 0.05, 0.05],
    ],
    dtype=np.float32,
)
NOISE_AMPLITUDE = 0.02


@dataclass(frozen=True)
class Shape:
    kind: str  # "rect" or "circle"
    x: int  # top-left column (rect) or center column (circle) at frame 0
    y: int
    size: tuple[int, int]  # (w, h) for rect; (r, r) for circle
    velocity: tuple[int, int]  # (vx, vy) pixels/frame
    color: tuple[float, float, float]


@dataclass(frozen=True)
class SynthSpec:
    n_clips: int = 20
    frames: int = 16
    width: int = 96
    height: int = 56
    n_shapes: int = 3
    velocity_range: tuple[int, int] = (1, 3)
    seed: int = 0
    fps: float = 24.0

    def __post_init__(self):
        if self.width < 24:
            raise ValueError(f"width must be >= 24, got {self.width}")
        if self.height < 8:
            raise ValueError(f"height must be >= 8, got {self.height}")
        if self.n_clips < 1 or self.frames < 1:
            raise ValueError("n_clips and frames must be >= 1")
        if not 0 <= self.n_shapes <= len(PALETTE):
            raise ValueError(f"n_shapes must be in [0, {len(PALETTE)}]")
        lo, hi = self.velocity_range
        if not 1 <= lo <= hi:
            raise ValueError(f"velocity_range must satisfy 1 <= lo <= hi, got {self.velocity_range}")


def clip_rng(seed: int, index: int) -> np.random.Generator:
    """Per-clip generator; independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def background(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """(3, H, W) gradient between two random colors plus fixed noise."""
    left = rng.uniform(0.15, 0.85, size=3)
    right = rng.uniform(0.15, 0.85, size=3)
    ramp = np.linspace(0.0, 1.0, width)
    bg = left[:, None] + (right - left)[:, None] * ramp[None, :]
    bg = np.broadcast_to(bg[:, None, :], (3, height, width))
    noise = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(1, height, width))
    return np.clip(bg + noise, 0.0, 1.0).astype(np.float32)


def random_shapes(spec: SynthSpec, rng: np.random.Generator) -> list[Shape]:
    colors = rng.permutation(len(PALETTE))[: spec.n_shapes]
    shapes = []
    lo, hi = spec.velocity_range
    small = max(3, spec.height // 8)
    large = max(small + 1, spec.height // 3)
    for c in colors:
        kind = "rect" if rng.random() < 0.5 else "circle"
        if kind == "rect":
            size = (int(rng.integers(small, large + 1)), int(rng.integers(small, large + 1)))
        else:
            r = int(rng.integers(max(2, small // 2), max(3, large // 2) + 1))
            size = (r, r)
        vx = int(rng.integers(lo, hi + 1)) * (1 if rng.random() < 0.5 else -1)
        vy = int(rng.integers(-1, 2))
        shapes.append(
            Shape(
                kind=kind,
                x=int(rng.integers(0, spec.width)),
                y=int(rng.integers(0, spec.height)),
                size=size,
                velocity=(vx, vy),
                color=tuple(float(v) for v in PALETTE[c]),
            )
        )
    return shapes


def shape_mask(shape: Shape, t: int, width: int, height: int) -> np.ndarray:
    """Boolean (H, W) coverage of ``shape`` at frame ``t`` with wrap-around."""
    x = (shape.x + shape.velocity[0] * t) % width
    y = (shape.y + shape.velocity[1] * t) % height
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    mask = np.zeros((height, width), dtype=bool)
    # draw the copies that can reach into the frame after wrapping
    for dx in (-width, 0, width):
        for dy in (-height, 0, height):
            if shape.kind == "rect":
                w, h = shape.size
                x0, y0 = x + dx, y + dy
                mask |= (cols >= x0) & (cols < x0 + w) & (rows >= y0) & (rows < y0 + h)
            elif shape.kind == "circle":
                r = shape.size[0]
                mask |= (cols - (x + dx)) ** 2 + (rows - (y + dy)) ** 2 <= r * r
            else:
                raise ValueError(f"unknown shape kind {shape.kind!r}")
    return mask


def render_clip(bg: np.ndarray, shapes: list[Shape], frames: int) -> np.ndarray:
    """(T, 3, H, W) float32 frames; later shapes paint over earlier ones."""
    _, height, width = bg.shape
    out = np.empty((frames,) + bg.shape, dtype=np.float32)
    for t in range(frames):
        frame = bg.copy()
        for s in shapes:
            m = shape_mask(s, t, width, height)
            frame[:, m] = np.asarray(s.color, dtype=np.float32)[:, None]
        out[t] = frame
    return out


def make_clip(spec: SynthSpec, index: int) -> np.ndarray:
    rng = clip_rng(spec.seed, index)
    bg = background(spec.width, spec.height, rng)
    return render_clip(bg, random_shapes(spec, rng), spec.frames)


def generate(spec: SynthSpec, out_dir) -> list[Path]:
    """Write ``spec.n_clips`` clip directories under ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    paths = []
    for i in range(spec.n_clips):
        clip_dir = out_dir / f"clip_{i:05d}"
        save_clip(clip_dir, make_clip(spec, i), clip_id=clip_dir.name, fps=spec.fps)
        paths.append(clip_dir)
    log.info("wrote %d clips to %s", len(paths), out_dir)
    return paths
