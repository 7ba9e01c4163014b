"""Video tensor data model, clip directories and the ``.vten`` fixture format.

A clip directory looks like::

    clip_00000/
        manifest.json        {"clip_id", "width", "height", "frame_count", "fps"}
        frames/00000.png     8-bit RGB, zero-indexed, 5-digit names
        frames/00001.png
        ...

A ``.vten`` file is ``b"VTEN1"``, a uint32 axis count, one uint32 per axis
length, then float32 values in row-major order. Everything is little-endian.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"VTEN1"
FRAME_DIGITS = 5
SPACE_TAGS = ("pixel", "feature")


class TensorIOError(ValueError):
    """Malformed clip directory or fixture file."""


@dataclass(frozen=True)
class VideoTensor:
    """A (B, T, C, H, W) real array tagged with the space it lives in."""

    data: np.ndarray
    space_tag: str = "feature"

    def __post_init__(self):
        if self.space_tag not in SPACE_TAGS:
            raise ValueError(f"space_tag must be one of {SPACE_TAGS}, got {self.space_tag!r}")
        if self.data.ndim != 5:
            raise ValueError(f"VideoTensor needs 5 axes (B,T,C,H,W), got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"all axes must be non-empty, got shape {self.data.shape}")
        if self.space_tag == "pixel" and self.data.size:
            lo, hi = float(self.data.min()), float(self.data.max())
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"pixel tensor outside [0,1]: min={lo}, max={hi}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class ClipManifest:
    clip_id: str
    width: int
    height: int
    frame_count: int
    fps: float = 24.0

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "width": self.width,
            "height": self.height,
            "frame_count": self.frame_count,
            "fps": self.fps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClipManifest":
        try:
            return cls(
                clip_id=str(obj["clip_id"]),
                width=int(obj["width"]),
                height=int(obj["height"]),
                frame_count=int(obj["frame_count"]),
                fps=float(obj.get("fps", 24.0)),
            )
        except KeyError as exc:
            raise TensorIOError(f"manifest missing key {exc.args[0]!r}") from None


def frame_name(index: int) -> str:
    return f"{index:0{FRAME_DIGITS}d}.png"


# -- .vten fixtures ---------------------------------------------------------


def write_vten(path, array) -> None:
    """Write any n-d real array as float32 ``.vten``."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def read_vten(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise TensorIOError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise TensorIOError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) < pos + 4 * ndim:
        raise TensorIOError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{ndim}I", raw, pos)
    pos += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - pos != 4 * count:
        raise TensorIOError(f"{path}: payload has {len(raw) - pos} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4", offset=pos, count=count).reshape(shape).astype(np.float32)


def save_fixture(t: VideoTensor, path) -> None:
    write_vten(path, t.data)


def load_fixture(path, space_tag: str = "feature") -> VideoTensor:
    return VideoTensor(read_vten(path), space_tag=space_tag)


# -- clip directories -------------------------------------------------------


def to_uint8(frames: np.ndarray) -> np.ndarray:
    """Quantize [0,1] floats to 8-bit with round-half-to-even."""
    return np.clip(np.rint(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)


def save_clip(dir, frames: np.ndarray, clip_id: str | None = None, fps: float = 24.0) -> ClipManifest:
    """Write frames shaped (T, 3, H, W) in [0,1] (or uint8) as a clip directory."""
    dir = Path(dir)
    frames = np.asarray(frames)
    if frames.ndim == 5:
        if frames.shape[0] != 1:
            raise ValueError("save_clip writes a single clip; got batch > 1")
        frames = frames[0]
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ValueError(f"expected (T,3,H,W) frames, got {frames.shape}")
    if frames.dtype != np.uint8:
        frames = to_uint8(frames)
    (dir / "frames").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        Image.fromarray(np.transpose(frame, (1, 2, 0)), mode="RGB").save(dir / "frames" / frame_name(i))
    manifest = ClipManifest(clip_id or dir.name, frames.shape[3], frames.shape[2], frames.shape[0], fps)
    (dir / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2) + "\n")
    return manifest


def read_manifest(dir) -> ClipManifest:
    path = Path(dir) / "manifest.json"
    if not path.is_file():
        raise TensorIOError(f"{dir}: missing manifest.json")
    return ClipManifest.from_json(json.loads(path.read_text()))


def load_clip(dir) -> VideoTensor:
    """Load a clip directory as a (1, T, 3, H, W) pixel tensor."""
    dir = Path(dir)
    manifest = read_manifest(dir)
    files = sorted((dir / "frames").glob("*.png"))
    if len(files) != manifest.frame_count:
        raise TensorIOError(f"{dir}: manifest says {manifest.frame_count} frames, found {len(files)}")
    expected = [frame_name(i) for i in range(manifest.frame_count)]
    if [f.name for f in files] != expected:
        raise TensorIOError(f"{dir}: frame files are not zero-indexed {FRAME_DIGITS}-digit names")
    frames = []
    for f in files:
        with Image.open(f) as im:
            arr = np.asarray(im.convert("RGB"))
        if arr.shape[:2] != (manifest.height, manifest.width):
            raise TensorIOError(
                f"{f}: size {arr.shape[1]}x{arr.shape[0]} != manifest {manifest.width}x{manifest.height}"
            )
        frames.append(arr)
    video = np.stack(frames).transpose(0, 3, 1, 2).astype(np.float32) / np.float32(255.0)
    return VideoTensor(video[None], space_tag="pixel")


def list_clips(root) -> list[Path]:
    """Clip directories under ``root`` sorted by name."""
    root = Path(root)
    if (root / "manifest.json").is_file():
        return [root]
    clips = sorted(p for p in root.iterdir() if (p / "manifest.json").is_file()) if root.is_dir() else []
    if not clips:
        raise TensorIOError(f"{root}: no clip directories found")
    return clips
