"""Outpainting band geometry.

A mask ratio ``m`` splits the frame width into two lateral bands of
``floor(m * W / 2)`` columns each (left ``[0, band)``, right ``[W - band, W)``)
and a kept center. Mask value 1 marks columns to generate.

Functions taking tensors work on numpy arrays and torch tensors alike and
only ever touch the last (width) axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

DEFAULT_RATIO_RANGE = (1 / 12, 1 / 3)


class MaskError(ValueError):
    pass


def band_width(m: float, width: int) -> int:
    """Columns per side for ratio ``m``; raises if the band is empty or the bands overlap."""
    if not 0.0 < m < 1.0:
        raise MaskError(f"mask ratio must lie in (0,1), got {m}")
    # tolerate float noise like 0.25*432/2 = 53.999999
    band = math.floor(m * width / 2 + 1e-9)
    if band < 1:
        raise MaskError(f"empty band: m={m} at width {width} gives m*W/2={m * width / 2:.3f} < 1")
    if 2 * band > width:
        raise MaskError(f"bands overlap: 2*{band} > width {width}")
    return band


@dataclass(frozen=True)
class OutBands:
    left: range
    right: range

    @property
    def band(self) -> int:
        return len(self.left)


@dataclass(frozen=True)
class MaskSpec:
    ratio: float
    width: int

    @property
    def band(self) -> int:
        return band_width(self.ratio, self.width)

    def bands(self) -> OutBands:
        b = self.band
        return OutBands(range(0, b), range(self.width - b, self.width))

    def column_mask(self) -> np.ndarray:
        cols = np.zeros(self.width, dtype=np.float32)
        b = self.band
        cols[:b] = 1.0
        cols[self.width - b :] = 1.0
        return cols


def make_mask(spec: MaskSpec, shape: tuple[int, int, int]) -> np.ndarray:
    """Binary mask shaped (1, T, 1, H, W), constant over frames and rows."""
    t, h, w = shape
    if w != spec.width:
        raise MaskError(f"mask width {spec.width} does not match frame width {w}")
    cols = spec.column_mask()
    return np.broadcast_to(cols, (1, t, 1, h, w)).copy()


def _cat(parts, axis=-1):
    if isinstance(parts[0], torch.Tensor):
        return torch.cat(parts, dim=axis)
    return np.concatenate(parts, axis=axis)


def out_extract(x, m: float):
    """Left and right bands concatenated along width; other axes untouched."""
    w = x.shape[-1]
    b = band_width(m, w)
    return _cat([x[..., :b], x[..., w - b :]])


def center(x, m: float):
    """The kept columns, complement of :func:`out_extract`."""
    w = x.shape[-1]
    b = band_width(m, w)
    return x[..., b : w - b]


def apply_mask(video, mask):
    """Zero the band columns and append the mask as an extra channel (axis 2)."""
    if tuple(mask.shape[-2:]) != tuple(video.shape[-2:]) or mask.shape[1] != video.shape[1]:
        raise MaskError(f"mask shape {tuple(mask.shape)} incompatible with video {tuple(video.shape)}")
    if isinstance(video, torch.Tensor):
        mask = torch.as_tensor(mask, dtype=video.dtype, device=video.device)
        mask = mask.expand(video.shape[0], -1, 1, -1, -1)
        return torch.cat([video * (1 - mask), mask], dim=2)
    mask = np.broadcast_to(np.asarray(mask, dtype=video.dtype), (video.shape[0], video.shape[1], 1) + video.shape[-2:])
    return np.concatenate([video * (1 - mask), mask], axis=2)


def sample_ratio(lo: float = DEFAULT_RATIO_RANGE[0], hi: float = DEFAULT_RATIO_RANGE[1], rng=None) -> float:
    """Uniform mask ratio in [lo, hi]."""
    if not 0.0 < lo <= hi < 1.0:
        raise MaskError(f"invalid ratio range [{lo}, {hi}]")
    if lo == hi:
        return float(lo)
    rng = np.random.default_rng() if rng is None else rng
    return float(rng.uniform(lo, hi))
