"""Generator contract, the toy encoder-decoder, frame sampling and windowed inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffcore import Conv3d, Conv3dSpec, from_cf, leaky_relu, to_cf
from .masking import MaskSpec, apply_mask, make_mask

LOCAL_FRAMES = 5
NON_LOCAL_FRAMES = 3
DEFAULT_WINDOW = 10


@runtime_checkable
class GeneratorContract(Protocol):
    """What the trainer needs from a generator.

    ``forward`` maps a masked (B, T, C+1, H, W) video, mask in the last channel,
    to full (B, T, C, H, W) frames in [0, 1]. ``flow_loss`` returns a scalar
    auxiliary loss (zero for generators without a flow branch).
    """

    def forward(self, x: torch.Tensor, frame_index=None) -> torch.Tensor: ...

    def named_parameters(self): ...

    def flow_loss(self) -> torch.Tensor: ...


class ToyGenerator(nn.Module):
    """Small 3-D conv encoder-decoder.

    Three stride-(1,2,2) encoder convs, three residual convs at 1/8 resolution,
    three nearest-upsample + conv decoder blocks, sigmoid output. Spatial sizes
    must be divisible by 8.
    """

    channels = (4, 32, 64, 128, 64, 32, 3)

    def __init__(self, in_ch: int = 4, kernel=(3, 3, 3), slope: float = 0.2, generator: torch.Generator | None = None):
        super().__init__()
        c = (in_ch,) + self.channels[1:]
        self.in_ch = in_ch
        self.slope = slope
        down = (1, 2, 2)
        self.encoder = nn.ModuleList(
            Conv3d(Conv3dSpec(c[i], c[i + 1], kernel, down), generator=generator) for i in range(3)
        )
        self.residual = nn.ModuleList(Conv3d(Conv3dSpec(c[3], c[3], kernel), generator=generator) for _ in range(3))
        self.decoder = nn.ModuleList(
            Conv3d(Conv3dSpec(c[3 + i], c[4 + i], kernel), generator=generator) for i in range(3)
        )

    def forward(self, x: torch.Tensor, frame_index=None) -> torch.Tensor:
        if x.shape[2] != self.in_ch:
            raise ValueError(f"generator expects {self.in_ch} input channels (video + mask), got {x.shape[2]}")
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise ValueError(f"frame size {w}x{h} must be divisible by 8")
        a = to_cf(x)
        for conv in self.encoder:
            a = leaky_relu(conv(a), self.slope)
        for conv in self.residual:
            a = a + leaky_relu(conv(a), self.slope)
        for i, conv in enumerate(self.decoder):
            a = conv(F.interpolate(a, scale_factor=(1, 2, 2), mode="nearest"))
            if i < len(self.decoder) - 1:
                a = leaky_relu(a, self.slope)
        return from_cf(torch.sigmoid(a))

    def flow_loss(self) -> torch.Tensor:
        return torch.zeros(())


GENERATORS: dict[str, Callable[..., nn.Module]] = {"toy": ToyGenerator}
RESERVED = ("e2fgvi", "propainter")


def register_generator(name: str, factory: Callable[..., nn.Module]) -> None:
    """Plug in an external generator adapter under ``generator.kind = name``."""
    GENERATORS[name] = factory


def build_generator(kind: str = "toy", **kwargs) -> nn.Module:
    if kind not in GENERATORS:
        if kind in RESERVED:
            raise LookupError(f"generator kind {kind!r} is reserved for an external adapter; register it first")
        raise LookupError(f"unknown generator kind {kind!r}; known: {sorted(GENERATORS)}")
    return GENERATORS[kind](**kwargs)


# -- frame sampling ----------------------------------------------------------


@dataclass(frozen=True)
class ClipSample:
    local: tuple[int, ...]
    non_local: tuple[int, ...]

    @property
    def indices(self) -> list[int]:
        """Local frames first, then the context frames."""
        return list(self.local) + list(self.non_local)


def sample_clip(
    t_total: int, rng: np.random.Generator, n_local: int = LOCAL_FRAMES, n_non_local: int = NON_LOCAL_FRAMES
) -> ClipSample:
    """A contiguous run of ``n_local`` frames plus ``n_non_local`` distinct others."""
    if t_total < n_local + n_non_local:
        raise ValueError(f"clip has {t_total} frames, need at least {n_local + n_non_local}")
    start = int(rng.integers(0, t_total - n_local + 1))
    local = tuple(range(start, start + n_local))
    rest = np.array([i for i in range(t_total) if i < start or i >= start + n_local])
    picked = np.sort(rng.choice(rest, size=n_non_local, replace=False))
    return ClipSample(local, tuple(int(i) for i in picked))


# -- inference ---------------------------------------------------------------


def window_bounds(t_total: int, window: int = DEFAULT_WINDOW) -> list[tuple[int, int]]:
    """Non-overlapping [start, end) windows covering every frame once."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if t_total < 1:
        raise ValueError("empty video")
    return [(s, min(s + window, t_total)) for s in range(0, t_total, window)]


@torch.no_grad()
def sliding_window_infer(gen, video, m: float, window: int = DEFAULT_WINDOW, composite: bool = False) -> torch.Tensor:
    """Outpaint a (B, T, 3, H, W) pixel video window by window."""
    video = torch.as_tensor(np.asarray(video) if not isinstance(video, torch.Tensor) else video, dtype=torch.float32)
    b, t, _, h, w = video.shape
    outs = []
    for s, e in window_bounds(t, window):
        clip = video[:, s:e]
        mask = torch.from_numpy(make_mask(MaskSpec(m, w), (e - s, h, w)))
        pred = gen(apply_mask(clip, mask), frame_index=list(range(s, e)))
        if composite:
            pred = pred * mask + clip * (1 - mask)
        outs.append(pred)
    return torch.cat(outs, dim=1)
