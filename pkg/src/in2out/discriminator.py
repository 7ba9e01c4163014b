"""Hierarchical spatio-temporal discriminator and the baseline design zoo.

The feature extraction module (FEM) is a shallow conv stack whose receptive
field is comparable to an outpainted band; its output is scored locally.
The feature comparison module (FCM) continues from the FEM output down to a
single-channel logit map whose receptive field spans the whole clip.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
import torch.nn as nn

from .diffcore import Conv3d, Conv3dSpec, from_cf, leaky_relu, to_cf
from .losses import (
    DiscFeatures,
    LossWeights,
    adv_gen_loss,
    hinge_fake,
    hinge_real,
    outpainting_terms,
)
from .masking import band_width, out_extract

DEFAULT_KERNEL = (3, 7, 7)
DEFAULT_STRIDE = (1, 2, 2)
FEM_CHANNELS = (3, 32, 64, 128)
FCM_CHANNELS = (128, 128, 128, 1)


class DesignKind(str, enum.Enum):
    none = "none"
    global_tpatch = "global_tpatch"
    partial_only = "partial_only"
    global_and_partial = "global_and_partial"
    local_only = "local_only"
    hierarchical = "hierarchical"

    @property
    def label(self) -> str:
        return DESIGN_LABELS[self]


# Row order and names follow the discriminator-design comparison table.
DESIGN_LABELS = {
    DesignKind.none: "None",
    DesignKind.global_tpatch: "Global (T-PatchGAN)",
    DesignKind.partial_only: "Partial-only",
    DesignKind.global_and_partial: "Global & partial",
    DesignKind.local_only: "Local-only",
    DesignKind.hierarchical: "Hierarchical",
}
TABLE_ORDER = tuple(DESIGN_LABELS)


def _stack(channels: Sequence[int], kernel, stride) -> list[Conv3dSpec]:
    return [Conv3dSpec(a, b, kernel, stride) for a, b in zip(channels[:-1], channels[1:])]


@dataclass(frozen=True)
class DiscConfig:
    fem_layers: tuple[Conv3dSpec, ...] = field(default_factory=lambda: tuple(_stack(FEM_CHANNELS, DEFAULT_KERNEL, DEFAULT_STRIDE)))
    fcm_layers: tuple[Conv3dSpec, ...] = field(default_factory=lambda: tuple(_stack(FCM_CHANNELS, DEFAULT_KERNEL, DEFAULT_STRIDE)))
    slope: float = 0.2
    spectral_norm: bool = True

    def __post_init__(self):
        if not self.fem_layers:
            raise ValueError("FEM needs at least one layer")
        if self.fcm_layers:
            if self.fcm_layers[-1].out_ch != 1:
                raise ValueError("final FCM layer must have out_ch=1")
            if self.fcm_layers[0].in_ch != self.fem_layers[-1].out_ch:
                raise ValueError("FCM input channels must match FEM output channels")

    @classmethod
    def with_kernel(cls, kernel=DEFAULT_KERNEL, spectral_norm: bool = True, slope: float = 0.2) -> "DiscConfig":
        return cls(
            tuple(_stack(FEM_CHANNELS, kernel, DEFAULT_STRIDE)),
            tuple(_stack(FCM_CHANNELS, kernel, DEFAULT_STRIDE)),
            slope,
            spectral_norm,
        )

    def without_fcm(self) -> "DiscConfig":
        return DiscConfig(self.fem_layers, (), self.slope, self.spectral_norm)


class Discriminator(nn.Module):
    """FEM followed by FCM.

    The FEM output is taken before its activation; the FCM opens with the
    LeakyReLU that separates the two stacks. No activation after the last layer.
    """

    def __init__(self, config: DiscConfig | None = None, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config or DiscConfig()
        sn = self.config.spectral_norm
        self.fem = nn.ModuleList(Conv3d(s, sn, generator) for s in self.config.fem_layers)
        self.fcm = nn.ModuleList(Conv3d(s, sn, generator) for s in self.config.fcm_layers)

    def fem_forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[2] != self.config.fem_layers[0].in_ch:
            raise ValueError(f"FEM expects {self.config.fem_layers[0].in_ch} channels, got {x.shape[2]}")
        h = to_cf(x)
        for i, conv in enumerate(self.fem):
            if i:
                h = leaky_relu(h, self.config.slope)
            h = conv(h)
        return from_cf(h)

    def fcm_forward(self, local: torch.Tensor) -> torch.Tensor:
        if not len(self.fcm):
            raise RuntimeError("this discriminator was built without an FCM")
        if local.shape[2] != self.config.fcm_layers[0].in_ch:
            raise ValueError(f"FCM expects {self.config.fcm_layers[0].in_ch} channels, got {local.shape[2]}")
        h = to_cf(local)
        for conv in self.fcm:
            h = conv(leaky_relu(h, self.config.slope))
        return from_cf(h)

    def forward(self, x: torch.Tensor) -> DiscFeatures:
        local = self.fem_forward(x)
        glob = self.fcm_forward(local) if len(self.fcm) else None
        return DiscFeatures(local, glob)


# -- receptive fields --------------------------------------------------------


def receptive_field(specs: Sequence[Conv3dSpec]) -> list[tuple[int, int, int]]:
    """Exact per-layer receptive field (t, h, w): RF_l = RF_{l-1} + (k_l - 1) * jump_{l-1}."""
    if not specs:
        raise ValueError("receptive_field needs at least one layer")
    rf = [1, 1, 1]
    jump = [1, 1, 1]
    out = []
    for s in specs:
        for a in range(3):
            rf[a] += (s.kernel[a] - 1) * jump[a]
            jump[a] *= s.stride[a]
        out.append(tuple(rf))
    return out


def heuristic_rf(kernel: int, strides: Sequence[int]) -> int:
    """The kernel-times-total-stride estimate (e.g. 7 * 2**3 = 56); not exact."""
    return kernel * math.prod(strides)


class ProbeTooSmall(ValueError):
    pass


def empirical_rf(net: Callable[[torch.Tensor], torch.Tensor], probe_shape, unit=None, strict: bool = True, in_ch: int = 3):
    """Extent (t, h, w) of the input region with nonzero gradient for one output unit.

    ``probe_shape`` is (T, H, W) or (B, T, C, H, W). ``unit`` picks the output
    (t, h, w) index and defaults to the center. Axes where the region touches
    the probe border are reported as None with ``strict=False``; with
    ``strict=True`` they raise :class:`ProbeTooSmall`.
    """
    if len(probe_shape) == 3:
        probe_shape = (1, probe_shape[0], in_ch) + tuple(probe_shape[1:])
    owner = net if isinstance(net, nn.Module) else getattr(net, "__self__", None)
    param = next(owner.parameters(), None) if isinstance(owner, nn.Module) else None
    dtype = param.dtype if param is not None else torch.get_default_dtype()
    x = torch.randn(probe_shape, dtype=dtype, generator=torch.Generator().manual_seed(0)).requires_grad_(True)
    was_training = owner.training if isinstance(owner, nn.Module) else None
    if was_training:
        owner.eval()  # keep spectral-norm state untouched
    try:
        y = net(x)
    finally:
        if was_training:
            owner.train()
    if min(y.shape) < 1:
        raise ProbeTooSmall(f"probe {probe_shape} produces empty output {tuple(y.shape)}")
    t, h, w = unit if unit is not None else (y.shape[1] // 2, y.shape[3] // 2, y.shape[4] // 2)
    (grad,) = torch.autograd.grad(y[0, t, 0, h, w], x)
    nz = grad[0].abs().sum(dim=1) != 0  # (T, H, W)
    if not nz.any():
        raise ProbeTooSmall("output unit has no input dependence")
    extents = []
    for axis in range(3):
        proj = nz.movedim(axis, 0).reshape(nz.shape[axis], -1).any(dim=1)
        idx = torch.nonzero(proj)
        lo, hi = int(idx.min()), int(idx.max())
        clipped = lo == 0 or hi == nz.shape[axis] - 1
        if clipped:
            if strict:
                raise ProbeTooSmall(f"receptive field clipped by probe along axis {'thw'[axis]}")
            extents.append(None)
        else:
            extents.append(hi - lo + 1)
    return tuple(extents)


# -- design zoo --------------------------------------------------------------


class Design(nn.Module):
    """A discriminator arrangement plus its discriminator and generator losses.

    ``d_loss`` returns the scalar to minimize and a dict of report terms;
    ``g_adv`` returns the generator's adversarial term.
    """

    kind: DesignKind
    has_discriminator = True

    def __init__(self, weights: LossWeights, literal_adv: bool = False):
        super().__init__()
        self.weights = weights
        self.literal_adv = literal_adv

    def _adv(self, score_map: torch.Tensor) -> torch.Tensor:
        return score_map.mean() if self.literal_adv else -score_map.mean()

    def d_loss(self, real, fake, m):
        raise NotImplementedError

    def g_adv(self, fake, m):
        raise NotImplementedError


def _paired(disc: Discriminator, real: torch.Tensor, fake: torch.Tensor) -> tuple[DiscFeatures, DiscFeatures]:
    # one forward over [real; fake] so spectral-norm state advances once per step
    feats = disc(torch.cat([real, fake], dim=0))
    n = real.shape[0]
    split = lambda t: (t[:n], t[n:]) if t is not None else (None, None)  # noqa: E731
    lr, lf = split(feats.local)
    gr, gf = split(feats.global_)
    return DiscFeatures(lr, gr), DiscFeatures(lf, gf)


def _zero(ref: torch.Tensor) -> torch.Tensor:
    return ref.new_zeros(())


class NoDiscriminator(Design):
    kind = DesignKind.none
    has_discriminator = False

    def d_loss(self, real, fake, m):
        return None, {}

    def g_adv(self, fake, m):
        return _zero(fake)


class GlobalTPatch(Design):
    """Full video in, final logits only."""

    kind = DesignKind.global_tpatch

    def __init__(self, weights, config: DiscConfig, generator=None, literal_adv=False):
        super().__init__(weights, literal_adv)
        self.disc = Discriminator(config, generator)

    def _input(self, video, m):
        return video

    def d_loss(self, real, fake, m):
        x, z = _paired(self.disc, self._input(real, m), self._input(fake, m))
        r, f = hinge_real(x.global_), hinge_fake(z.global_)
        return r + f, {"out_loss_real_global": r, "out_loss_fake_global": f}

    def g_adv(self, fake, m):
        return self._adv(self.disc(self._input(fake, m)).global_)


class PartialOnly(GlobalTPatch):
    """Band columns only (pixel space), final logits only."""

    kind = DesignKind.partial_only

    def _input(self, video, m):
        return out_extract(video, m)


class GlobalAndPartial(Design):
    """Two independent discriminators; their losses are averaged."""

    kind = DesignKind.global_and_partial

    def __init__(self, weights, config: DiscConfig, generator=None, literal_adv=False):
        super().__init__(weights, literal_adv)
        self.global_branch = GlobalTPatch(weights, config, generator, literal_adv)
        self.partial_branch = PartialOnly(weights, config, generator, literal_adv)

    def d_loss(self, real, fake, m):
        lg, rg = self.global_branch.d_loss(real, fake, m)
        lp, rp = self.partial_branch.d_loss(real, fake, m)
        report = {k: 0.5 * (rg[k] + rp[k]) for k in rg}
        return 0.5 * (lg + lp), report

    def g_adv(self, fake, m):
        return 0.5 * (self.global_branch.g_adv(fake, m) + self.partial_branch.g_adv(fake, m))


class LocalOnly(Design):
    """Full video in; loss on real local features and band-restricted fake local features."""

    kind = DesignKind.local_only

    def __init__(self, weights, config: DiscConfig, generator=None, literal_adv=False):
        super().__init__(weights, literal_adv)
        self.disc = Discriminator(config.without_fcm(), generator)

    def d_loss(self, real, fake, m):
        x, z = _paired(self.disc, real, fake)
        r, f = hinge_real(x.local), hinge_fake(out_extract(z.local, m))
        return r + f, {"out_loss_real_local": r, "out_loss_fake_local": f}

    def g_adv(self, fake, m):
        return self._adv(out_extract(self.disc(fake).local, m))


class Hierarchical(Design):
    """FEM + FCM trained with the outpainting loss."""

    kind = DesignKind.hierarchical

    def __init__(self, weights, config: DiscConfig, generator=None, literal_adv=False):
        super().__init__(weights, literal_adv)
        self.disc = Discriminator(config, generator)

    def d_loss(self, real, fake, m):
        x, z = _paired(self.disc, real, fake)
        terms = outpainting_terms(x, z, m, self.weights.alpha_local, self.weights.alpha_global)
        return sum(terms.values()), terms

    def g_adv(self, fake, m):
        return adv_gen_loss(self.disc(fake), literal=self.literal_adv)


DESIGNS = {
    DesignKind.none: NoDiscriminator,
    DesignKind.global_tpatch: GlobalTPatch,
    DesignKind.partial_only: PartialOnly,
    DesignKind.global_and_partial: GlobalAndPartial,
    DesignKind.local_only: LocalOnly,
    DesignKind.hierarchical: Hierarchical,
}


def build_design(
    kind: DesignKind | str,
    config: DiscConfig | None = None,
    weights: LossWeights | None = None,
    generator: torch.Generator | None = None,
    literal_adv: bool = False,
) -> Design:
    kind = DesignKind(kind)
    weights = weights or LossWeights()
    if kind is DesignKind.none:
        return NoDiscriminator(weights, literal_adv)
    return DESIGNS[kind](weights, config or DiscConfig(), generator, literal_adv)


def feature_stride(config: DiscConfig) -> int:
    """Horizontal downsampling factor of the FEM."""
    return math.prod(s.stride[2] for s in config.fem_layers)


def check_band_support(kind: DesignKind | str, config: DiscConfig, width: int, ratio: float) -> None:
    """Raise if ``ratio`` leaves an empty band where ``kind`` needs one."""
    kind = DesignKind(kind)
    if kind in (DesignKind.partial_only, DesignKind.global_and_partial):
        band_width(ratio, width)
    if kind in (DesignKind.local_only, DesignKind.hierarchical):
        fem_w = width
        for s in config.fem_layers:
            fem_w = s.output_size((1, 1, fem_w))[2]
        band_width(ratio, fem_w)
