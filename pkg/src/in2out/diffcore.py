"""Differentiable primitives and the optimizer.

Autograd comes from torch; this module fixes the forward semantics the rest of
the package relies on (layout, padding, spectral normalization, Adam) so they
can be checked against finite differences in isolation.

Video tensors are (B, T, C, H, W). Conv layers inside networks run on the
channel-first (B, C, T, H, W) layout and convert only at module boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

Triple = tuple[int, int, int]


def _triple(v) -> Triple:
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return v


@dataclass(frozen=True)
class Conv3dSpec:
    in_ch: int
    out_ch: int
    kernel: Triple = (3, 3, 3)
    stride: Triple = (1, 1, 1)
    padding: Triple | None = None  # None -> floor(k/2) per axis

    def __post_init__(self):
        object.__setattr__(self, "kernel", _triple(self.kernel))
        object.__setattr__(self, "stride", _triple(self.stride))
        pad = tuple(k // 2 for k in self.kernel) if self.padding is None else _triple(self.padding)
        object.__setattr__(self, "padding", pad)
        if self.in_ch < 1 or self.out_ch < 1:
            raise ValueError(f"channel counts must be >= 1: {self.in_ch}->{self.out_ch}")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError(f"invalid conv geometry {self}")

    def output_size(self, size: Triple) -> Triple:
        """Output (T, H, W) for input (T, H, W)."""
        out = tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(size, self.kernel, self.stride, self.padding))
        if min(out) < 1:
            raise ValueError(f"input {size} smaller than kernel footprint of {self}")
        return out


def conv3d_cf(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None, spec: Conv3dSpec) -> torch.Tensor:
    """Cross-correlation on channel-first (B, C, T, H, W) input."""
    if x.shape[1] != spec.in_ch or w.shape[:2] != (spec.out_ch, spec.in_ch):
        raise ValueError(
            f"channel mismatch: input has {x.shape[1]} channels, weight {tuple(w.shape)}, spec {spec.in_ch}->{spec.out_ch}"
        )
    if tuple(w.shape[2:]) != spec.kernel:
        raise ValueError(f"weight kernel {tuple(w.shape[2:])} != spec kernel {spec.kernel}")
    spec.output_size(tuple(x.shape[2:]))
    return F.conv3d(x, w, b, stride=spec.stride, padding=spec.padding)


def conv3d(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None, spec: Conv3dSpec) -> torch.Tensor:
    """Cross-correlation on a (B, T, C, H, W) video tensor."""
    return conv3d_cf(x.transpose(1, 2), w, b, spec).transpose(1, 2)


def to_cf(x: torch.Tensor) -> torch.Tensor:
    return x.transpose(1, 2)


def from_cf(x: torch.Tensor) -> torch.Tensor:
    return x.transpose(1, 2)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    # where() rather than F.leaky_relu so the subgradient at exactly 0 is the negative slope
    return torch.where(x > 0, x, x * slope)


# -- spectral normalization ------------------------------------------------


def _l2n(v: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return v / (v.norm() + eps)


@dataclass
class PowerIterState:
    u: torch.Tensor  # left singular vector estimate, length out_ch
    v: torch.Tensor  # right singular vector estimate, length in_ch*prod(kernel)

    @classmethod
    def init(cls, w: torch.Tensor, generator: torch.Generator | None = None) -> "PowerIterState":
        rows = w.shape[0]
        cols = w.numel() // rows
        u = torch.randn(rows, generator=generator, dtype=w.dtype)
        v = torch.randn(cols, generator=generator, dtype=w.dtype)
        return cls(_l2n(u), _l2n(v))


def spectral_normalize(
    w: torch.Tensor, state: PowerIterState, n_iter: int = 1, eps: float = 1e-12
) -> tuple[torch.Tensor, PowerIterState]:
    """Return ``w / sigma`` and the advanced power-iteration state.

    ``sigma = u^T W v`` is differentiable in ``w``; ``u`` and ``v`` are not.
    With ``n_iter=0`` the stored vectors are used as-is (evaluation mode).
    An all-but-zero ``sigma`` leaves ``w`` unchanged.
    """
    mat = w.reshape(w.shape[0], -1)
    u, v = state.u, state.v
    with torch.no_grad():
        for _ in range(n_iter):
            v = _l2n(mat.t() @ u)
            u = _l2n(mat @ v)
    sigma = torch.dot(u, mat @ v)
    new_state = PowerIterState(u.detach().clone(), v.detach().clone())
    if float(sigma.detach().abs()) < eps:
        return w, new_state
    return w / sigma, new_state


class Conv3d(nn.Module):
    """3-D conv on channel-first input with optional spectral normalization.

    In training mode each forward advances the power iteration by one step and
    stores the vectors; in eval mode the stored vectors are reused unchanged.
    """

    def __init__(self, spec: Conv3dSpec, spectral_norm: bool = False, generator: torch.Generator | None = None):
        super().__init__()
        self.spec = spec
        self.spectral_norm = spectral_norm
        fan_in = spec.in_ch * math.prod(spec.kernel)
        bound = 1.0 / math.sqrt(fan_in)
        # torch's default conv init: kaiming_uniform(a=sqrt(5)) reduces to U(-1/sqrt(fan_in), ..)
        w = torch.empty(spec.out_ch, spec.in_ch, *spec.kernel).uniform_(-bound, bound, generator=generator)
        b = torch.empty(spec.out_ch).uniform_(-bound, bound, generator=generator)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(b)
        if spectral_norm:
            st = PowerIterState.init(w, generator)
            self.register_buffer("sn_u", st.u)
            self.register_buffer("sn_v", st.v)

    def effective_weight(self) -> torch.Tensor:
        if not self.spectral_norm:
            return self.weight
        state = PowerIterState(self.sn_u, self.sn_v)
        w, new = spectral_normalize(self.weight, state, n_iter=1 if self.training else 0)
        if self.training:
            with torch.no_grad():
                self.sn_u.copy_(new.u)
                self.sn_v.copy_(new.v)
        return w

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv3d_cf(x, self.effective_weight(), self.bias, self.spec)

    def extra_repr(self) -> str:
        s = self.spec
        return f"{s.in_ch}->{s.out_ch}, k={s.kernel}, s={s.stride}, p={s.padding}, sn={self.spectral_norm}"


# -- optimizer -------------------------------------------------------------


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


@dataclass
class AdamState:
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)


def adam_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor | None],
    state: AdamState,
    lr: float = 4e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place Adam update with bias correction.

    Parameters whose gradient is None are skipped and keep their moments.
    All gradients are validated before any parameter is touched.
    """
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise NonFiniteGradient(name)
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = state.exp_avg.get(name)
            if m is None:
                m = state.exp_avg[name] = torch.zeros_like(p)
                state.exp_avg_sq[name] = torch.zeros_like(p)
            v = state.exp_avg_sq[name]
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / bc1)
    return state


class Adam:
    """Adam over a module's named parameters."""

    def __init__(self, module: nn.Module, lr: float = 4e-5, betas=(0.9, 0.999), eps: float = 1e-8):
        self.module = module
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.module.parameters():
            p.grad = None

    def step(self) -> None:
        named = dict(self.module.named_parameters())
        adam_step(
            named,
            {n: p.grad for n, p in named.items()},
            self.state,
            lr=self.lr,
            beta1=self.betas[0],
            beta2=self.betas[1],
            eps=self.eps,
        )
