"""Conformance checks any generator adapter must pass.

Adapter authors call :func:`check_generator_contract` from their own tests::

    from in2out.testing import check_generator_contract
    check_generator_contract(lambda: MyAdapter(weights="..."))
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch

from .masking import MaskSpec, apply_mask, make_mask


class ContractViolation(AssertionError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ContractViolation(msg)


def check_generator_contract(factory: Callable[[], torch.nn.Module], shape=(1, 6, 3, 16, 32), ratio: float = 0.25) -> list[str]:
    """Run shape, range, determinism, gradient and error checks; return the names of passed checks."""
    b, t, c, h, w = shape
    rng = np.random.default_rng(0)
    video = torch.from_numpy(rng.random(shape).astype(np.float32))
    mask = torch.from_numpy(make_mask(MaskSpec(ratio, w), (t, h, w)))
    x = apply_mask(video, mask)
    gen = factory()
    passed = []

    with torch.no_grad():
        out = gen(x, frame_index=list(range(t)))
    _require(tuple(out.shape) == shape, f"output shape {tuple(out.shape)} != {shape}")
    passed.append("shape")

    _require(bool(torch.isfinite(out).all()), "non-finite output")
    _require(float(out.min()) >= 0.0 and float(out.max()) <= 1.0, "output outside [0, 1]")
    passed.append("range")

    gen.eval()
    with torch.no_grad():
        a = gen(x, frame_index=list(range(t)))
        b2 = gen(x, frame_index=list(range(t)))
    _require(torch.equal(a, b2), "forward is not deterministic")
    passed.append("determinism")

    gen.train()
    named = dict(gen.named_parameters())
    _require(len(named) > 0, "generator exposes no parameters")
    for p in named.values():
        p.grad = None
    loss = (gen(x) - video).abs().mean() + gen.flow_loss()
    loss.backward()
    missing = [n for n, p in named.items() if p.grad is None]
    _require(not missing, f"parameters without gradient: {missing[:5]}")
    _require(all(bool(torch.isfinite(p.grad).all()) for p in named.values()), "non-finite parameter gradient")
    passed.append("gradients")

    fl = gen.flow_loss()
    _require(isinstance(fl, torch.Tensor) and fl.dim() == 0, "flow_loss must return a scalar tensor")
    passed.append("flow_loss")

    try:
        gen(video)
    except ValueError:
        passed.append("channel_check")
    else:
        raise ContractViolation("input without mask channel was accepted")
    return passed
