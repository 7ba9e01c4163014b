"""Training objectives.

Every expectation is a plain arithmetic mean over all elements of the tensor
(batch included). Discriminator outputs are bundled as :class:`DiscFeatures`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
import torch

from .masking import out_extract


class DiscFeatures(NamedTuple):
    local: torch.Tensor  # FEM output, (B, T, C, H/8, W/8) under defaults
    global_: torch.Tensor | None  # FCM logits, single channel


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 1.0
    lambda_valid: float = 1.0
    lambda_adv: float = 0.04
    lambda_flow: float = 0.01
    alpha_local: float = 0.5
    alpha_global: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and nonnegative, got {v}")

    def to_json(self) -> dict:
        return asdict(self)


PROFILES = {
    "e2fgvi": {"lambda_flow": 0.01, "lambda_adv": 0.04},
    "propainter": {"lambda_flow": 1.0, "lambda_adv": 0.01},
}

REPORT_KEYS = (
    "d_loss",
    "out_loss_real_local",
    "out_loss_real_global",
    "out_loss_fake_local",
    "out_loss_fake_global",
    "adv",
    "rec_hole",
    "rec_valid",
    "flow",
    "total_g",
)


def hinge_real(t: torch.Tensor) -> torch.Tensor:
    return torch.relu(1.0 - t).mean()


def hinge_fake(t: torch.Tensor) -> torch.Tensor:
    return torch.relu(1.0 + t).mean()


def disc_loss_global(x_logits: torch.Tensor, z_logits: torch.Tensor) -> torch.Tensor:
    """Hinge loss on final logits only (T-PatchGAN objective)."""
    return hinge_real(x_logits) + hinge_fake(z_logits)


def outpainting_terms(
    x_feats: DiscFeatures, z_feats: DiscFeatures, m: float, alpha_local: float = 0.5, alpha_global: float = 0.5
) -> dict[str, torch.Tensor]:
    """The four weighted terms of the outpainting loss.

    Real local features are scored over the full map; fake local features only
    over the band columns at feature resolution.
    """
    return {
        "out_loss_real_local": alpha_local * hinge_real(x_feats.local),
        "out_loss_real_global": alpha_global * hinge_real(x_feats.global_),
        "out_loss_fake_local": alpha_local * hinge_fake(out_extract(z_feats.local, m)),
        "out_loss_fake_global": alpha_global * hinge_fake(z_feats.global_),
    }


def outpainting_loss(
    x_feats: DiscFeatures, z_feats: DiscFeatures, m: float, alpha_local: float = 0.5, alpha_global: float = 0.5
) -> torch.Tensor:
    terms = outpainting_terms(x_feats, z_feats, m, alpha_local, alpha_global)
    return terms["out_loss_real_local"] + terms["out_loss_real_global"] + terms["out_loss_fake_local"] + terms[
        "out_loss_fake_global"
    ]


def adv_gen_loss(z_feats: DiscFeatures, literal: bool = False) -> torch.Tensor:
    """Generator adversarial loss ``-mean(FCM(FEM(z)))``.

    ``literal=True`` drops the minus sign, which rewards the generator for
    looking fake; it exists only to reproduce that variant.
    """
    score = z_feats.global_.mean()
    return score if literal else -score


def rec_loss(pred: torch.Tensor, target: torch.Tensor, mask) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean absolute error inside the mask (hole) and outside it (valid)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    mask = torch.as_tensor(mask, dtype=pred.dtype, device=pred.device).expand_as(pred)
    err = (pred - target).abs()
    hole_n = mask.sum()
    valid_n = (1 - mask).sum()
    hole = (err * mask).sum() / hole_n if hole_n > 0 else err.new_zeros(())
    valid = (err * (1 - mask)).sum() / valid_n if valid_n > 0 else err.new_zeros(())
    return hole, valid


def total_gen_loss(components: dict, w: LossWeights):
    """``lambda_rec*rec_hole + lambda_valid*rec_valid + lambda_adv*adv + lambda_flow*flow``."""
    return (
        w.lambda_rec * components["rec_hole"]
        + w.lambda_valid * components["rec_valid"]
        + w.lambda_adv * components["adv"]
        + w.lambda_flow * components["flow"]
    )


def zero_flow_loss(*_args, **_kwargs) -> torch.Tensor:
    return torch.zeros(())


FIXTURE_NAMES = ("x_local", "x_global", "z_local", "z_global")


def load_loss_fixtures() -> dict[str, torch.Tensor]:
    """The shipped 2x8 feature maps used to pin the loss definitions."""
    from importlib import resources

    from .tensorio import load_fixture

    root = resources.files("in2out") / "fixtures"
    out = {}
    for name in FIXTURE_NAMES:
        with resources.as_file(root / f"loss_{name}.vten") as p:
            out[name] = torch.from_numpy(load_fixture(p).data.astype(np.float64))
    return out
