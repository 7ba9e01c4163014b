"""PSNR, SSIM and a Frechet video feature distance.

The Frechet distance runs on features from a pluggable extractor. The default
extractor is a randomly initialized FEM-shaped conv stack with a fixed seed and
global average pooling; it keeps relative comparisons meaningful at desk scale
without pretrained video-classification weights. Precomputed features (e.g.
I3D dumps saved as ``.npy``) go through :func:`stats_from_features`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .masking import band_width

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
LUMA = np.array([0.299, 0.587, 0.114])
EXTRACTOR_SEED = 20250117


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _check_pair(pred, target):
    pred, target = _np(pred), _np(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def psnr_from_mse(mse: float) -> float:
    return PSNR_CAP if mse < 1e-10 else min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def psnr(pred, target) -> float:
    """10 log10(1 / MSE) for [0,1] data, capped at 100 dB."""
    pred, target = _check_pair(pred, target)
    return psnr_from_mse(float(np.mean((pred - target) ** 2)))


def band_columns(width: int, m: float) -> np.ndarray:
    b = band_width(m, width)
    cols = np.zeros(width, dtype=bool)
    cols[:b] = True
    cols[width - b :] = True
    return cols


def region_mse(pred, target, m: float | None = None, region: str = "whole") -> float:
    """MSE over the whole frame, the outpainted bands, or the kept center."""
    pred, target = _check_pair(pred, target)
    sq = (pred - target) ** 2
    if region == "whole":
        return float(sq.mean())
    cols = band_columns(pred.shape[-1], m)
    if region == "band":
        return float(sq[..., cols].mean())
    if region == "center":
        return float(sq[..., ~cols].mean())
    raise ValueError(f"unknown region {region!r}")


def region_psnr(pred, target, m: float | None = None, region: str = "whole") -> float:
    return psnr_from_mse(region_mse(pred, target, m, region))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def luminance(frames: np.ndarray) -> np.ndarray:
    """(..., 3, H, W) RGB -> (..., H, W) luma with BT.601 weights."""
    return np.tensordot(frames, LUMA, axes=([-3], [0]))


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, keeping only positions where the window fits
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=-1, mode="constant"), g, axis=-2, mode="constant")
    return out[..., r : img.shape[-2] - r, r : img.shape[-1] - r]


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM index map over the valid region of two (..., H, W) images in [0,1]."""
    g = gaussian_window()
    if min(a.shape[-2:]) < len(g):
        raise ValueError(f"frame {a.shape[-2:]} smaller than {len(g)}x{len(g)} SSIM window")
    c1, c2 = (SSIM_K1 * 1.0) ** 2, (SSIM_K2 * 1.0) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(pred, target, m: float | None = None, region: str = "whole") -> float:
    """Mean Gaussian-window SSIM over frames of (..., 3, H, W) videos, on luma.

    ``region="band"`` scores the left and right bands as separate images.
    """
    pred, target = _check_pair(pred, target)
    a, b = luminance(pred), luminance(target)
    a = a.reshape((-1,) + a.shape[-2:])
    b = b.reshape((-1,) + b.shape[-2:])
    if region == "whole":
        return float(ssim_map(a, b).mean(axis=(-2, -1)).mean())
    if region == "band":
        w = a.shape[-1]
        k = band_width(m, w)
        left = ssim_map(a[..., :k], b[..., :k]).mean(axis=(-2, -1))
        right = ssim_map(a[..., w - k :], b[..., w - k :]).mean(axis=(-2, -1))
        return float(0.5 * (left.mean() + right.mean()))
    raise ValueError(f"unknown region {region!r}")


# -- Frechet distance ------------------------------------------------------


def _psd_sqrt(s: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((s + s.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).

    The trace of the cross term is taken as Tr((S1^{1/2} S2 S1^{1/2})^{1/2}),
    which has the same eigenvalues and stays symmetric; negative eigenvalues
    from round-off are clamped to zero.
    """
    mu1, mu2 = np.atleast_1d(_np(mu1)), np.atleast_1d(_np(mu2))
    s1, s2 = np.atleast_2d(_np(sigma1)), np.atleast_2d(_np(sigma2))
    if mu1.shape != mu2.shape or s1.shape != s2.shape or s1.shape != (mu1.size, mu1.size):
        raise ValueError(f"dimension mismatch: mu {mu1.shape}/{mu2.shape}, sigma {s1.shape}/{s2.shape}")
    r1 = _psd_sqrt(s1)
    cross = np.linalg.eigvalsh(r1 @ s2 @ r1)
    tr_cross = float(np.sqrt(np.clip(cross, 0.0, None)).sum())
    diff = mu1 - mu2
    return max(0.0, float(diff @ diff) + float(np.trace(s1) + np.trace(s2)) - 2.0 * tr_cross)


def stats_from_features(features) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance of (N, D) feature rows."""
    f = _np(features)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError(f"need at least 2 feature rows, got shape {f.shape}")
    return f.mean(axis=0), np.cov(f, rowvar=False, ddof=1).reshape(f.shape[1], f.shape[1])


def load_feature_dump(path) -> tuple[np.ndarray, np.ndarray]:
    """Stats from an external (N, D) ``.npy`` feature dump."""
    return stats_from_features(np.load(Path(path)))


class RandomFeatureExtractor(torch.nn.Module):
    """FEM-shaped random conv stack with global average pooling."""

    def __init__(self, seed: int = EXTRACTOR_SEED):
        super().__init__()
        from .discriminator import DiscConfig, Discriminator

        gen = torch.Generator().manual_seed(seed)
        cfg = DiscConfig(spectral_norm=False)
        self.net = Discriminator(cfg.without_fcm(), generator=gen).double().eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def forward(self, video) -> np.ndarray:
        """(B, T, 3, H, W) -> (B, 128) pooled features."""
        x = torch.as_tensor(_np(video))
        feats = self.net.fem_forward(x)
        return feats.mean(dim=(1, 3, 4)).numpy()


def video_feature_stats(extractor: Callable, clips: Iterable) -> tuple[np.ndarray, np.ndarray]:
    """Feature statistics over clips, each (1, T, 3, H, W) or (T, 3, H, W)."""
    feats = []
    for clip in clips:
        c = _np(clip)
        if c.ndim == 4:
            c = c[None]
        feats.append(np.asarray(extractor(c)).reshape(c.shape[0], -1))
    if sum(f.shape[0] for f in feats) < 2:
        raise ValueError("video_feature_stats needs at least 2 clips")
    return stats_from_features(np.concatenate(feats, axis=0))


@dataclass
class MetricsReport:
    ratio: float
    region: str
    per_clip: list[dict] = field(default_factory=list)
    fvd: float | None = None

    def aggregate(self) -> dict:
        # order-independent: reduce in clip_id order
        rows = sorted(self.per_clip, key=lambda r: r["clip_id"])
        out = {}
        for key in ("psnr", "ssim"):
            vals = [r[key] for r in rows if key in r]
            if vals:
                out[key] = float(np.mean(vals))
        if self.fvd is not None:
            out["fvd"] = self.fvd
        return out

    def to_json(self, config: dict | None = None) -> dict:
        return {
            "config": dict(config or {}, ratio=self.ratio, region=self.region),
            "per_clip": sorted(self.per_clip, key=lambda r: r["clip_id"]),
            "aggregate": self.aggregate(),
            "fvd": self.fvd,
        }
