"""Adversarial fine-tuning loop, experiment configuration and checkpoints.

One iteration = one discriminator update followed by one generator update.
A checkpoint directory holds ``meta.json`` plus one ``.vten`` file per tensor
(generator and discriminator parameters and buffers, Adam moments). Resuming
from a checkpoint reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .diffcore import Adam, NonFiniteGradient
from .discriminator import DesignKind, DiscConfig, build_design, check_band_support
from .generator import LOCAL_FRAMES, NON_LOCAL_FRAMES, build_generator, sample_clip
from .losses import PROFILES, REPORT_KEYS, LossWeights, rec_loss, total_gen_loss
from .masking import MaskError, MaskSpec, apply_mask, make_mask, sample_ratio
from .tensorio import list_clips, load_clip, read_vten, write_vten

log = logging.getLogger(__name__)

DATA_ENV = "IN2OUT_DATA_DIR"
D_BETAS = (0.5, 0.999)
G_BETAS = (0.9, 0.999)


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, component: str):
        super().__init__(f"non-finite {component} at iteration {iteration}")
        self.iteration = iteration
        self.component = component


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 50_000
    lr: float = 4e-5
    batch: int = 1
    resize: tuple[int, int] = (432, 240)  # (W, H)
    mask_ratio_range: tuple[float, float] = (1 / 12, 1 / 3)
    design: DesignKind = DesignKind.hierarchical
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    profile: str = "e2fgvi"
    generator: dict = field(default_factory=lambda: {"kind": "toy"})
    discriminator: dict = field(default_factory=lambda: {"kernel": [3, 7, 7], "spectral_norm": True, "slope": 0.2})
    literal_adv: bool = False
    checkpoint_every: int | None = None
    data: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "design", DesignKind(self.design))
        object.__setattr__(self, "resize", tuple(int(v) for v in self.resize))
        object.__setattr__(self, "mask_ratio_range", tuple(float(v) for v in self.mask_ratio_range))
        if self.iters < 1:
            raise ConfigError("$.iters", f"must be >= 1, got {self.iters}")
        if self.batch < 1:
            raise ConfigError("$.batch", f"must be >= 1, got {self.batch}")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError("$.lr", f"must be a positive finite number, got {self.lr}")
        if len(self.resize) != 2 or any(v < 8 or v % 8 for v in self.resize):
            raise ConfigError("$.resize", f"[W, H] must be positive multiples of 8, got {list(self.resize)}")
        lo, hi = self.mask_ratio_range
        if not 0 < lo <= hi < 1:
            raise ConfigError("$.mask_ratio_range", f"need 0 < lo <= hi < 1, got {[lo, hi]}")
        if self.profile not in (*PROFILES, "custom"):
            raise ConfigError("$.profile", f"unknown profile {self.profile!r}")
        if self.profile != "custom":
            object.__setattr__(self, "weights", replace(self.weights, **PROFILES[self.profile]))
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError("$.checkpoint_every", "must be >= 1")
        try:
            check_band_support(self.design, self.disc_config(), self.resize[0], lo)
        except MaskError as exc:
            raise ConfigError("$.mask_ratio_range", f"{exc} (design {self.design.value})") from None

    # -- presets ---------------------------------------------------------

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Single-core scale: 500 iterations on 96x56 frames."""
        base = dict(iters=500, lr=3e-4, resize=(96, 56), mask_ratio_range=(1 / 6, 1 / 3))
        base.update(overrides)
        return cls(**base)

    # -- derived ---------------------------------------------------------

    def effective_weights(self) -> LossWeights:
        return self.weights

    def disc_config(self) -> DiscConfig:
        d = self.discriminator
        return DiscConfig.with_kernel(tuple(d.get("kernel", (3, 7, 7))), bool(d.get("spectral_norm", True)), float(d.get("slope", 0.2)))

    @property
    def ckpt_interval(self) -> int:
        return self.checkpoint_every or max(1, self.iters // 10)

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, LossWeights):
                v = v.to_json()
            elif isinstance(v, DesignKind):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = copy.deepcopy(v)
        return out

    def hash(self) -> str:
        """Identity of the experiment; ignores run length and file locations."""
        obj = self.to_json()
        for k in ("iters", "checkpoint_every", "data", "out_dir"):
            obj.pop(k)
        return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, obj: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        """Parse a config dict; every key must be a TrainConfig field."""
        if not isinstance(obj, dict):
            raise ConfigError("$", "config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, val in obj.items():
            path = f"$.{key}"
            if key not in known:
                raise ConfigError(path, "unknown key")
            kw[key] = _coerce(key, val, path)
        if "weights" in obj and obj.get("profile", (base or cls()).profile) != "custom":
            profile = obj.get("profile", (base or cls()).profile)
            for k, pv in PROFILES.get(profile, {}).items():
                if k in obj["weights"] and float(obj["weights"][k]) != pv:
                    raise ConfigError(f"$.weights.{k}", f"conflicts with profile {profile!r} ({pv}); use profile 'custom'")
        try:
            return replace(base, **kw) if base is not None else cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("$", str(exc)) from None

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"invalid JSON: {exc}") from None
        return cls.from_json(obj)


def _coerce(key: str, val, path: str):
    def num(v, p, kind=float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(p, f"expected a number, got {type(v).__name__}")
        if kind is int:
            if float(v) != int(v):
                raise ConfigError(p, f"expected an integer, got {v}")
            return int(v)
        return float(v)

    if key in ("iters", "batch", "seed"):
        return num(val, path, int)
    if key == "checkpoint_every":
        return None if val is None else num(val, path, int)
    if key == "lr":
        return num(val, path)
    if key in ("resize", "mask_ratio_range"):
        if not isinstance(val, list) or len(val) != 2:
            raise ConfigError(path, "expected a two-element list")
        kind = int if key == "resize" else float
        return tuple(num(v, f"{path}[{i}]", kind) for i, v in enumerate(val))
    if key == "design":
        try:
            return DesignKind(val)
        except ValueError:
            raise ConfigError(path, f"unknown design {val!r}; one of {[d.value for d in DesignKind]}") from None
    if key == "weights":
        if not isinstance(val, dict):
            raise ConfigError(path, "expected an object")
        names = {f.name for f in fields(LossWeights)}
        for k in val:
            if k not in names:
                raise ConfigError(f"{path}.{k}", "unknown key")
        try:
            return LossWeights(**{k: num(v, f"{path}.{k}") for k, v in val.items()})
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
    if key == "generator":
        if not isinstance(val, dict) or set(val) - {"kind"}:
            bad = sorted(set(val) - {"kind"}) if isinstance(val, dict) else []
            raise ConfigError(f"{path}.{bad[0]}" if bad else path, "unknown key" if bad else "expected an object")
        return {"kind": str(val.get("kind", "toy"))}
    if key == "discriminator":
        if not isinstance(val, dict):
            raise ConfigError(path, "expected an object")
        allowed = {"kernel", "spectral_norm", "slope"}
        for k in val:
            if k not in allowed:
                raise ConfigError(f"{path}.{k}", "unknown key")
        out = {"kernel": [3, 7, 7], "spectral_norm": True, "slope": 0.2}
        if "kernel" in val:
            k = val["kernel"]
            if not isinstance(k, list) or len(k) != 3:
                raise ConfigError(f"{path}.kernel", "expected [k_t, k_h, k_w]")
            out["kernel"] = [num(v, f"{path}.kernel[{i}]", int) for i, v in enumerate(k)]
        if "spectral_norm" in val:
            if not isinstance(val["spectral_norm"], bool):
                raise ConfigError(f"{path}.spectral_norm", "expected a boolean")
            out["spectral_norm"] = val["spectral_norm"]
        if "slope" in val:
            out["slope"] = num(val["slope"], f"{path}.slope")
        return out
    if key == "literal_adv":
        if not isinstance(val, bool):
            raise ConfigError(path, "expected a boolean")
        return val
    if key in ("profile", "data", "out_dir"):
        if val is not None and not isinstance(val, str):
            raise ConfigError(path, "expected a string")
        return val
    raise ConfigError(path, "unknown key")


# -- data ------------------------------------------------------------------


def resolve_data_dir(path=None) -> Path:
    path = path or os.environ.get(DATA_ENV)
    if not path:
        raise ConfigError("$.data", f"no dataset given and {DATA_ENV} is unset")
    return Path(path)


def resize_video(frames: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """(T, 3, H, W) -> (T, 3, size[1], size[0]); no-op if already that size."""
    w, h = size
    if frames.shape[-2:] == (h, w):
        return frames
    t = torch.from_numpy(np.ascontiguousarray(frames))
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False, antialias=True)
    return out.clamp_(0, 1).numpy()


def load_dataset(root, size: tuple[int, int] | None = None) -> list[tuple[str, np.ndarray]]:
    """(clip_id, frames (T,3,H,W)) pairs sorted by clip directory name."""
    out = []
    for d in list_clips(root):
        frames = load_clip(d).data[0]
        if size is not None:
            frames = resize_video(frames, size)
        out.append((d.name, frames))
    return out


# -- training --------------------------------------------------------------


@dataclass
class Batch:
    inputs: torch.Tensor  # (B, 8, 4, H, W) masked local + non-local frames
    target: torch.Tensor  # (B, 5, 3, H, W) local ground truth
    mask: torch.Tensor  # (1, 5, 1, H, W)
    ratio: float
    clips: list[int]


class Trainer:
    """Holds generator, discriminator design, optimizers and the data RNG."""

    def __init__(self, config: TrainConfig, clips: list[np.ndarray]):
        if not clips:
            raise ValueError("dataset is empty")
        need = LOCAL_FRAMES + NON_LOCAL_FRAMES
        for i, c in enumerate(clips):
            if c.shape[0] < need:
                raise ValueError(f"clip {i} has {c.shape[0]} frames; need >= {need}")
        self.config = config
        self.clips = [torch.from_numpy(np.ascontiguousarray(c, dtype=np.float32)) for c in clips]
        self.weights = config.effective_weights()
        init = torch.Generator().manual_seed(config.seed)
        self.gen = build_generator(config.generator["kind"], generator=init)
        self.design = build_design(config.design, config.disc_config(), self.weights, init, config.literal_adv)
        self.g_opt = Adam(self.gen, lr=config.lr, betas=G_BETAS)
        self.d_opt = Adam(self.design, lr=config.lr, betas=D_BETAS)
        self.rng = np.random.default_rng(config.seed)
        self.iteration = 0

    def next_batch(self) -> Batch:
        lo, hi = self.config.mask_ratio_range
        m = sample_ratio(lo, hi, self.rng)
        inputs, targets, picked = [], [], []
        for _ in range(self.config.batch):
            ci = int(self.rng.integers(len(self.clips)))
            clip = self.clips[ci]
            s = sample_clip(clip.shape[0], self.rng)
            frames = clip[s.indices]
            inputs.append(frames)
            targets.append(frames[:LOCAL_FRAMES])
            picked.append(ci)
        video = torch.stack(inputs)
        _, t, _, h, w = video.shape
        mask = torch.from_numpy(make_mask(MaskSpec(m, w), (t, h, w)))
        return Batch(apply_mask(video, mask), torch.stack(targets), mask[:, :LOCAL_FRAMES], m, picked)

    def _finite(self, name: str, value: torch.Tensor) -> None:
        if not torch.isfinite(value).all():
            raise TrainingDiverged(self.iteration + 1, name)

    def train_step(self, batch: Batch | None = None) -> dict:
        batch = batch or self.next_batch()
        it = self.iteration + 1
        report = dict.fromkeys(REPORT_KEYS, 0.0)
        self.gen.train()
        pred = self.gen(batch.inputs)[:, :LOCAL_FRAMES]

        if self.design.has_discriminator:
            self.design.train()
            self.d_opt.zero_grad()
            d_loss, terms = self.design.d_loss(batch.target, pred.detach(), batch.ratio)
            for k, v in terms.items():
                self._finite(k, v)
                report[k] = float(v.detach())
            self._finite("d_loss", d_loss)
            report["d_loss"] = float(d_loss.detach())
            d_loss.backward()
            self._step(self.d_opt, it)
            self.design.eval()
            self.design.requires_grad_(False)
            try:
                adv = self.design.g_adv(pred, batch.ratio)
            finally:
                self.design.requires_grad_(True)
        else:
            adv = pred.new_zeros(())

        rec_hole, rec_valid = rec_loss(pred, batch.target, batch.mask)
        flow = self.gen.flow_loss().to(pred.dtype)
        comps = {"adv": adv, "rec_hole": rec_hole, "rec_valid": rec_valid, "flow": flow}
        for k, v in comps.items():
            self._finite(k, v)
            report[k] = float(v.detach())
        total = total_gen_loss(comps, self.weights)
        self._finite("total_g", total)
        report["total_g"] = float(total.detach())
        self.g_opt.zero_grad()
        total.backward()
        self._step(self.g_opt, it)

        self.iteration = it
        return {"iter": it, "ratio": batch.ratio, "clips": batch.clips, **report}

    def _step(self, opt: Adam, it: int) -> None:
        try:
            opt.step()
        except NonFiniteGradient as exc:
            raise TrainingDiverged(it, f"grad:{exc.name}") from None

    # -- checkpoints -------------------------------------------------------

    def _tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for prefix, mod in (("generator", self.gen), ("discriminator", self.design)):
            for k, v in mod.state_dict().items():
                out[f"{prefix}.{k}"] = v
        for prefix, opt in (("optim_g", self.g_opt), ("optim_d", self.d_opt)):
            for k, v in opt.state.exp_avg.items():
                out[f"{prefix}.exp_avg.{k}"] = v
            for k, v in opt.state.exp_avg_sq.items():
                out[f"{prefix}.exp_avg_sq.{k}"] = v
        return out

    def save_checkpoint(self, path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        index = {}
        for key, t in self._tensors().items():
            fname = f"{key}.vten"
            write_vten(path / fname, t.detach().cpu().numpy())
            index[key] = fname
        meta = {
            "iteration": self.iteration,
            "config": self.config.to_json(),
            "config_hash": self.config.hash(),
            "rng_state": self.rng.bit_generator.state,
            "optim_steps": {"g": self.g_opt.state.step, "d": self.d_opt.state.step},
            "tensors": index,
        }
        (path / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
        return path

    def load_checkpoint(self, path) -> None:
        path = Path(path)
        meta = read_checkpoint_meta(path)
        if meta["config_hash"] != self.config.hash():
            raise ConfigError("$", f"checkpoint {path} was written by a different experiment config")
        arrays = {k: torch.from_numpy(read_vten(path / f)) for k, f in meta["tensors"].items()}
        for prefix, mod in (("generator", self.gen), ("discriminator", self.design)):
            sd = {k[len(prefix) + 1 :]: v for k, v in arrays.items() if k.startswith(prefix + ".")}
            mod.load_state_dict(sd, strict=True)
        for prefix, opt, key in (("optim_g", self.g_opt, "g"), ("optim_d", self.d_opt, "d")):
            opt.state.step = int(meta["optim_steps"][key])
            opt.state.exp_avg = {
                k[len(prefix) + 9 :]: v for k, v in arrays.items() if k.startswith(prefix + ".exp_avg.")
            }
            opt.state.exp_avg_sq = {
                k[len(prefix) + 12 :]: v for k, v in arrays.items() if k.startswith(prefix + ".exp_avg_sq.")
            }
        self.rng.bit_generator.state = meta["rng_state"]
        self.iteration = int(meta["iteration"])


def read_checkpoint_meta(path) -> dict:
    meta_path = Path(path) / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"{path}: not a checkpoint (missing meta.json)")
    return json.loads(meta_path.read_text())


def load_generator(ckpt) -> tuple[torch.nn.Module, TrainConfig]:
    """Generator weights and config from a checkpoint directory."""
    meta = read_checkpoint_meta(ckpt)
    config = TrainConfig.from_json(meta["config"])
    gen = build_generator(config.generator["kind"])
    prefix = "generator."
    sd = {k[len(prefix) :]: torch.from_numpy(read_vten(Path(ckpt) / f)) for k, f in meta["tensors"].items() if k.startswith(prefix)}
    gen.load_state_dict(sd, strict=True)
    return gen.eval(), config


def ckpt_name(iteration: int) -> str:
    return f"ckpt_{iteration:06d}"


def fit(config: TrainConfig, clips: list[np.ndarray], out_dir, resume=None) -> tuple[Path, list[dict]]:
    """Train to ``config.iters``; returns the final checkpoint path and the new log records.

    Log records are appended to ``out_dir/log.jsonl`` one per iteration.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(config, clips)
    if resume is not None:
        trainer.load_checkpoint(resume)
        log.info("resumed from %s at iteration %d", resume, trainer.iteration)
    records = []
    log_path = out_dir / "log.jsonl"
    mode = "a" if resume is not None else "w"
    with open(log_path, mode) as fh:
        while trainer.iteration < config.iters:
            rec = trainer.train_step()
            records.append(rec)
            fh.write(json.dumps(rec) + "\n")
            if rec["iter"] % config.ckpt_interval == 0 and rec["iter"] < config.iters:
                trainer.save_checkpoint(out_dir / ckpt_name(rec["iter"]))
            if rec["iter"] % 50 == 0:
                log.info("iter %d total_g=%.4f rec_hole=%.4f d_loss=%.4f", rec["iter"], rec["total_g"], rec["rec_hole"], rec["d_loss"])
    final = trainer.save_checkpoint(out_dir / "final")
    return final, records


def read_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def moving_average(values, window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        raise ValueError(f"need at least {window} values")
    return np.convolve(v, np.ones(window) / window, mode="valid")
