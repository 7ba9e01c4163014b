import json

import numpy as np
import pytest
import torch

from in2out.discriminator import DesignKind
from in2out.synthdata import SynthSpec, make_clip
from in2out.trainer import (
    ConfigError,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    fit,
    load_dataset,
    load_generator,
    moving_average,
    read_checkpoint_meta,
    read_log,
    resolve_data_dir,
)

SMALL = dict(iters=4, lr=1e-3, resize=(64, 32), mask_ratio_range=(0.25, 1 / 3))


@pytest.fixture(scope="module")
def clips():
    spec = SynthSpec(n_clips=3, frames=10, width=64, height=32, seed=5)
    return [make_clip(spec, i) for i in range(3)]


def small(**kw):
    return TrainConfig(**{**SMALL, **kw})


def test_defaults_and_desk():
    c = TrainConfig()
    assert (c.iters, c.lr, c.batch, c.resize) == (50_000, 4e-5, 1, (432, 240))
    assert c.mask_ratio_range == pytest.approx((1 / 12, 1 / 3))
    d = TrainConfig.desk()
    assert d.iters == 500 and d.resize == (96, 56)
    assert c.ckpt_interval == 5000 and small(iters=4).ckpt_interval == 1


def test_profiles():
    e = TrainConfig(profile="e2fgvi").weights
    p = TrainConfig(profile="propainter").weights
    assert (e.lambda_flow, e.lambda_adv) == (0.01, 0.04)
    assert (p.lambda_flow, p.lambda_adv) == (1.0, 0.01)


@pytest.mark.parametrize(
    "obj, path",
    [
        ({"iters": 0}, "$.iters"),
        ({"iterz": 5}, "$.iterz"),
        ({"weights": {"lambda_foo": 1}}, "$.weights.lambda_foo"),
        ({"weights": {"lambda_adv": 0.5}}, "$.weights.lambda_adv"),
        ({"resize": [100, 56]}, "$.resize"),
        ({"lr": "fast"}, "$.lr"),
        ({"design": "bogus"}, "$.design"),
        ({"discriminator": {"kernel": [3, 7]}}, "$.discriminator.kernel"),
        ({"resize": [96, 56], "mask_ratio_range": [0.05, 0.3]}, "$.mask_ratio_range"),
    ],
)
def test_config_errors_carry_json_path(obj, path):
    with pytest.raises(ConfigError) as ei:
        TrainConfig.from_json(obj)
    assert ei.value.path == path


def test_custom_profile_weights_and_roundtrip(tmp_path):
    c = TrainConfig.from_json({"profile": "custom", "weights": {"lambda_adv": 0.5}, "iters": 3})
    assert c.weights.lambda_adv == 0.5
    (tmp_path / "c.json").write_text(json.dumps(c.to_json()))
    assert TrainConfig.load(tmp_path / "c.json") == c
    p = TrainConfig(profile="propainter")
    assert TrainConfig.from_json(p.to_json()) == p


def test_hash_ignores_run_length():
    assert small(iters=4).hash() == small(iters=400, out_dir="x").hash()
    assert small().hash() != small(seed=1).hash()


def test_design_none_skips_discriminator(clips):
    tr = Trainer(small(design="none"), clips)
    rec = tr.train_step()
    assert rec["d_loss"] == 0 and rec["adv"] == 0
    assert not list(tr.design.parameters())
    assert rec["total_g"] == pytest.approx(rec["rec_hole"] + rec["rec_valid"])


def test_report_keys(clips):
    rec = Trainer(small(), clips).train_step()
    for k in ("d_loss", "out_loss_real_local", "out_loss_real_global", "out_loss_fake_local", "out_loss_fake_global", "adv", "rec_hole", "rec_valid", "flow", "total_g"):
        assert np.isfinite(rec[k])
    assert rec["total_g"] == pytest.approx(rec["rec_hole"] + rec["rec_valid"] + 0.04 * rec["adv"], rel=1e-6)


def test_same_seed_same_stream(clips):
    a = Trainer(small(), clips)
    b = Trainer(small(), clips)
    assert [a.train_step() for _ in range(3)] == [b.train_step() for _ in range(3)]
    c = Trainer(small(seed=1), clips)
    assert c.train_step() != Trainer(small(), clips).train_step()


def test_ratio_sampling_within_range(clips):
    tr = Trainer(small(), clips)
    ratios = [tr.next_batch().ratio for _ in range(10_000)]
    assert 0.25 <= min(ratios) and max(ratios) <= 1 / 3


def test_batch_layout(clips):
    b = Trainer(small(batch=2), clips).next_batch()
    assert b.inputs.shape == (2, 8, 4, 32, 64) and b.target.shape == (2, 5, 3, 32, 64)
    assert b.mask.shape == (1, 5, 1, 32, 64)


def test_nonfinite_aborts_with_iteration_and_component(clips):
    tr = Trainer(small(), clips)
    tr.train_step()
    with torch.no_grad():
        tr.gen.decoder[-1].bias.fill_(float("nan"))
    with pytest.raises(TrainingDiverged) as ei:
        tr.train_step()
    assert ei.value.iteration == 2 and ei.value.component


def test_fit_resume_equals_uninterrupted(tmp_path, clips):
    cfg = small(iters=4, checkpoint_every=2)
    _, full = fit(cfg, clips, tmp_path / "a")
    assert (tmp_path / "a" / "ckpt_000002" / "meta.json").is_file()
    _, part = fit(cfg, clips, tmp_path / "b", resume=tmp_path / "a" / "ckpt_000002")
    assert part == full[2:]
    logged = (tmp_path / "a" / "log.jsonl").read_bytes()
    # an uninterrupted rerun writes the identical log
    fit(cfg, clips, tmp_path / "c")
    assert (tmp_path / "c" / "log.jsonl").read_bytes() == logged
    for name in ("generator.encoder.0.weight.vten", "discriminator.disc.fcm.2.bias.vten"):
        assert (tmp_path / "a" / "final" / name).read_bytes() == (tmp_path / "c" / "final" / name).read_bytes()


def test_resume_rejects_other_config(tmp_path, clips):
    fit(small(iters=2), clips, tmp_path / "a")
    with pytest.raises(ConfigError):
        fit(small(iters=4, seed=9), clips, tmp_path / "b", resume=tmp_path / "a" / "final")


def test_checkpoint_contents_and_generator_reload(tmp_path, clips):
    final, recs = fit(small(iters=2, design="none"), clips, tmp_path)
    meta = read_checkpoint_meta(final)
    assert meta["iteration"] == 2 and meta["config_hash"] == small(design="none").hash()
    assert not any(k.startswith("discriminator.") for k in meta["tensors"])
    gen, cfg = load_generator(final)
    assert cfg.design is DesignKind.none
    assert len(read_log(tmp_path / "log.jsonl")) == 2


def test_dataset_loading(synth_root, monkeypatch):
    data = load_dataset(synth_root, (32, 16))
    assert [d[0] for d in data] == ["clip_00000", "clip_00001", "clip_00002"]
    assert data[0][1].shape == (10, 3, 16, 32)
    monkeypatch.setenv("IN2OUT_DATA_DIR", str(synth_root))
    assert resolve_data_dir() == synth_root
    monkeypatch.delenv("IN2OUT_DATA_DIR")
    with pytest.raises(ConfigError):
        resolve_data_dir()


def test_moving_average():
    assert np.allclose(moving_average(np.arange(12.0), 10), [4.5, 5.5, 6.5])
    with pytest.raises(ValueError):
        moving_average([1.0, 2.0])


def test_trainer_rejects_short_or_empty(clips):
    with pytest.raises(ValueError):
        Trainer(small(), [])
    with pytest.raises(ValueError):
        Trainer(small(), [clips[0][:7]])
