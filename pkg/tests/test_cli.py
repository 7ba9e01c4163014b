import json
import subprocess
import sys

import numpy as np
import pytest

from in2out.cli import build_parser, main, rf_plan
from in2out.tensorio import load_clip


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_rf_plan_fail_and_pass(capsys):
    code, out, _ = run(capsys, "rf-plan", "--kernels", "7,7,7", "--strides", "2,2,2", "--target", "54")
    assert code == 0
    assert "exact RF: 43" in out and "FAIL" in out
    assert "56" in out and "heuristic" in out
    code, out, _ = run(capsys, "rf-plan", "--kernels", "9,9,9", "--strides", "2,2,2", "--target", "54")
    assert "exact RF: 57" in out and "PASS" in out


def test_rf_plan_six_layers_json(capsys):
    code, out, _ = run(capsys, "rf-plan", "--kernels", "7,7,7,7,7,7", "--strides", "2", "--json")
    plan = json.loads(out)
    assert plan["rf_exact"] == 379 and plan["rf_heuristic"] == 448
    assert [r["rf_exact"] for r in plan["layers"]] == [7, 19, 43, 91, 187, 379]


def test_rf_plan_errors(capsys):
    with pytest.raises(ValueError):
        rf_plan([7, 7], [2, 2, 2])
    code, _, err = run(capsys, "rf-plan", "--kernels", "7,7", "--strides", "2,2,2")
    assert code == 1 and json.loads(err.strip().splitlines()[-1])["error"] == "ValueError"


def test_make_synth_and_extract_out(tmp_path, capsys):
    code, _, _ = run(capsys, "make-synth", "--out", str(tmp_path / "d"), "--clips", "2", "--frames", "4", "--size", "32x16", "--seed", "1")
    assert code == 0
    clip = load_clip(tmp_path / "d" / "clip_00001")
    assert clip.shape == (1, 4, 3, 16, 32)
    code, _, _ = run(capsys, "extract-out", "--clip", str(tmp_path / "d" / "clip_00001"), "--ratio", "1/4", "--out", str(tmp_path / "o"))
    assert code == 0
    bands = load_clip(tmp_path / "o").data
    assert bands.shape == (1, 4, 3, 16, 8)
    assert np.array_equal(bands[..., :4], clip.data[..., :4])
    assert np.array_equal(bands[..., 4:], clip.data[..., -4:])


def test_make_synth_seed_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "make-synth", "--out", str(tmp_path / name), "--clips", "1", "--frames", "3", "--size", "24x8", "--seed", "4")
    fa = sorted((tmp_path / "a" / "clip_00000" / "frames").iterdir())
    fb = sorted((tmp_path / "b" / "clip_00000" / "frames").iterdir())
    assert [p.read_bytes() for p in fa] == [p.read_bytes() for p in fb]


def test_eval_ground_truth_vs_itself(synth_root, tmp_path, capsys):
    report = tmp_path / "r.json"
    code, _, err = run(capsys, "eval", "--pred", str(synth_root), "--data", str(synth_root), "--ratio", "0.25", "--report", str(report), "--figures", str(tmp_path / "fig"))
    assert code == 0, err
    rep = json.loads(report.read_text())
    assert rep["aggregate"]["psnr"] == 100.0 and rep["aggregate"]["ssim"] == pytest.approx(1.0)
    assert abs(rep["fvd"]) <= 1e-6
    assert [r["clip_id"] for r in rep["per_clip"]] == ["clip_00000", "clip_00001", "clip_00002"]
    assert (tmp_path / "fig" / "clip_00000.png").is_file()


def test_train_then_eval_ckpt(synth_root, tmp_path, capsys):
    cfg = {"iters": 2, "lr": 1e-3, "resize": [64, 32], "mask_ratio_range": [0.25, 0.25], "design": "hierarchical"}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "c.json"), "--data", str(synth_root), "--out", str(tmp_path / "run"), "--seed", "3")
    assert code == 0, err
    assert (tmp_path / "run" / "final" / "meta.json").is_file()
    assert (tmp_path / "run" / "loss_curves.png").is_file()
    assert json.loads((tmp_path / "run" / "final" / "meta.json").read_text())["config"]["seed"] == 3
    code, _, err = run(capsys, "eval", "--ckpt", str(tmp_path / "run" / "final"), "--data", str(synth_root), "--ratio", "0.5", "--metrics", "psnr,ssim", "--region", "band", "--report", str(tmp_path / "r.json"))
    assert code == 0, err
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["config"]["region"] == "band" and "fvd" not in rep["aggregate"]


def test_train_bad_config_reports_json_path(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"iters": 5, "learning_rate": 1}))
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o"))
    rec = json.loads(err.strip().splitlines()[-1])
    assert code == 1 and rec["error"] == "ConfigError" and rec["path"] == "$.learning_rate"


def test_train_without_data_uses_env(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("IN2OUT_DATA_DIR", raising=False)
    (tmp_path / "c.json").write_text(json.dumps({"iters": 1}))
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o"))
    assert code == 1 and "IN2OUT_DATA_DIR" in err


def test_ablate_single_design(synth_root, tmp_path, capsys):
    cfg = {"iters": 1, "lr": 1e-3, "resize": [64, 32], "mask_ratio_range": [0.25, 0.25]}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, err = run(capsys, "ablate", "--config", str(tmp_path / "c.json"), "--designs", "none", "--data", str(synth_root), "--out", str(tmp_path / "ab"))
    assert code == 0, err
    rep = json.loads((tmp_path / "ab" / "ablation.json").read_text())
    assert [r["label"] for r in rep["rows"]] == ["None"]
    meta = json.loads((tmp_path / "ab" / "none" / "final" / "meta.json").read_text())
    assert not any(k.startswith("discriminator.") for k in meta["tensors"])
    assert "PSNR" in out and (tmp_path / "ab" / "ablation.png").is_file()
    code, _, err = run(capsys, "ablate", "--config", str(tmp_path / "c.json"), "--designs", "none,bogus", "--data", str(synth_root))
    assert code == 1 and json.loads(err.strip().splitlines()[-1])["path"] == "--designs"


def test_help_lists_flags():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"make-synth", "extract-out", "rf-plan", "train", "eval", "ablate"}
    for name, p in sub.items():
        text = p.format_help()
        assert "--seed" in text, name
    text = subprocess.run([sys.executable, "-m", "in2out", "eval", "--help"], capture_output=True, text=True).stdout
    for flag in ("--ckpt", "--data", "--ratio", "--metrics", "--region", "--report"):
        assert flag in text
