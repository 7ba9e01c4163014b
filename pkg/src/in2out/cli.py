"""``in2out`` command-line entry point.

Subcommands: make-synth, extract-out, rf-plan, train, eval, ablate.
Logs go to stderr; reports go to files (rf-plan and ablate also print a table).
Failures exit non-zero with a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .discriminator import TABLE_ORDER, DesignKind, heuristic_rf, receptive_field
from .diffcore import Conv3dSpec
from .masking import out_extract
from .tensorio import load_clip, read_manifest, save_clip
from .trainer import ConfigError, TrainConfig, resolve_data_dir

log = logging.getLogger("in2out")


def _seed_everything(seed):
    if seed is None:
        return
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _ratio(text: str) -> float:
    from fractions import Fraction

    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a ratio like 0.25 or 1/4, got {text!r}") from None


# -- commands ----------------------------------------------------------------


def cmd_make_synth(args) -> int:
    from .synthdata import SynthSpec, generate

    w, h = args.size
    spec = SynthSpec(
        n_clips=args.clips,
        frames=args.frames,
        width=w,
        height=h,
        n_shapes=args.shapes,
        velocity_range=tuple(args.velocity),
        seed=args.seed,
    )
    paths = generate(spec, args.out)
    log.info("generated %d clips (%dx%d, %d frames) in %s", len(paths), w, h, args.frames, args.out)
    return 0


def cmd_extract_out(args) -> int:
    clip = load_clip(args.clip)
    bands = out_extract(clip.data, args.ratio)
    manifest = read_manifest(args.clip)
    save_clip(args.out, bands[0], clip_id=f"{manifest.clip_id}_out", fps=manifest.fps)
    log.info("wrote %s band-only clip of width %d to %s", manifest.clip_id, bands.shape[-1], args.out)
    return 0


def rf_plan(kernels: list[int], strides: list[int], target: int | None = None) -> dict:
    if not kernels:
        raise ValueError("--kernels must list at least one kernel size")
    if len(strides) == 1:
        strides = strides * len(kernels)
    if len(strides) != len(kernels):
        raise ValueError(f"{len(kernels)} kernels but {len(strides)} strides")
    specs = [Conv3dSpec(1, 1, (1, k, 1), (1, s, 1)) for k, s in zip(kernels, strides)]
    rfs = [r[1] for r in receptive_field(specs)]
    layers = []
    jump = 1
    for i, (k, s, rf) in enumerate(zip(kernels, strides, rfs)):
        layers.append({"layer": i + 1, "kernel": k, "stride": s, "jump_in": jump, "rf_exact": rf})
        jump *= s
    plan = {
        "layers": layers,
        "rf_exact": rfs[-1],
        # k * prod(strides) uses the last kernel; it is only a rule of thumb
        "rf_heuristic": heuristic_rf(kernels[-1], strides),
        "target": target,
        "pass": None if target is None else rfs[-1] >= target,
    }
    return plan


def cmd_rf_plan(args) -> int:
    plan = rf_plan(args.kernels, args.strides, args.target)
    if args.json:
        print(json.dumps(plan, indent=2))
        return 0
    print("layer\tkernel\tstride\tjump\trf_exact")
    for row in plan["layers"]:
        print(f"{row['layer']}\t{row['kernel']}\t{row['stride']}\t{row['jump_in']}\t{row['rf_exact']}")
    print(f"exact RF: {plan['rf_exact']}")
    print(f"heuristic RF (kernel x total stride): {plan['rf_heuristic']} [heuristic, not exact]")
    if args.target is not None:
        verdict = "PASS" if plan["pass"] else "FAIL"
        print(f"target {args.target}: {verdict} (exact RF {plan['rf_exact']} {'>=' if plan['pass'] else '<'} {args.target})")
    return 0


def _train_config(args) -> TrainConfig:
    config = TrainConfig.load(args.config)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        over["iters"] = args.iters
    if getattr(args, "data", None) is not None:
        over["data"] = str(args.data)
    if getattr(args, "out", None) is not None:
        over["out_dir"] = str(args.out)
    return replace(config, **over) if over else config


def cmd_train(args) -> int:
    from .plotting import loss_curves
    from .trainer import fit, load_dataset, read_log

    config = _train_config(args)
    if not config.out_dir:
        raise ConfigError("$.out_dir", "no output directory (set out_dir in the config or pass --out)")
    data = resolve_data_dir(config.data)
    clips = [c for _, c in load_dataset(data, config.resize)]
    out = Path(config.out_dir)
    final, _ = fit(config, clips, out, resume=args.resume)
    records = read_log(out / "log.jsonl")
    loss_curves(records, out / "loss_curves.png", title=f"design={config.design.value}")
    log.info("final checkpoint: %s", final)
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate_predictions, predict
    from .plotting import outpaint_strip
    from .trainer import load_dataset, load_generator

    which = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    data = resolve_data_dir(args.data)
    config_json = {"data": str(data), "metrics": list(which), "window": args.window, "composite": args.composite}
    if args.ckpt is not None:
        gen, train_cfg = load_generator(args.ckpt)
        size = args.size or train_cfg.resize
        clips = load_dataset(data, size)
        pairs = predict(gen, clips, args.ratio, args.window, args.composite)
        config_json["ckpt"] = str(args.ckpt)
    else:
        gts = dict(load_dataset(data, args.size))
        preds = dict(load_dataset(args.pred, args.size))
        missing = sorted(set(gts) - set(preds))
        if missing:
            raise FileNotFoundError(f"predictions missing for clips {missing}")
        pairs = [(cid, preds[cid], gt) for cid, gt in gts.items()]
        config_json["pred"] = str(args.pred)
    seed = args.seed if args.seed is not None else None
    kw = {"extractor_seed": seed} if seed is not None else {}
    report = evaluate_predictions(pairs, args.ratio, which, args.region, **kw)
    out = report.to_json(config_json)
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(json.dumps(out, indent=2) + "\n")
    if args.figures:
        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        for cid, pred, gt in sorted(pairs)[: args.max_figures]:
            outpaint_strip(gt, pred, args.ratio, fig_dir / f"{cid}.png")
    agg = out["aggregate"]
    log.info("aggregate: %s", ", ".join(f"{k}={v:.4f}" for k, v in agg.items()))
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import AblationPlan, format_table, run_ablation, write_ablation_report
    from .trainer import load_dataset

    config = _train_config(args)
    if args.designs == "all":
        designs = TABLE_ORDER
    else:
        try:
            designs = tuple(DesignKind(d.strip()) for d in args.designs.split(",") if d.strip())
        except ValueError as exc:
            raise ConfigError("--designs", str(exc)) from None
    out = Path(args.out or config.out_dir or "ablation")
    plan = AblationPlan(designs, config, out, args.ratio)
    data = resolve_data_dir(config.data)
    train = load_dataset(data, config.resize)
    evald = load_dataset(args.eval_data, config.resize) if args.eval_data else None
    report = run_ablation(plan, train, evald, jobs=args.jobs)
    paths = write_ablation_report(report, out)
    print(format_table(report))
    log.info("reports: %s", ", ".join(str(p) for p in paths.values()))
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="in2out", description="Video outpainting with a hierarchical discriminator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-synth", help="generate a synthetic moving-shapes dataset")
    s.add_argument("--out", required=True, type=Path, help="output dataset directory")
    s.add_argument("--clips", type=int, default=20, help="number of clips")
    s.add_argument("--frames", type=int, default=16, help="frames per clip")
    s.add_argument("--size", type=_size, default=(96, 56), help="frame size WxH")
    s.add_argument("--shapes", type=int, default=3, help="moving shapes per clip")
    s.add_argument("--velocity", type=_int_list, default=[1, 3], help="horizontal speed range lo,hi (px/frame)")
    s.add_argument("--seed", type=int, default=0, help="dataset seed")
    s.set_defaults(func=cmd_make_synth)

    s = sub.add_parser("extract-out", help="write the band-only part of a clip")
    s.add_argument("--clip", required=True, type=Path, help="clip directory")
    s.add_argument("--ratio", required=True, type=_ratio, help="mask ratio m")
    s.add_argument("--out", required=True, type=Path, help="output clip directory")
    s.add_argument("--seed", type=int, default=None, help="accepted for uniformity; unused")
    s.set_defaults(func=cmd_extract_out)

    s = sub.add_parser("rf-plan", help="exact receptive field of a strided conv stack")
    s.add_argument("--kernels", required=True, type=_int_list, help="comma-separated kernel sizes, e.g. 7,7,7")
    s.add_argument("--strides", type=_int_list, default=[2], help="comma-separated strides (one value broadcasts)")
    s.add_argument("--target", type=int, default=None, help="required RF, e.g. the band width 54")
    s.add_argument("--json", action="store_true", help="print JSON instead of a table")
    s.add_argument("--seed", type=int, default=None, help="accepted for uniformity; unused")
    s.set_defaults(func=cmd_rf_plan)

    s = sub.add_parser("train", help="adversarial fine-tuning")
    s.add_argument("--config", required=True, type=Path, help="TrainConfig JSON")
    s.add_argument("--resume", type=Path, default=None, help="checkpoint directory to resume from")
    s.add_argument("--out", type=Path, default=None, help="output directory (overrides out_dir)")
    s.add_argument("--data", type=Path, default=None, help="dataset directory (overrides data / $IN2OUT_DATA_DIR)")
    s.add_argument("--iters", type=int, default=None, help="override iters")
    s.add_argument("--seed", type=int, default=None, help="override seed")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="PSNR / SSIM / FVD of a checkpoint or of saved predictions")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt", type=Path, help="checkpoint directory")
    src.add_argument("--pred", type=Path, help="directory of predicted clips (same clip ids as --data)")
    s.add_argument("--data", type=Path, default=None, help="ground-truth dataset (default $IN2OUT_DATA_DIR)")
    s.add_argument("--ratio", type=_ratio, default=0.25, help="mask ratio m")
    s.add_argument("--metrics", default="psnr,ssim,fvd", help="comma-separated subset of psnr,ssim,fvd")
    s.add_argument("--region", choices=("whole", "band"), default="whole", help="score whole frames or bands only")
    s.add_argument("--report", required=True, type=Path, help="output JSON report")
    s.add_argument("--window", type=int, default=10, help="sliding-window length")
    s.add_argument("--composite", action="store_true", help="paste the known center back into the output")
    s.add_argument("--size", type=_size, default=None, help="resize frames to WxH before scoring")
    s.add_argument("--figures", type=Path, default=None, help="directory for per-clip comparison figures")
    s.add_argument("--max-figures", type=int, default=4, help="figures to render")
    s.add_argument("--seed", type=int, default=None, help="seed of the FVD feature extractor")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train and compare discriminator designs")
    s.add_argument("--config", required=True, type=Path, help="shared TrainConfig JSON")
    s.add_argument("--designs", default="all", help=f"'all' or comma list of {','.join(d.value for d in TABLE_ORDER)}")
    s.add_argument("--out", type=Path, default=None, help="output directory")
    s.add_argument("--data", type=Path, default=None, help="training dataset")
    s.add_argument("--eval-data", type=Path, default=None, help="held-out dataset (default: training data)")
    s.add_argument("--ratio", type=_ratio, default=0.25, help="evaluation mask ratio")
    s.add_argument("--iters", type=int, default=None, help="override iters")
    s.add_argument("--jobs", type=int, default=1, help="designs trained in parallel processes")
    s.add_argument("--seed", type=int, default=None, help="override seed")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    _seed_everything(getattr(args, "seed", None))
    try:
        return args.func(args)
    except ConfigError as exc:
        record = {"error": "ConfigError", "path": exc.path, "message": exc.message}
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("traceback", exc_info=True)
        record = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
