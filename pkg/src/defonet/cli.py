"""Command-line entry point: generate, train, predict, assess, evaluate."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .assess import DEFAULT_CLEARANCE, PredictionReport, assess, evaluate, oracle_predictor, plot_records, write_records
from .condition import Condition
from .dataset import DatasetConfig, generate_dataset, holdout_config, read_dataset
from .estimator import DefoNet
from .model import DiscriminatorSpec, GeneratorSpec
from .physics import BEAM_MATERIAL_BINS, FOAM_MATERIAL_BINS, FORCE_LEVELS, LoadCase, generate_sample
from .training import TrainConfig, train
from .voxel import DepthImage, GridSpec, VoxelGrid, depth_to_grid


def _material_bin(name: str) -> int:
    bins = {**BEAM_MATERIAL_BINS, **FOAM_MATERIAL_BINS}
    if name not in bins:
        raise SystemExit(f"unknown material {name!r}; choose from {sorted(bins)}")
    return bins[name]


def cmd_generate(args) -> int:
    config = DatasetConfig.from_file(args.config)
    if args.grid is not None:
        config.grid = args.grid
    if args.holdout:
        config = holdout_config(config)
    dataset = generate_dataset(config, args.out, seed=args.seed)
    print(f"wrote {len(dataset)} samples (N={dataset.resolution}, pitch={dataset.pitch:.4f} m) to {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = read_dataset(args.data)
    if args.grid is not None and args.grid != dataset.resolution:
        raise SystemExit(f"--grid {args.grid} does not match the dataset's N={dataset.resolution}")
    config = TrainConfig(
        alpha=args.alpha,
        beta=args.beta,
        gp_lambda=args.gp_lambda,
        batch_size=args.batch_size,
        lr_initial=args.lr_initial,
        lr_after_epoch1=args.lr_after,
        epochs=args.epochs,
        critic_steps_per_gen_step=args.critic_steps,
        seed=args.seed,
        max_steps=args.steps,
        adam_betas=tuple(args.adam_betas),
    )
    n = dataset.resolution
    log_path = args.log or f"{args.out}.log.jsonl"

    def report(rec):
        if rec["step"] % args.print_every == 0:
            print(f"step {rec['step']} epoch {rec['epoch']} l_ae {rec['l_ae']:.4f} total {rec['total']:.4f}", flush=True)

    ckpt, log = train(
        dataset, GeneratorSpec.default(n), DiscriminatorSpec.default(n), config,
        checkpoint_path=args.out, log_path=log_path, callback=report,
    )
    print(f"trained {ckpt.step} steps; checkpoint {args.out}; log {log_path}")
    return 0


def _scene_input(path, force_bin: int):
    config = DatasetConfig.from_file(path)
    scene, _ = config.enumerate()[0]
    sample = generate_sample(scene, LoadCase(FORCE_LEVELS[force_bin]), config.grid_spec, config.view)
    return sample.input_grid, config.scene


def cmd_predict(args) -> int:
    model = DefoNet.load(args.ckpt, threshold=args.threshold)
    cond = Condition(args.force, args.loc, _material_bin(args.material))
    if args.depth:
        img = DepthImage.load(args.depth)
        cam = img.camera
        spec = GridSpec(cam.size, cam.pitch, tuple(cam.origin))
        grid = depth_to_grid(img, spec)
        surface = "top" if args.material == "foam" else "bottom"
    else:
        grid, kind = _scene_input(args.scene, args.force)
        surface = "top" if kind == "foam" else "bottom"
    if grid.resolution != model.resolution_:
        raise SystemExit(f"input grid has N={grid.resolution} but the checkpoint expects N={model.resolution_}")
    start = time.perf_counter()
    proba = model.predict_proba(grid.occupancy[None], [cond.as_tuple()])[0]
    elapsed = (time.perf_counter() - start) * 1000.0
    pred = VoxelGrid((proba > args.threshold).astype(np.uint8), grid.pitch, grid.origin)
    report = PredictionReport.from_grids(grid, pred, args.threshold, elapsed, surface, cond.as_tuple())
    report.write(args.out)
    print(f"max deflection {report.max_deflection_cm:.2f} cm ({report.max_deflection_voxels:g} voxels), {elapsed:.0f} ms; report {args.out}")
    return 0


def cmd_assess(args) -> int:
    report = PredictionReport.read(args.report)
    verdict = assess(report, args.clearance)
    print(json.dumps(verdict.to_record()))
    return 0 if verdict.safe else 2


def cmd_evaluate(args) -> int:
    dataset = read_dataset(args.data)
    if args.ckpt == "oracle":
        predictor = oracle_predictor(dataset)
    else:
        model = DefoNet.load(args.ckpt, threshold=args.threshold)
        predictor = model.predict
    records = evaluate(predictor, dataset, args.mode, args.clearance)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "metrics.jsonl", records)
    plot_records(out / f"{args.mode}.png", records, args.mode, args.clearance)
    for rec in records:
        print(json.dumps(rec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defonet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a dataset from a scene config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, help="override the grid resolution N")
    p.add_argument("--holdout", action="store_true", help="write only the held-out spans")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train generator and critic on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", type=int)
    p.add_argument("--alpha", type=float, default=0.85)
    p.add_argument("--beta", type=float, default=0.8)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, help="stop after this many generator steps")
    p.add_argument("--log")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--gp-lambda", type=float, default=10.0)
    p.add_argument("--critic-steps", type=int, default=1)
    p.add_argument("--lr-initial", type=float, default=5e-4)
    p.add_argument("--lr-after", type=float, default=1e-4)
    p.add_argument("--adam-betas", type=float, nargs=2, default=(0.9, 0.999), metavar=("B1", "B2"))
    p.add_argument("--print-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict the deformed grid for one input")
    p.add_argument("--ckpt", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--depth", help="depth image file")
    src.add_argument("--scene", help="scene config; the first enumerated scene is used")
    p.add_argument("--force", type=int, required=True, help="force bin (0 robot, 1 robot + payload)")
    p.add_argument("--loc", type=int, default=3, help="location bin (wheel index for foam)")
    p.add_argument("--material", default="wood")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("assess", help="traversal verdict from a prediction report")
    p.add_argument("--report", required=True)
    p.add_argument("--clearance", type=float, default=DEFAULT_CLEARANCE)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True, help="checkpoint path, or 'oracle' to score the targets themselves")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("table", "holdout", "wheels"), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--clearance", type=float, default=DEFAULT_CLEARANCE)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"defonet {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
