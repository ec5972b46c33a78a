"""Batch command-line interface.

Subcommands: ``generate`` (train a field from a sketch dataset), ``render``
(turntable RGB and normal frames from a checkpoint), ``eval`` (sketch
similarity report), ``synth`` (synthetic test dataset).  Batch only; every
command is reproducible for a fixed --seed with the mock backend.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset as dataset_mod
from . import field as field_mod
from . import metrics as metrics_mod
from . import optimizer as optimizer_mod
from . import renderer as renderer_mod
from .guidance import MockProvider, RemoteProvider

ENDPOINT_ENV = "SKETCHFIELD_ENDPOINT"

PRESET_SCENES = {
    "sphere": dataset_mod.OracleScene(
        primitives=[dataset_mod.Sphere(center=(0.0, 0.0, 0.0), radius=0.45,
                                       color=(0.85, 0.2, 0.15))],
        prompt="a red sphere"),
    "sphere_box": dataset_mod.OracleScene(
        primitives=[
            dataset_mod.Sphere(center=(-0.35, 0.0, 0.25), radius=0.32,
                               color=(0.85, 0.2, 0.15)),
            dataset_mod.Box(center=(0.3, 0.0, -0.12),
                            half_extents=(0.3, 0.26, 0.3),
                            color=(0.2, 0.35, 0.8)),
        ],
        prompt="a red sphere beside a blue box"),
}


def _save_png(path, image):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def cmd_generate(args) -> int:
    ds = dataset_mod.load_dataset(args.dataset)
    if args.prompt_override is not None:
        ds = dataset_mod.SketchDataset(views=ds.views,
                                       prompt=args.prompt_override,
                                       scene_bounds=ds.scene_bounds)
    h, w = ds.resolution
    if args.desk_scale:
        config = optimizer_mod.desk_train_config(seed=args.seed,
                                                 resolution=w)
    else:
        config = optimizer_mod.TrainConfig(seed=args.seed,
                                           render_resolution=w)
    config = dataclasses.replace(
        config,
        pose_ranges=dataclasses.replace(config.pose_ranges, width=w, height=h))
    if args.iters is not None:
        config = dataclasses.replace(
            config, iterations=args.iters,
            weights=dataclasses.replace(
                config.weights, lambda_a_start_step=int(0.8 * args.iters)))

    if args.guidance == "mock":
        scene_path = Path(args.dataset) / "scene.json"
        if not scene_path.exists():
            raise dataset_mod.DatasetError(
                f"mock guidance needs {scene_path} (synthetic datasets only)")
        scene = dataset_mod.OracleScene.from_dict(
            json.loads(scene_path.read_text()))
        provider = MockProvider(scene)
    else:
        endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise optimizer_mod.TrainError(
                f"remote guidance needs --endpoint or ${ENDPOINT_ENV}")
        provider = RemoteProvider(endpoint)

    optimizer_mod.train(config, ds, provider, out_dir=args.out)
    print(f"wrote {Path(args.out) / 'checkpoint_final.zip'}")
    return 0


def cmd_render(args) -> int:
    params = field_mod.load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    poses = dataset_mod.hemisphere_ring_poses(
        args.turntable, radius=args.radius, elevation_deg=args.elevation,
        resolution=args.resolution)
    options = renderer_mod.RenderOptions(background=(1.0, 1.0, 1.0),
                                         compute_normals=True)
    for k, pose in enumerate(poses):
        out = renderer_mod.render(params, pose, options)
        _save_png(out_dir / f"color_{k:03d}.png", out.color)
        _save_png(out_dir / f"normal_{k:03d}.png", (out.normal + 1.0) / 2.0)
    print(f"wrote {2 * len(poses)} frames to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    ds = dataset_mod.load_dataset(args.dataset)
    report = metrics_mod.evaluate(args.checkpoint, ds)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(report, indent=2))
    print(f"mean CD {report['mean_cd']}, mean HD {report['mean_hd']} "
          f"({report['num_missing']} missing views)")
    return 0


def cmd_synth(args) -> int:
    if args.scene not in PRESET_SCENES:
        raise dataset_mod.DatasetError(
            f"unknown scene {args.scene!r}; choose from "
            f"{sorted(PRESET_SCENES)}")
    scene = PRESET_SCENES[args.scene]
    ds, oracle_images = dataset_mod.synth_scene_dataset(
        scene, args.views, resolution=args.resolution)
    out_dir = Path(args.out)
    dataset_mod.save_dataset(ds, out_dir)
    (out_dir / "scene.json").write_text(json.dumps(scene.to_dict(), indent=2))
    oracle_dir = out_dir / "oracle"
    oracle_dir.mkdir(exist_ok=True)
    for view, img in zip(ds.views, oracle_images):
        _save_png(oracle_dir / f"{view.view_id}.png", img)
    print(f"wrote {len(ds.views)} views to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchfield",
        description="Sketch-constrained 3D generation and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="train a field from a sketch dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prompt-override", default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--guidance", choices=("mock", "remote"), default="mock")
    p.add_argument("--endpoint", default=None,
                   help=f"remote service URL (or ${ENDPOINT_ENV})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--desk-scale", action="store_true",
                   help="small fast profile instead of full-scale defaults")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("render", help="turntable RGB + normal frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--turntable", type=int, required=True,
                   help="number of orbit frames")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--radius", type=float, default=2.5)
    p.add_argument("--elevation", type=float, default=30.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="sketch-similarity report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic sketch dataset")
    p.add_argument("--scene", required=True)
    p.add_argument("--views", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
