"""Batch command-line entry point.

Subcommands: ``simulate`` (scene files), ``train`` (checkpoints + loss
curves), ``track`` (MOT result + event log), ``eval`` (metric report),
``plot`` (SVG overlays), ``selfcheck`` (gradient and oracle suites).  Every
run is reproducible from its config and seed; files created by a failing
command are removed.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

import numpy as np

from .config import ConfigError, RunConfig, build_config, dump_config


class CliError(RuntimeError):
    pass


class _OutputTracker:
    """Records created paths so a failed command can clean up after itself."""

    def __init__(self):
        self.paths = []

    def add(self, path):
        self.paths.append(path)
        return path

    def cleanup(self):
        for path in self.paths:
            try:
                if os.path.isfile(path):
                    os.remove(path)
            except OSError:
                pass


def _parse_preset(name, cfg: RunConfig):
    """Presets like circle6 / line4 / scurve5 / transition8 set the
    trajectory and UAV count on top of the config."""
    match = re.fullmatch(r"(circle|line|scurve|transition)(\d+)", name)
    if not match:
        raise CliError(
            f"unknown scene preset {name!r} (expected e.g. circle6, line4, "
            "scurve5, transition8)"
        )
    kind, count = match.group(1), int(match.group(2))
    cfg.trajectory = {"scurve": "s-curve", "transition": "formation-transition"}.get(
        kind, kind
    )
    cfg.n_uavs = count
    return cfg


def _models_from_config(cfg: RunConfig, rng):
    from .detection import AppearanceEmbedder, DetectionHead, HeadConfig
    from .fusion import FusionConfig, PyramidFuser
    from .predictor import PredictorConfig, SwarmPredictor

    predictor = SwarmPredictor(
        PredictorConfig(
            feature_dim=cfg.feature_dim,
            heads=cfg.heads,
            embed_dim=cfg.embed_dim,
            neighbors=cfg.neighbors,
            neighbor_radius=cfg.neighbor_radius,
            history_len=cfg.history_len,
            horizon=cfg.horizon,
            coord_scale=cfg.coord_scale,
        ),
        rng,
    )
    shapes = cfg.scene_spec().grid_shapes()
    strides = list(cfg.scene_spec().grid_strides)
    head = DetectionHead(
        [s[2] for s in shapes],
        strides,
        HeadConfig(
            num_classes=cfg.num_classes,
            conf_thresh=cfg.conf_thresh,
            nms_iou=cfg.nms_iou,
            reg_weight=cfg.reg_weight,
            embed_dim=cfg.embed_dim,
        ),
        rng,
    )
    fuser = PyramidFuser(
        shapes,
        strides,
        FusionConfig(
            history_len=cfg.history_len,
            history_dim=cfg.grid_channels,
            sigma=cfg.sigma_splat,
            heads=cfg.fusion_heads,
        ),
        rng,
    )
    embedder = AppearanceEmbedder(cfg.grid_channels, cfg.embed_dim, rng)
    return predictor, head, fuser, embedder


def _tracker_config(cfg: RunConfig):
    from .tracker import TrackerConfig

    return TrackerConfig(
        high_thresh=cfg.high_thresh,
        low_iou_gate=cfg.low_iou_gate,
        window=cfg.window,
        max_age=cfg.max_age,
        motion_scale=cfg.motion_scale,
        min_similarity=cfg.min_similarity,
    )


# -- subcommands ---------------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig, outputs):
    from .simulator import export_mot, generate_scene

    if args.spec:
        cfg = _parse_preset(args.spec, cfg)
    scene = generate_scene(cfg.scene_spec(), cfg.seed)
    paths = export_mot(scene, args.out)
    for path in paths.values():
        outputs.add(path)
    print(f"scene written to {args.out} ({scene.frames} frames, "
          f"{scene.spec.formation.count} UAVs)")
    return 0


def _load_scene_dir(scene_dir):
    from .fusion import load_pyramids
    from .motio import read_mot_file

    manifest_path = os.path.join(scene_dir, "scene.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    gt = read_mot_file(os.path.join(scene_dir, "gt.txt"))
    det_path = os.path.join(scene_dir, "det.txt")
    dets = read_mot_file(det_path) if os.path.exists(det_path) else {}
    pyramids = None
    blob = os.path.join(scene_dir, "pyramids.blob")
    if os.path.exists(blob):
        pyramids = load_pyramids(blob)
    return manifest, gt, dets, pyramids


def cmd_track(args, cfg: RunConfig, outputs):
    from .checkpoint import load_checkpoint
    from .detection import Detection
    from .motio import write_mot_file
    from .tracker import TrackingPipeline, write_event_log

    manifest, gt, dets, pyramids = _load_scene_dir(args.scene)
    if pyramids is None:
        raise CliError(f"{args.scene}: no pyramids.blob; re-simulate with rendering")
    rng = np.random.default_rng(cfg.seed)
    predictor, head, fuser, embedder = _models_from_config(cfg, rng)
    for model, path in (
        (predictor, args.predictor_ckpt),
        (head, args.head_ckpt),
        (fuser, args.fuser_ckpt),
        (embedder, args.embedder_ckpt),
    ):
        if path:
            model.load_state(load_checkpoint(path))

    pipeline = TrackingPipeline(
        _tracker_config(cfg),
        predictor,
        embedder,
        head=head,
        fuser=fuser,
        use_fusion=args.fusion == "on",
    )
    rows = []
    frame_outputs = []
    for index, pyramid in enumerate(pyramids):
        frame = index + 1
        detections = None
        if args.dets == "file":
            detections = [
                Detection(box, float(np.clip(conf, 0.0, 1.0)))
                for _, box, conf in dets.get(frame, [])
            ]
        elif args.dets == "oracle":
            detections = [
                Detection(box, 1.0) for _, box, conf in gt.get(frame, [])
            ]
        output, _ = pipeline.process_frame(frame, pyramid, detections)
        frame_outputs.append(output)
        rows.extend(output.rows)

    os.makedirs(args.out, exist_ok=True)
    result_path = outputs.add(os.path.join(args.out, "result.txt"))
    write_mot_file(result_path, rows)
    events_path = outputs.add(os.path.join(args.out, "events.jsonl"))
    write_event_log(events_path, frame_outputs)
    print(f"tracked {len(pyramids)} frames -> {result_path}")
    return 0


def cmd_eval(args, cfg: RunConfig, outputs):
    from .metrics import evaluate, format_report, frames_from_mot
    from .motio import read_mot_file

    gt = frames_from_mot(read_mot_file(args.gt))
    preds = frames_from_mot(read_mot_file(args.result))
    result = evaluate(gt, preds)
    print(format_report(result))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        json_path = outputs.add(os.path.join(args.out, "metrics.json"))
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(result.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        text_path = outputs.add(os.path.join(args.out, "metrics.txt"))
        with open(text_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_report(result) + "\n")
    return 0


def cmd_train(args, cfg: RunConfig, outputs):
    from .checkpoint import save_checkpoint
    from .simulator import generate_scene
    from .train import (
        LossTrace,
        SgdSettings,
        train_association,
        train_detector,
        train_predictor,
    )
    from .scenepool import curved_scene_pool, tracking_scene_pool

    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    predictor, head, fuser, embedder = _models_from_config(cfg, rng)
    settings = SgdSettings(
        lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    trace = LossTrace()

    if args.stage in ("predictor", "all"):
        scenes = curved_scene_pool(args.scenes, cfg.seed)
        train_predictor(
            predictor,
            scenes,
            SgdSettings(lr=max(cfg.lr, 0.004), momentum=cfg.momentum,
                        weight_decay=cfg.weight_decay),
            epochs=args.epochs,
            seed=cfg.seed,
            trace=trace,
        )
        path = outputs.add(os.path.join(args.out, "predictor.ckpt"))
        save_checkpoint(path, predictor.state())
        print(f"predictor checkpoint -> {path}")

    if args.stage in ("detector", "assoc", "all"):
        scenes = tracking_scene_pool(
            max(args.scenes // 10, 4), cfg, seed=cfg.seed + 1
        )
        if args.stage in ("detector", "all"):
            train_detector(head, scenes, settings, steps=args.steps, seed=cfg.seed,
                           trace=trace)
            path = outputs.add(os.path.join(args.out, "head.ckpt"))
            save_checkpoint(path, head.state())
            print(f"detector checkpoint -> {path}")
        if args.stage in ("assoc", "all"):
            train_association(
                predictor, fuser, embedder, scenes, settings,
                steps=args.steps, seed=cfg.seed, trace=trace,
            )
            for name, model in (
                ("predictor", predictor),
                ("fuser", fuser),
                ("embedder", embedder),
            ):
                path = outputs.add(os.path.join(args.out, f"{name}.ckpt"))
                save_checkpoint(path, model.state())
            print(f"association checkpoints -> {args.out}")

    curve_path = outputs.add(os.path.join(args.out, "loss_curves.csv"))
    trace.write_csv(curve_path)
    from .plotting import loss_curve_svg

    svg_path = outputs.add(os.path.join(args.out, "loss_curves.svg"))
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(loss_curve_svg(trace.rows))
    return 0


def cmd_plot(args, cfg: RunConfig, outputs):
    from .metrics import frames_from_mot
    from .motio import read_mot_file
    from .plotting import arrows_svg, trajectory_svg

    gt = frames_from_mot(read_mot_file(args.gt))
    preds = frames_from_mot(read_mot_file(args.result)) if args.result else {}
    os.makedirs(args.out, exist_ok=True)
    size = cfg.image_size
    traj_path = outputs.add(os.path.join(args.out, "trajectories.svg"))
    with open(traj_path, "w", encoding="utf-8") as fh:
        fh.write(trajectory_svg(gt, preds, size))
    arrow_path = outputs.add(os.path.join(args.out, "arrows.svg"))
    with open(arrow_path, "w", encoding="utf-8") as fh:
        fh.write(arrows_svg(gt, preds, size))
    print(f"plots -> {traj_path}, {arrow_path}")
    return 0


def cmd_selfcheck(args, cfg: RunConfig, outputs):
    from .selfcheck import run_selfcheck

    return run_selfcheck(seed=cfg.seed)


# -- argument plumbing ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="swarmtrack",
        description="Swarm-aware multi-UAV tracking pipeline on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="shortcut for --set seed=N")
        p.add_argument(
            "--print-config",
            action="store_true",
            help="print the effective configuration and exit",
        )

    p = sub.add_parser("simulate", help="generate a synthetic scene directory")
    common(p)
    p.add_argument("--spec", help="scene preset, e.g. circle6, scurve5")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="staged training; writes checkpoints")
    common(p)
    p.add_argument("--stage", choices=["predictor", "detector", "assoc", "all"],
                   default="all")
    p.add_argument("--scenes", type=int, default=40, help="training scene count")
    p.add_argument("--epochs", type=int, default=30, help="predictor epochs")
    p.add_argument("--steps", type=int, default=400, help="detector/assoc steps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over a scene directory")
    common(p)
    p.add_argument("--scene", required=True, help="scene directory from simulate")
    p.add_argument("--out", required=True)
    p.add_argument("--dets", choices=["file", "oracle", "head"], default="file",
                   help="detection source: det.txt, ground truth, or the head")
    p.add_argument("--fusion", choices=["on", "off"], default="off")
    p.add_argument("--predictor-ckpt")
    p.add_argument("--head-ckpt")
    p.add_argument("--fuser-ckpt")
    p.add_argument("--embedder-ckpt")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="evaluate a MOT result file against gt")
    common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--out", help="directory for metrics.json / metrics.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="SVG trajectory overlays and motion arrows")
    common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--result")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("selfcheck", help="run gradient and oracle suites")
    common(p)
    p.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    outputs = _OutputTracker()
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = build_config(args.config, overrides)
        if args.print_config:
            print(dump_config(cfg))
            return 0
        return args.func(args, cfg, outputs)
    except (CliError, ConfigError, OSError, ValueError) as exc:
        outputs.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
