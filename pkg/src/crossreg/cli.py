"""Command-line entry point.

Verbs: train, register, evaluate, bench, synth-gen.  Every command resolves
a RunConfig (defaults, optionally overlaid by --config TOML), writes the
resolved config next to its outputs, and exits nonzero with a
machine-readable error category on failure.
"""

import argparse
import csv
import json
import os
import statistics
import sys
import time

import numpy as np

from . import checkpoint, config, kitti, matching, metrics, pipeline
from .errors import ConfigError, CrossRegError
from .export import write_correspondence_svg
from .scenes import load_scene, save_scene
from .synthetic import SyntheticSceneConfig, generate_synthetic, synthetic_dataset


def _load_config(args) -> config.RunConfig:
    cfg = config.load_config(args.config) if args.config else config.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.optim.epochs = args.epochs
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _synthetic_config(cfg: config.RunConfig, seed=None) -> SyntheticSceneConfig:
    d = cfg.data
    return SyntheticSceneConfig(n_points=d.n_points, n_primitives=d.n_primitives,
                                rotation_jitter_deg=d.rotation_jitter_deg,
                                translation_jitter=d.translation_jitter,
                                seed=cfg.seed if seed is None else seed,
                                image_width=d.image_width, image_height=d.image_height)


def load_dataset(cfg: config.RunConfig):
    """Scenes according to cfg.data.source."""
    d = cfg.data
    if d.source == "synthetic":
        return synthetic_dataset(_synthetic_config(cfg), d.n_scenes, base_seed=cfg.seed)
    if d.source == "scene-dir":
        names = sorted(n for n in os.listdir(d.scene_dir) if n.endswith(".bin"))
        return [load_scene(os.path.join(d.scene_dir, n)) for n in names]
    if d.source == "kitti":
        scenes = []
        for seq, frame, velo in kitti.list_split_frames(d.kitti_root, d.split, d.frame_stride):
            paths = kitti.sequence_paths(d.kitti_root, seq)
            scene = kitti.load_kitti_frame(velo, paths["calib"], paths["poses"], frame,
                                           n_points=d.n_points, seed=cfg.seed)
            scene.id = f"{seq}/{frame:06d}"
            scenes.append(scene)
        if not scenes:
            raise ConfigError(f"no frames found under {d.kitti_root} for split '{d.split}'")
        return scenes
    raise ConfigError(f"unknown data source '{d.source}'")


def _prepare_out(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    config.save_config(os.path.join(cfg.out_dir, "config.toml"), cfg)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _prepare_out(cfg)
    scenes = load_dataset(cfg)
    prepared = pipeline.prepare_scenes(scenes, cfg)

    history_path = os.path.join(cfg.out_dir, "loss_history.csv")
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "coarse", "fine", "classify", "joint"])

        def on_epoch(row):
            writer.writerow([row["epoch"], f"{row['lr']:.8f}", f"{row['coarse']:.6f}",
                             f"{row['fine']:.6f}", f"{row['classify']:.6f}", f"{row['joint']:.6f}"])
            if row["epoch"] % max(1, cfg.optim.epochs // 10) == 0:
                print(f"epoch {row['epoch']:4d}  lr {row['lr']:.2e}  joint {row['joint']:.4f}")

        network, history = pipeline.train(prepared, cfg, epoch_callback=on_epoch)
    ckpt = os.path.join(cfg.out_dir, "model.bin")
    network.save(ckpt)
    print(f"trained {cfg.optim.epochs} epochs on {len(scenes)} scenes; "
          f"first joint {history[0]['joint']:.4f}, last {history[-1]['joint']:.4f}")
    print(f"checkpoint: {ckpt}\nloss log: {history_path}")
    return 0


def _load_network(cfg, path):
    network = pipeline.build_network(cfg)
    network.load(path)
    return network


def _resolve_scene(args, cfg):
    if args.scene:
        return load_scene(args.scene)
    if args.kitti_root:
        paths = kitti.sequence_paths(args.kitti_root, args.sequence)
        velo = os.path.join(paths["velodyne"], f"{args.frame:06d}.bin")
        return kitti.load_kitti_frame(velo, paths["calib"], paths["poses"], args.frame,
                                      n_points=cfg.data.n_points, seed=cfg.seed)
    raise ConfigError("register needs --scene or --kitti-root/--sequence/--frame")


def cmd_register(args) -> int:
    cfg = _load_config(args)
    _prepare_out(cfg)
    scene = _resolve_scene(args, cfg)
    network = _load_network(cfg, args.checkpoint)
    prep = pipeline.prepare_scene(scene, cfg, 0)
    reg = pipeline.register_scene(network, prep, cfg)
    est = reg["estimate"]

    pose_path = os.path.join(cfg.out_dir, "pose.json")
    payload = {"scene": scene.id,
               "rotation": est.pose.rotation.tolist(),
               "translation": est.pose.translation.tolist(),
               "inliers": int(len(est.inlier_ids)),
               "mean_reprojection_error_px": est.mean_reprojection_error,
               "inference_ms": reg["inference_ms"], "pose_ms": reg["pose_ms"]}
    rre, rte = metrics.rre_rte(scene.gt_pose, est.pose)
    payload["rre_deg"] = rre
    payload["rte_m"] = rte
    with open(pose_path, "w") as fh:
        json.dump(payload, fh, indent=2)

    pairs_path = os.path.join(cfg.out_dir, "correspondences.csv")
    matching.write_correspondences(pairs_path, [reg["coarse"], reg["fine"]], prep.pyramid)
    if args.svg:
        svg_path = os.path.join(cfg.out_dir, "correspondences.svg")
        write_correspondence_svg(svg_path, scene, prep.pyramid, reg["fine"],
                                 prep.hierarchy, tau=cfg.ir_tau)
        print(f"svg: {svg_path}")
    print(f"pose: {pose_path} (RRE {rre:.3f} deg, RTE {rte:.3f} m, "
          f"{len(est.inlier_ids)} inliers)")
    print(f"correspondences: {pairs_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    _prepare_out(cfg)
    scenes = load_dataset(cfg)
    network = _load_network(cfg, args.checkpoint)
    prepared = pipeline.prepare_scenes(scenes, cfg)
    results = pipeline.evaluate_scenes(network, prepared, cfg)

    per_frame = os.path.join(cfg.out_dir, "metrics.csv")
    metrics.write_metric_log(per_frame, results)
    rows = metrics.threshold_table(results)
    agg_path = os.path.join(cfg.out_dir, "aggregate.csv")
    metrics.write_threshold_table(agg_path, rows)

    sweep_path = os.path.join(cfg.out_dir, "ir_sweep.csv")
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_px", "mean_ir"])
        for tau in (0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0):
            sweep_cfg = config.from_toml(config.to_toml(cfg))
            sweep_cfg.ir_tau = tau
            swept = pipeline.evaluate_scenes(network, prepared, sweep_cfg)
            irs = [r.ir for r in swept if np.isfinite(r.ir)]
            writer.writerow([tau, f"{np.mean(irs):.6f}" if irs else ""])

    print(f"{'threshold':>10s} {'RRE':>14s} {'RTE':>14s} {'RR%':>8s} {'frames':>7s}")
    for row in rows:
        print(f"{row['threshold']:>10s} {row['rre_mean']:7.3f}±{row['rre_std']:<6.3f} "
              f"{row['rte_mean']:7.3f}±{row['rte_std']:<6.3f} {row['rr_percent'] or '-':>8s} "
              f"{row['n_frames']:7d}")
    print(f"per-frame: {per_frame}\naggregate: {agg_path}\nir sweep: {sweep_path}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    _prepare_out(cfg)
    network = _load_network(cfg, args.checkpoint)
    scene = generate_synthetic(_synthetic_config(cfg))
    prep = pipeline.prepare_scene(scene, cfg, 0)

    runs = max(20, args.runs)
    inference, pose = [], []
    for _ in range(runs):
        reg = pipeline.register_scene(network, prep, cfg)
        inference.append(reg["inference_ms"])
        pose.append(reg["pose_ms"])
    med_inf = statistics.median(inference)
    med_pose = statistics.median(pose)
    macs = network.mac_estimate(prep.pyramid, prep.hierarchy.n_fine, prep.hierarchy.n_super)
    report = {"parameters": network.parameter_count(),
              "mac_estimate": macs,
              "runs": runs,
              "inference_ms_median": med_inf,
              "pose_estimation_ms_median": med_pose,
              "fps": 1000.0 / (med_inf + med_pose)}
    path = os.path.join(cfg.out_dir, "bench.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"parameters: {report['parameters']}")
    for stage, count in macs.items():
        print(f"macs[{stage}]: {count:,}")
    print(f"inference: {med_inf:.2f} ms  pose estimation: {med_pose:.2f} ms  "
          f"fps: {report['fps']:.2f}")
    print(f"report: {path}")
    return 0


def cmd_synth_gen(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    count = args.count if args.count else cfg.data.n_scenes
    names = []
    for k in range(count):
        scene = generate_synthetic(_synthetic_config(cfg, seed=cfg.seed + k))
        scene.id = f"scene_{k:03d}"
        name = f"scene_{k:03d}.bin"
        save_scene(os.path.join(cfg.out_dir, name), scene)
        names.append(name)
    manifest = {"seed": cfg.seed, "count": count, "scenes": names,
                "config": {"data": config._to_dict(cfg.data)}}
    with open(os.path.join(cfg.out_dir, "manifest.toml"), "w") as fh:
        fh.write(config.dump_toml(manifest))
    print(f"wrote {count} scenes + manifest to {cfg.out_dir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="crossreg",
                                     description="coarse-to-fine image/point-cloud registration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p)
    p.add_argument("--epochs", type=int, help="override epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="estimate the pose of one scene")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", help="scene container (.bin)")
    p.add_argument("--kitti-root")
    p.add_argument("--sequence", default="00")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--svg", action="store_true", help="write a correspondence SVG")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("evaluate", help="metrics over a dataset split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="timing and MAC estimates")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--runs", type=int, default=20)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth-gen", help="generate synthetic scenes")
    common(p)
    p.add_argument("--count", type=int, default=0)
    p.set_defaults(func=cmd_synth_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CrossRegError as exc:
        print(f"error category={exc.category}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
