"""Command-line interface.

Each command reads an optional declarative YAML config; explicit flags
override config fields, unknown keys are rejected, and the effective
configuration is echoed next to the outputs for provenance. Commands exit 0
on success and nonzero with a single `error: ...` line otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import yaml

from . import datasets, metrics, report, simulate, training, volumes
from .errors import ConfigError, EvsimError


# ---------------------------------------------------------------------------
# config plumbing

def _load_yaml(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(data).__name__}")
    return data


def merge_config(defaults: dict, config_path, overrides: dict) -> dict:
    """defaults <- config file <- explicitly set flags; unknown keys rejected."""
    merged = dict(defaults)
    if config_path is not None:
        file_cfg = _load_yaml(config_path)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}; "
                              f"expected a subset of {sorted(defaults)}")
        merged.update(file_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def echo_config(config: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config, sort_keys=True))


def _train_config_from(mapping: dict) -> training.TrainConfig:
    fields = {f.name for f in dataclasses.fields(training.TrainConfig)}
    unknown = set(mapping) - fields
    if unknown:
        raise ConfigError(f"unknown train config keys {sorted(unknown)}")
    values = dict(mapping)
    for key in ("frame_gap_range", "dataset_weights"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    return training.TrainConfig(**values)


def _build_datasets(dataset_cfg: dict, train_cfg: training.TrainConfig):
    kind = dataset_cfg.get("kind")
    if kind == "toy":
        known = {"kind", "size", "theta", "num_substeps", "max_shift", "noise_sigma"}
        unknown = set(dataset_cfg) - known
        if unknown:
            raise ConfigError(f"unknown toy dataset keys {sorted(unknown)}")
        params = {k: v for k, v in dataset_cfg.items() if k != "kind"}
        return [datasets.ToyMovingShapes(**params)], (1.0,)
    if kind == "sequences":
        known = {"kind", "manifests"}
        unknown = set(dataset_cfg) - known
        if unknown:
            raise ConfigError(f"unknown sequence dataset keys {sorted(unknown)}")
        manifests = dataset_cfg.get("manifests") or []
        if not manifests:
            raise ConfigError("sequence dataset needs at least one manifest path")
        built = [datasets.SequenceDataset(datasets.load_manifest(m),
                                          train_cfg.frame_gap_range)
                 for m in manifests]
        if len(built) == 1:
            return built, (1.0,)
        weights = train_cfg.dataset_weights
        if len(weights) != len(built):
            raise ConfigError(
                f"dataset_weights has {len(weights)} entries for {len(built)} manifests")
        return built, weights
    raise ConfigError(f"dataset kind must be 'toy' or 'sequences', got {kind!r}")


def _sampler_for(config: dict, train_cfg: training.TrainConfig):
    built, weights = _build_datasets(config["dataset"], train_cfg)
    return datasets.weighted_dataset_sampler(built, weights, seed=train_cfg.seed)


# ---------------------------------------------------------------------------
# commands

def cmd_voxelize(args) -> int:
    config = merge_config(
        {"bins": 9, "normalize": False}, args.config,
        {"bins": args.bins, "normalize": args.normalize or None})
    stream = datasets.read_events(args.events)
    volume = volumes.build_volume(stream, num_bins=int(config["bins"]))
    if config["normalize"]:
        volume = volumes.normalize_volume(volume)
    volumes.write_volume(volume, args.out)
    echo_config({"command": "voxelize", "events": str(args.events),
                 "out": str(args.out), **config}, str(args.out) + ".run.yaml")
    print(f"wrote {args.out}: {2 * volume.num_bins}x{volume.height}x{volume.width} volume")
    return 0


def cmd_sim_classical(args) -> int:
    defaults = {"mode": "pair", "theta": 0.2, "sigma": 0.0, "log_eps": 1e-3,
                "seed": 0, "dt": 0.1, "duration": 0.1, "translation": [0.0, 0.0],
                "rotation": 0.0, "scale": 1.0, "substeps": 20}
    overrides = {"mode": args.mode, "theta": args.theta, "sigma": args.sigma,
                 "log_eps": args.log_eps, "seed": args.seed, "dt": args.dt,
                 "duration": args.duration, "translation": args.translation,
                 "rotation": args.rotation, "scale": args.scale,
                 "substeps": args.substeps}
    config = merge_config(defaults, args.config, overrides)
    model = simulate.ThresholdModel(theta=float(config["theta"]),
                                    noise_sigma=float(config["sigma"]),
                                    log_eps=float(config["log_eps"]))
    if config["mode"] == "pair":
        if len(args.images) != 2:
            raise ConfigError("pair mode needs exactly two images")
        i0 = datasets.load_grayscale(args.images[0])
        i1 = datasets.load_grayscale(args.images[1])
        stream = simulate.frame_pair_events(i0, i1, dt=float(config["dt"]),
                                            model=model, seed=int(config["seed"]))
    elif config["mode"] == "affine":
        if len(args.images) != 1:
            raise ConfigError("affine mode needs exactly one image")
        image = datasets.load_grayscale(args.images[0])
        motion = simulate.AffineMotion(
            translation=tuple(float(v) for v in config["translation"]),
            rotation=float(config["rotation"]),
            scale=float(config["scale"]),
            num_substeps=int(config["substeps"]),
        )
        stream, pair = simulate.affine_sim_events(image, motion,
                                                  float(config["duration"]), model,
                                                  seed=int(config["seed"]))
        if args.save_frames:
            datasets.save_grayscale(pair.i0, args.save_frames + "_first.png")
            datasets.save_grayscale(pair.i1, args.save_frames + "_last.png")
    else:
        raise ConfigError(f"mode must be 'pair' or 'affine', got {config['mode']!r}")
    datasets.write_events(stream, args.out)
    echo_config({"command": "sim-classical", "images": [str(p) for p in args.images],
                 "out": str(args.out), **config}, str(args.out) + ".run.yaml")
    print(f"wrote {args.out}: {len(stream)} events")
    return 0


_RUN_DEFAULTS = {"out_dir": None, "dataset": None, "train": None,
                 "cycle_checkpoints": None}


def _load_run_config(args, command: str) -> tuple[dict, training.TrainConfig, Path]:
    config = merge_config(_RUN_DEFAULTS, args.config,
                          {"out_dir": args.out_dir,
                           "cycle_checkpoints": getattr(args, "cycle_checkpoints", None)})
    if not config.get("out_dir"):
        raise ConfigError(f"{command} needs out_dir (flag --out-dir or config key)")
    if not isinstance(config.get("dataset"), dict):
        raise ConfigError(f"{command} config needs a 'dataset' mapping")
    train_cfg = _train_config_from(config.get("train") or {})
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
        config["train"] = dict(config.get("train") or {}, seed=args.seed)
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config({"command": command, **config}, out_dir / "run_config.yaml")
    return config, train_cfg, out_dir


def cmd_pretrain(args) -> int:
    config, train_cfg, out_dir = _load_run_config(args, "pretrain")
    sampler = _sampler_for(config, train_cfg)
    flow_net, recon_net, history = training.pretrain_cycle_nets(
        sampler, train_cfg, log_path=out_dir / "pretrain_log.tsv",
        checkpoint_dir=out_dir)
    report.training_curves(training.ScalarLog.parse(out_dir / "pretrain_log.tsv"), out_dir)
    final = history[-1] if history else (float("nan"), float("nan"))
    print(f"pretrained cycle nets for {len(history)} steps "
          f"(final flow {final[0]:.4f}, recon {final[1]:.4f}); checkpoints in {out_dir}")
    return 0


def cmd_train(args) -> int:
    config, train_cfg, out_dir = _load_run_config(args, "train")
    ckpt_dir = config.get("cycle_checkpoints")
    if not ckpt_dir:
        raise ConfigError("train needs cycle_checkpoints (directory with flow.ckpt/recon.ckpt)")
    flow_path = Path(ckpt_dir) / "flow.ckpt"
    recon_path = Path(ckpt_dir) / "recon.ckpt"
    for path in (flow_path, recon_path):
        if not path.exists():
            raise ConfigError(f"missing cycle checkpoint: {path}")
    flow_net = training.freeze(training.load_checkpoint(flow_path, "flow"))
    recon_net = training.freeze(training.load_checkpoint(recon_path, "recon"))
    sampler = _sampler_for(config, train_cfg)
    generator, discriminator, history = training.train_event_generator(
        sampler, flow_net, recon_net, train_cfg,
        log_path=out_dir / "train_log.tsv", checkpoint_dir=out_dir)
    report.training_curves(training.ScalarLog.parse(out_dir / "train_log.tsv"), out_dir)
    final = history[-1]["total"] if history else float("nan")
    print(f"trained generator for {train_cfg.iterations} iterations "
          f"(final generator loss {final:.4f}); checkpoints in {out_dir}")
    return 0


def cmd_generate(args) -> int:
    import torch

    generator = training.load_checkpoint(args.checkpoint, "generator")
    generator.eval()
    i0 = datasets.load_grayscale(args.image0)
    i1 = datasets.load_grayscale(args.image1)
    if i0.shape != i1.shape:
        raise ConfigError(f"frames differ in size: {i0.shape} vs {i1.shape}")
    with torch.no_grad():
        out = generator(torch.from_numpy(i0)[None, None], torch.from_numpy(i1)[None, None])
    volume = volumes.EventVolume(out[0].numpy(), num_bins=generator.config.num_bins)
    volumes.write_volume(volume, args.out)
    written = [Path(args.out)]
    if args.viz:
        written += report.volume_figures(volume, Path(args.out).with_suffix(""))
    echo_config({"command": "generate", "checkpoint": str(args.checkpoint),
                 "image0": str(args.image0), "image1": str(args.image1),
                 "out": str(args.out), "viz": bool(args.viz)},
                str(args.out) + ".run.yaml")
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def cmd_eval(args) -> int:
    if args.kind == "detection":
        defaults = {"conf_thresh": 0.2, "nms_iou": 0.2, "match_iou": 0.5,
                    "eleven_point_ap": False}
        config = merge_config(defaults, args.config,
                              {"conf_thresh": args.conf_thresh, "nms_iou": args.nms_iou,
                               "match_iou": args.match_iou})
        boxes, scores = metrics.read_detections_file(args.pred)
        gt_boxes, labels = metrics.read_gt_boxes_file(args.truth)
        result = metrics.voc_detection_eval(
            metrics.DetectionSet(boxes, scores, gt_boxes, labels),
            metrics.DetectionEvalConfig(**{k: config[k] for k in defaults}))
        out = report.detection_report(result, args.out_dir)
        echo_config({"command": "eval", "kind": "detection", "pred": str(args.pred),
                     "truth": str(args.truth), **config},
                    Path(args.out_dir) / "run_config.yaml")
    elif args.kind == "pose":
        defaults = {"head_index": 0, "shoulder_indices": [1, 2]}
        config = merge_config(defaults, args.config,
                              {"head_index": args.head_index,
                               "shoulder_indices": args.shoulder_indices})
        pred = metrics.read_pose_file(args.pred)
        truth = metrics.read_pose_file(args.truth)
        shoulders = tuple(int(i) for i in config["shoulder_indices"])
        values = {
            "mpjpe": metrics.mpjpe(pred, truth),
            "pckh50": metrics.pckh50(pred, truth, int(config["head_index"]), shoulders),
        }
        out = report.pose_report(pred, truth, values, args.out_dir)
        echo_config({"command": "eval", "kind": "pose", "pred": str(args.pred),
                     "truth": str(args.truth), **config},
                    Path(args.out_dir) / "run_config.yaml")
    else:
        raise ConfigError(f"eval kind must be 'pose' or 'detection', got {args.kind!r}")
    print(f"wrote {out}")
    for key, value in report.read_report(out).items():
        print(f"  {key} = {value}")
    return 0


# ---------------------------------------------------------------------------
# parser

def cmd_reference(args) -> int:
    """Emit the full flag and config-key reference, generated from the parser."""
    parser = build_parser()
    lines = ["# evsim command reference", ""]
    sub_actions = [a for a in parser._actions
                   if isinstance(a, argparse._SubParsersAction)]
    for name, sub in sub_actions[0].choices.items():
        lines += [f"## evsim {name}", "", "```", sub.format_help().rstrip(), "```", ""]
    lines += [
        "## run config keys (pretrain / train)",
        "",
        "Top level: `out_dir`, `dataset`, `train`, `cycle_checkpoints` (train only).",
        "`dataset.kind: toy` takes `size`, `theta`, `num_substeps`, `max_shift`,"
        " `noise_sigma`; `dataset.kind: sequences` takes `manifests` (list of paths).",
        "`train` accepts the fields of TrainConfig:",
        "",
    ]
    for f in dataclasses.fields(training.TrainConfig):
        lines.append(f"- `{f.name}` (default `{f.default}`)")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsim",
        description="Event-camera simulation: voxelize streams, run classical "
                    "simulators, train and run the generative pipeline, and "
                    "evaluate downstream metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="events file -> spatiotemporal volume")
    p.add_argument("events")
    p.add_argument("out")
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--normalize", action="store_true", default=False)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("sim-classical", help="classical event simulators")
    p.add_argument("images", nargs="+")
    p.add_argument("out")
    p.add_argument("--mode", choices=["pair", "affine"], default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--log-eps", dest="log_eps", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--translation", type=float, nargs=2, default=None)
    p.add_argument("--rotation", type=float, default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--substeps", type=int, default=None)
    p.add_argument("--save-frames", default=None, help="prefix for first/last frame PNGs")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_sim_classical)

    p = sub.add_parser("pretrain", help="pretrain flow and reconstruction nets")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="adversarially train the volume generator")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--cycle-checkpoints", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="run the generator on an image pair")
    p.add_argument("checkpoint")
    p.add_argument("image0")
    p.add_argument("image1")
    p.add_argument("out")
    p.add_argument("--viz", action="store_true",
                   help="also write average-timestamp and count images")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("reference", help="print the generated flag/config reference")
    p.add_argument("--out", default=None, help="write markdown to this path")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("eval", help="evaluate pose or detection files")
    p.add_argument("kind", choices=["pose", "detection"])
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--conf-thresh", dest="conf_thresh", type=float, default=None)
    p.add_argument("--nms-iou", dest="nms_iou", type=float, default=None)
    p.add_argument("--match-iou", dest="match_iou", type=float, default=None)
    p.add_argument("--head-index", dest="head_index", type=int, default=None)
    p.add_argument("--shoulder-indices", dest="shoulder_indices", type=int, nargs=2,
                   default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EvsimError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
