"""``hallucsr train | eval | hallucinate``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import tomli
import torch
from filelock import FileLock, Timeout

from .config import ConfigError, RunConfig
from .data import load_dataset, load_image, split, synth_dataset
from .evaluation import emit_grid, evaluate, sample_noise
from .imagecore import nearest_upscale, to_numpy, write_png
from .nets import FeatureExtractor, ModelBundle, build_bundle, load_checkpoint
from .training import NonFiniteLossError, TrainConfig, substream_seed, train

log = logging.getLogger("hallucsr")

OUT_ENV = "HALLUCSR_OUT"


class CommandError(Exception):
    pass


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    env_out = os.environ.get(OUT_ENV)
    if env_out and not getattr(args, "config", None):
        cfg.override("output.out_dir", env_out)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg.override(key.strip(), _parse_value(value.strip()))
    if getattr(args, "seed", None) is not None:
        cfg.override("train.seed", args.seed)
    if getattr(args, "steps", None) is not None:
        cfg.override("train.total_steps", args.steps)
    if getattr(args, "out", None):
        cfg.override("output.out_dir", args.out)
    return cfg


def build_dataset(cfg: RunConfig, root: str | None = None):
    g = cfg.generator
    root = root if root is not None else cfg.data.root
    if root:
        return load_dataset(root, g.hr_size, g.scale_factor, g.channels)
    return synth_dataset(cfg.data.n_synthetic, g.hr_size, g.scale_factor,
                         seed=substream_seed(cfg.train.seed, "synth"), channels=g.channels)


def split_dataset(cfg: RunConfig, dataset):
    if cfg.data.train_fraction >= 1:
        return dataset, dataset
    return split(dataset, cfg.data.train_fraction, seed=substream_seed(cfg.train.seed, "split"))


class _OutputLock:
    def __init__(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.lock = FileLock(str(out_dir / ".lock"))

    def __enter__(self):
        try:
            self.lock.acquire(timeout=0)
        except Timeout:
            raise CommandError(f"output directory {self.lock.lock_file} is in use by another process")
        return self

    def __exit__(self, *exc):
        self.lock.release()


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out_dir = Path(cfg.output.out_dir)
    dataset = build_dataset(cfg)
    train_set, _ = split_dataset(cfg, dataset)

    with _OutputLock(out_dir):
        cfg.save(out_dir / "config.toml")
        bundle = None
        ckpt = out_dir / "checkpoint.pt"
        if args.resume and ckpt.exists():
            bundle = load_checkpoint(ckpt)
            log.info("resuming from %s at step %d", ckpt, bundle.step)
        else:
            extractor = None
            if cfg.extractor.weights_path:
                extractor = FeatureExtractor.from_weights(cfg.extractor.weights_path)
            bundle = build_bundle(cfg.generator, seed=substream_seed(cfg.train.seed, "init"),
                                  extractor=extractor, stage_widths=cfg.extractor.stage_widths)
        bundle.metadata["run_config"] = cfg.to_dict()
        train_cfg = TrainConfig(**{**cfg.to_dict()["train"], "hflip": cfg.data.hflip})
        bundle, rows = train(train_cfg, train_set, out_dir=out_dir, bundle=bundle)
        bundle.generator.eval()
        emit_grid(bundle.generator, train_set[: cfg.output.grid_rows], cfg.output.grid_z_count,
                  out_dir / "grid.png", cfg.generator.noise_dim, seed=substream_seed(cfg.train.seed, "grid"))
    if rows:
        last = rows[-1]
        print(f"step {last['step']}: loss_recons={last['loss_recons']:.4f} loss_halluc={last['loss_halluc']:.4f}")
    print(f"wrote {out_dir}")
    return 0


def _load_bundle(path) -> ModelBundle:
    path = Path(path)
    if not path.is_file():
        raise CommandError(f"checkpoint not found: {path}")
    bundle = load_checkpoint(path)
    bundle.generator.eval()
    return bundle


def _run_config(bundle: ModelBundle) -> RunConfig:
    stored = bundle.metadata.get("run_config")
    cfg = RunConfig.from_dict(stored) if stored else RunConfig()
    cfg.generator = bundle.config
    return cfg


def cmd_eval(args) -> int:
    bundle = _load_bundle(args.checkpoint)
    cfg = _run_config(bundle)
    seed = args.seed if args.seed is not None else cfg.train.seed
    dataset = build_dataset(cfg, root=args.data)
    train_set, test_set = split_dataset(cfg, dataset)
    samples = {"test": test_set, "train": train_set, "all": dataset}[args.split]
    z_count = args.z_count if args.z_count is not None else cfg.output.eval_z_count
    report = evaluate(bundle.generator, bundle.extractor, samples, bundle.config.noise_dim,
                      z_count=z_count, epsilon=cfg.train.weights.epsilon, seed=substream_seed(seed, "eval"))
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    target = out if out.suffix == ".json" else out / "metrics.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_hallucinate(args) -> int:
    bundle = _load_bundle(args.checkpoint)
    g = bundle.config
    lr = torch.from_numpy(load_image(args.image, g.lr_size, g.channels).transpose(2, 0, 1).copy())
    lr = lr.to(torch.float32)[None]
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    z_count = args.z_count if args.z_count is not None else 4
    seed = args.seed if args.seed is not None else 0
    with torch.no_grad():
        tiles = [nearest_upscale(lr[0], g.scale_factor)]
        sr = bundle.generator(lr, torch.zeros(g.noise_dim)).image[0]
        write_png(out / "sr.png", to_numpy(sr))
        tiles.append(sr)
        for i, z in enumerate(sample_noise(z_count, g.noise_dim, substream_seed(seed, "z"))):
            img = bundle.generator(lr, z).image[0]
            write_png(out / f"halluc_{i:02d}.png", to_numpy(img))
            tiles.append(img)
    if z_count:
        write_png(out / "grid.png", to_numpy(torch.cat(tiles, dim=-1)))
    print(f"wrote {1 + z_count} images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hallucsr", description="One-to-many super-resolution GAN.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; zero-config runs the synthetic desk test")
    p.add_argument("--config", help="TOML run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or the config value)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.batch_size=4")
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.pt if present")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="write a metrics JSON report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="image directory (default: the dataset the checkpoint was trained on)")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--z-count", type=int, dest="z_count")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for metrics.json, or a .json path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hallucinate", help="reconstruct one LR image and sample hallucinations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("image", help="LR input image (center-cropped and resized to the model's LR size)")
    p.add_argument("--z-count", type=int, dest="z_count")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_hallucinate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ConfigError, NonFiniteLossError, OSError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"hallucsr {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
