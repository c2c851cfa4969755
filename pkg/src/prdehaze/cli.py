"""Command-line entry point: ``prdehaze {synthesize,train,dehaze,evaluate}``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from prdehaze import config as cfg
from prdehaze.data import (SPLITS, DatasetManifest, generate_synthetic, load_dataset,
                           procedural_clean_images, read_rgb, write_rgb)

log = logging.getLogger("prdehaze")

EXIT_USAGE = 1
EXIT_RUNTIME = 2
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolved(args):
    try:
        return cfg.load(args.config) if args.config else cfg.resolve({})
    except cfg.ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _split_dir(root, split):
    return Path(root) / split


def _require_manifest(path):
    manifest_path = Path(path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"dataset not found: {manifest_path}")
    return DatasetManifest.read(manifest_path)


def cmd_synthesize(args):
    resolved = _resolved(args)
    data = resolved["data"]
    root = Path(args.out or data["root"])
    clean_files = []
    if data["clean_dir"]:
        clean_dir = Path(data["clean_dir"])
        if not clean_dir.is_dir():
            raise FileNotFoundError(f"clean image directory not found: {clean_dir}")
        clean_files = sorted(p for p in clean_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    start = 0
    for n, split in enumerate(SPLITS):
        count = int(data["counts"].get(split, 0))
        if data["clean_dir"]:
            images = clean_files[start:start + count]
        else:
            images = procedural_clean_images(count, data["size"], data["seed"], offset=start)
        start += count
        manifest = generate_synthetic(images, _split_dir(root, split), split,
                                      tuple(data["beta_range"]), tuple(data["A_range"]),
                                      seed=data["seed"] * 10 + n, d_max=data["d_max"])
        log.info("wrote %d %s samples to %s", manifest.count, split, manifest.root)
    resolved["data"]["root"] = str(root)
    cfg.write_resolved(resolved, root)


def cmd_train(args):
    from prdehaze.plotting import plot_loss_log
    from prdehaze.training import LAST, LOSS_LOG, set_strict, train

    resolved = _resolved(args)
    if args.strict:
        set_strict(True)
    root = resolved["data"]["root"]
    train_manifest = _require_manifest(_split_dir(root, "train"))
    val_dir = _split_dir(root, "val")
    val_manifest = _require_manifest(val_dir) if (val_dir / "manifest.json").exists() else None
    out = Path(args.out or resolved["train"]["out_dir"])
    resume_from = None
    if args.resume:
        resume_from = Path(args.checkpoint) if args.checkpoint else out / LAST
        if not resume_from.exists():
            raise FileNotFoundError(f"no checkpoint to resume from: {resume_from}")
    train_set = list(load_dataset(train_manifest))
    val_set = list(load_dataset(val_manifest)) if val_manifest else None
    train(cfg.train_config(resolved), cfg.model_config(resolved), train_set, val_set, out, resume_from)
    plot_loss_log(out / LOSS_LOG, out / "loss_curve.png")
    resolved["train"]["out_dir"] = str(out)
    cfg.write_resolved(resolved, out)
    log.info("checkpoint written to %s", out / LAST)


def _checkpoint_arg(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    path = Path(args.checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def cmd_dehaze(args):
    from prdehaze.training import load_model

    path = _checkpoint_arg(args)
    if not args.input:
        raise UsageError("--input is required")
    in_dir = Path(args.input)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {in_dir}")
    out = Path(args.out or "dehazed")
    model, metadata = load_model(path)
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    for f in files:
        trace, stages = model.dehaze(read_rgb(f)[None])
        outputs = {"free": trace[-1][0], "prelim": stages.J_prelim, "refine": stages.J_refine}
        for stage, img in outputs.items():
            write_rgb(out / stage / f"{f.stem}.png", img[0])
    resolved = {"checkpoint": str(path), "step": metadata["step"],
                "model": metadata["model_config"], "input": str(in_dir)}
    out.mkdir(parents=True, exist_ok=True)
    (out / cfg.RESOLVED).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    log.info("dehazed %d images into %s", len(files), out)


def cmd_evaluate(args):
    from prdehaze.evaluation import evaluate
    from prdehaze.plotting import plot_iterations, plot_stages
    from prdehaze.training import load_model

    resolved = _resolved(args)
    path = _checkpoint_arg(args)
    manifest = _require_manifest(args.manifest or _split_dir(resolved["data"]["root"],
                                                             resolved["eval"]["split"]))
    out = Path(args.out or resolved["eval"]["out_dir"])
    model, _ = load_model(path)
    records = evaluate(model, load_dataset(manifest), out)
    plot_iterations(records, out / "iterations.png")
    plot_stages(records, out / "stages.png")
    resolved["eval"]["out_dir"] = str(out)
    cfg.write_resolved(resolved, out)
    log.info("evaluated %d samples; results in %s", len(records), out / "results.csv")


def build_parser():
    parser = _Parser(prog="prdehaze", description="Progressive residual dehazing.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, checkpoint=False):
        p.add_argument("--config", metavar="PATH", help="JSON run configuration")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
        if checkpoint:
            p.add_argument("--checkpoint", metavar="PATH", help="checkpoint file")
        return p

    p = common(sub.add_parser("synthesize", help="generate a synthetic hazy dataset"))
    p.set_defaults(func=cmd_synthesize)

    p = common(sub.add_parser("train", help="train the cascade"), checkpoint=True)
    p.add_argument("--resume", action="store_true",
                   help="continue from --checkpoint or <out>/last.ckpt")
    p.add_argument("--strict", action="store_true", help="single-threaded bit-reproducible mode")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("dehaze", help="dehaze a directory of images"), checkpoint=True)
    p.add_argument("--input", metavar="DIR", help="directory of hazy images")
    p.set_defaults(func=cmd_dehaze)

    p = common(sub.add_parser("evaluate", help="PSNR/SSIM per iteration and stage"), checkpoint=True)
    p.add_argument("--manifest", metavar="PATH", help="dataset root or manifest.json")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"prdehaze {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        log.debug("failure", exc_info=True)
        print(f"prdehaze {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
