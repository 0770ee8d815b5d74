"""Command-line entry point: ``xaugseg <subcommand> ...``.

Exit status is 0 on success, 2 for usage errors (argparse) and 1 for
runtime failures, which print a single ``error:`` line to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as exp
from .augment import AugmentConfig, augment_dataset
from .errors import PipelineError
from .metrics import dice_score
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.network import NetworkConfig, ResidualUNet
from .model.optim import AdamConfig
from .model.train import TrainConfig, predict_volume, train
from .patching import PatchSet, TilingConfig, extract_pairs
from .phantom import PhantomConfig, generate_phantom
from .preprocess import intensity_match, resample_axial
from .volume_io import load_mask, load_volume, save_volume

log = logging.getLogger("xaugseg")


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_synth(args):
    cfg = PhantomConfig(**_read_json(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.start, args.start + args.count):
        image, mask = generate_phantom(cfg, i)
        save_volume(out / f"phantom_{i:03d}_image.nii", image)
        save_volume(out / f"phantom_{i:03d}_mask.nii", mask)
    print(f"wrote {args.count} phantom pairs to {out}")


def cmd_preprocess(args):
    vol = load_volume(args.inp)
    vol = resample_axial(vol, (args.target, args.target))
    clip = (0.5, 99.5) if args.clip_percentiles else None
    save_volume(args.out, intensity_match(vol, clip))


def cmd_patchify(args):
    image = load_volume(args.image)
    mask = load_mask(args.mask)
    pairs = extract_pairs(image, mask, TilingConfig(args.patch, args.stride), Path(args.image).stem)
    PatchSet.from_pairs(pairs).save(args.out)
    print(f"{len(pairs)} patch pairs")


def cmd_augment(args):
    src = PatchSet.load(args.inp)
    if args.translation is None:
        cfg = AugmentConfig.for_patch_size(src.patch_size, level=args.level, seed=args.seed, include_original=not args.replace)
    else:
        cfg = AugmentConfig(level=args.level, seed=args.seed, include_original=not args.replace, translation_range=(-args.translation, args.translation))
    data = augment_dataset(list(zip(src.images, src.masks)), cfg, jobs=args.jobs)
    # copies inherit the provenance of the patch they came from
    reps = ([src.provenance] if cfg.include_original else []) + [src.provenance.repeat(cfg.level, axis=0)]
    out = PatchSet(
        np.stack([img for img, _ in data]).astype(np.float32),
        np.stack([msk for _, msk in data]).astype(np.uint8),
        np.concatenate(reps, axis=0),
    )
    out.save(args.out)
    print(f"{len(out)} patch pairs")


def cmd_train(args):
    net_fields = _read_json(args.net_config)
    data = PatchSet.load(args.data)
    net_fields.setdefault("patch_size", data.patch_size)
    net = ResidualUNet(NetworkConfig(**net_fields))
    cfg = TrainConfig(args.batch_size, AdamConfig(lr=args.lr), args.dice_eps, args.seed)
    history = train(net, (data.images, data.masks), args.epochs, cfg)
    save_checkpoint(args.out, net)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_dice"])
            writer.writerows((i, f"{d:.6f}") for i, d in enumerate(history, start=1))
    if history:
        print(f"final training dice {history[-1]:.3f}")


def cmd_predict(args):
    net = load_checkpoint(args.model)
    p = net.config.patch_size
    tiling = TilingConfig(p, args.stride or p // 2)
    mask = predict_volume(net, load_volume(args.image), tiling, args.threshold)
    save_volume(args.out, mask)


def cmd_evaluate(args):
    print(f"{dice_score(load_mask(args.pred), load_mask(args.truth)):.3f}")


def cmd_experiment(args):
    cfg = exp.ExperimentConfig.load(args.config) if args.config else exp.ExperimentConfig()
    out = Path(args.out or cfg.output_dir or "experiment_out")
    records = exp.run_grid(cfg, jobs=args.jobs, out_dir=out)
    failed = [r for r in records if not r.ok]
    if failed:
        raise exp.IncompleteGrid(f"{len(failed)} cell(s) failed, first: {failed[0].cell_id} ({failed[0].error})")
    exp.emit_tables(records, out)
    exp.emit_curves(records, out)
    print(exp.format_table(records, lambda r: r.validation_dice), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xaugseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate phantom volume/mask NIfTI pairs")
    p.add_argument("--config", help="PhantomConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--start", type=int, default=0, help="first volume index")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="resample axial slices and intensity-match to [0, 1]")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, default=256)
    p.add_argument("--clip-percentiles", action="store_true", help="anchor on the 0.5/99.5 percentiles")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("patchify", help="tile a volume and its mask into patch pairs")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--patch", type=int, default=128)
    p.add_argument("--stride", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_patchify)

    p = sub.add_parser("augment", help="add N random affine copies of every patch pair")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--translation", type=float, help="max |shift| in px (default: 50/128 of the patch size)")
    p.add_argument("--replace", action="store_true", help="drop the unaugmented originals")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a residual U-Net on a patch file")
    p.add_argument("--data", required=True)
    p.add_argument("--net-config", help="NetworkConfig JSON")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dice-eps", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="CSV of per-epoch training Dice")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment a volume with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--stride", type=int, help="tiling stride (default: half the patch size)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="print the Dice score of two masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the size x level grid and write tables and curves")
    p.add_argument("--config", help="ExperimentConfig JSON (defaults to the desk-scale grid)")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (PipelineError, ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
