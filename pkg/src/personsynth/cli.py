"""Command-line entry point: ``personsynth <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime abort
(non-finite loss, I/O failure, unreadable inputs).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import data as D
from .config import ConfigError, load_config

EXIT_USAGE = 2
EXIT_RUNTIME = 3

log = logging.getLogger("personsynth")


class UsageError(Exception):
    pass


def _path(args, p):
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _require_files(*paths):
    missing = [str(p) for p in paths if p is not None and not Path(p).exists()]
    if missing:
        raise UsageError(f"missing input file(s): {', '.join(missing)}")


# ----------------------------------------------------------------------------


def cmd_make_fixtures(args):
    out = _path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i in range(args.n):
        sample = D.make_synthetic_pair(args.seed * 100_003 + i, args.size, args.size)
        pairs.append(D.save_pair(out, i, sample))
    D.write_pair_list(out / "pairs.txt", pairs)
    print(f"wrote {args.n} pairs to {out}")


def _train_config(args):
    base = {"run.phase": args.phase}
    if args.steps is not None:
        base["run.steps"] = args.steps
    if args.seed is not None:
        base["run.seed"] = args.seed
    if args.data is not None:
        base["data.source"] = "dir"
        base["data.root"] = args.data
    if args.run_dir is not None:
        base["run.run_dir"] = args.run_dir
    cfg = load_config(_path(args, args.config) if args.config else None, args.set, base)
    # every path is relative to --workdir
    if cfg.data.root:
        cfg.data.root = str(_path(args, cfg.data.root))
    cfg.run.run_dir = str(_path(args, cfg.run.run_dir or f"runs/{cfg.run.phase}"))
    for key in ("ckpt_parsing", "ckpt_image", "init", "resume"):
        if getattr(cfg.run, key):
            setattr(cfg.run, key, str(_path(args, getattr(cfg.run, key))))
    if cfg.run.extractor != "stub":
        cfg.run.extractor = str(_path(args, cfg.run.extractor))
    return cfg


def cmd_train(args):
    from .training import TrainingAborted, Trainer, load_dataset

    cfg = _train_config(args)
    if cfg.data.source == "dir" and not (Path(cfg.data.root) / cfg.data.pair_list).exists():
        raise UsageError(f"data.root: pair list {Path(cfg.data.root) / cfg.data.pair_list} not found")
    for key in ("ckpt_parsing", "ckpt_image", "init", "resume"):
        p = getattr(cfg.run, key)
        if p and not (Path(p) / "manifest.json").exists():
            raise UsageError(f"run.{key}: no checkpoint at {p}")
    if cfg.run.extractor != "stub" and not Path(cfg.run.extractor).exists():
        raise UsageError(f"run.extractor: weights file {cfg.run.extractor} not found")
    print(yaml.safe_dump({"resolved_config": cfg.to_dict()}, sort_keys=False), end="")
    dataset = load_dataset(cfg)
    trainer = Trainer(cfg, dataset)
    try:
        trainer.run()
    except TrainingAborted as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    path = trainer.save()
    print(f"checkpoint: {path}")
    return 0


def _synth(args):
    from .pipeline import Synthesizer

    ckpt_p = _path(args, args.ckpt)
    ckpt_i = _path(args, args.ckpt_image)
    _require_files(ckpt_p / "manifest.json", ckpt_i / "manifest.json" if ckpt_i else None)
    return Synthesizer.from_checkpoints(ckpt_p, ckpt_i)


def _load_source(args):
    paths = [_path(args, p) for p in (args.source_image, args.source_keypoints, args.source_parsing)]
    tk = _path(args, args.target_keypoints)
    _require_files(*paths, tk)
    img, kps, par = D.load_sample(*paths)
    kt = D.load_keypoints(tk)
    kt.check_bounds(*img.shape[-2:])
    return img, kps, par, kt


def _load_reference(args, image, parsing):
    ip, pp = _path(args, image), _path(args, parsing)
    _require_files(ip, pp)
    img, par = D.load_image(ip), D.load_parsing(pp)
    if tuple(par.shape) != tuple(img.shape[-2:]):
        raise D.ShapeMismatchError(f"{pp}: parsing does not match image size")
    return img, par


def _write_outputs(args, img, parsing=None):
    out = _path(args, args.out_image)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.save_image(out, img)
    if parsing is not None and getattr(args, "out_parsing", None):
        op = _path(args, args.out_parsing)
        op.parent.mkdir(parents=True, exist_ok=True)
        D.save_parsing(op, parsing)


def cmd_transfer_pose(args):
    if args.pairs:
        return _transfer_pose_batch(args)
    if not (args.source_image and args.source_parsing and args.source_keypoints and args.target_keypoints
            and args.out_image):
        raise UsageError("transfer-pose needs --source-image/--source-parsing/--source-keypoints/"
                         "--target-keypoints/--out-image, or --pairs with --data and --out-dir")
    src = _load_source(args)
    syn = _synth(args)
    img, S_g = syn.transfer_pose(src[0], src[2], src[1], src[3])
    _write_outputs(args, img, S_g)
    return 0


def _transfer_pose_batch(args):
    if not (args.data and args.out_dir):
        raise UsageError("--pairs needs --data and --out-dir")
    root = _path(args, args.data)
    pairs_path = _path(args, args.pairs)
    _require_files(pairs_path)
    pairs = D.read_pair_list(pairs_path)
    for a, b in pairs:
        _require_files(*D.sample_paths(root, a), D.sample_paths(root, b)[1])
    syn = _synth(args)
    out = _path(args, args.out_dir)
    (out / "parsing").mkdir(parents=True, exist_ok=True)
    for a, b in pairs:
        img, kps, par = D.load_sample(*D.sample_paths(root, a))
        kt = D.load_keypoints(D.sample_paths(root, b)[1])
        I_g, S_g = syn.transfer_pose(img, par, kps, kt)
        D.save_image(out / f"{b}.png", I_g)
        D.save_parsing(out / "parsing" / f"{b}.png", S_g)
    print(f"generated {len(pairs)} images in {out}")
    return 0


def _region(name):
    try:
        return D.region_index(name.strip())
    except D.DataError:
        raise UsageError(f"unknown region {name.strip()!r}; choose from {', '.join(D.REGION_NAMES)}") from None


def _regions(text):
    if not text:
        return []
    return [_region(r) for r in text.split(",") if r.strip()]


def cmd_transfer_texture(args):
    regions = _regions(args.regions)
    src = _load_source(args)
    ref = _load_reference(args, args.ref_image, args.ref_parsing)
    syn = _synth(args)
    img, S_g = syn.transfer_texture(src[0], src[2], src[1], src[3], ref[0], ref[1], regions)
    _write_outputs(args, img, S_g)
    return 0


def cmd_interpolate(args):
    region = _region(args.region)
    try:
        alphas = [float(a) for a in args.alphas.split(",")]
    except ValueError:
        raise UsageError(f"--alphas must be comma-separated numbers, got {args.alphas!r}") from None
    if any(not 0 <= a <= 1 for a in alphas):
        raise UsageError("--alphas must lie in [0, 1]")
    src = _load_source(args)
    ref_a = _load_reference(args, args.ref_a_image, args.ref_a_parsing)
    ref_b = _load_reference(args, args.ref_b_image, args.ref_b_parsing)
    syn = _synth(args)
    outs, _ = syn.interpolate(src[0], src[2], src[1], src[3], ref_a, ref_b, region, alphas)
    out_dir = _path(args, args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for a, img in zip(alphas, outs):
        D.save_image(out_dir / f"alpha_{a:.3f}.png", img)
    print(f"wrote {len(outs)} images to {out_dir}")
    return 0


def cmd_edit_region(args):
    from .editing import load_edit_script

    src = _load_source(args)
    script_path = _path(args, args.script)
    _require_files(script_path)
    script = load_edit_script(script_path)
    S_g = None
    if args.parsing:
        pp = _path(args, args.parsing)
        _require_files(pp)
        S_g = D.load_parsing(pp)
    syn = _synth(args)
    img, S_g = syn.edit(src[0], src[2], src[1], src[3], script, S_g)
    _write_outputs(args, img, S_g)
    return 0


def cmd_eval(args):
    import numpy as np

    from .features import build_extractor
    from .metrics import fid, pooled_embedding, psnr

    pairs_path = _path(args, args.pairs)
    _require_files(pairs_path)
    real_dir, gen_dir = _path(args, args.real_dir), _path(args, args.generated_dir)
    stems = sorted({b for _, b in D.read_pair_list(pairs_path)})
    missing = [s for s in stems if not (gen_dir / f"{s}.png").exists() or not (real_dir / f"{s}.png").exists()]
    if missing:
        raise UsageError(f"missing counterpart image(s) for: {', '.join(missing)}")
    extractor = args.extractor if args.extractor == "stub" else str(_path(args, args.extractor))
    fx = build_extractor(extractor, args.extractor_seed)
    import torch

    reals = torch.stack([D.load_image(real_dir / f"{s}.png") for s in stems])
    fakes = torch.stack([D.load_image(gen_dir / f"{s}.png") for s in stems])
    scores = [psnr(f, r) for f, r in zip(fakes, reals)]
    report = {
        "psnr_mean": float(np.mean(scores)),
        "fid": fid(pooled_embedding(fx, reals), pooled_embedding(fx, fakes)),
        "n_pairs": len(stems),
        "embedder_id": f"{fx.name}:conv3_1-avgpool",
    }
    text = json.dumps(report, indent=2)
    if args.out:
        out = _path(args, args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    print(text)
    return 0


# ----------------------------------------------------------------------------


def _add_source_args(p):
    p.add_argument("--ckpt", required=True, help="joint (or parsing) checkpoint directory")
    p.add_argument("--ckpt-image", help="separate image-generator checkpoint")
    p.add_argument("--source-image")
    p.add_argument("--source-parsing")
    p.add_argument("--source-keypoints")
    p.add_argument("--target-keypoints")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="personsynth", description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default=".", help="base directory for every relative path")
    ap.add_argument("-v", "--verbose", action="store_true")
    # accept the global options after the subcommand too
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("make-fixtures", help="write synthetic paired samples")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", default="fixtures")
    p.set_defaults(func=cmd_make_fixtures)

    p = add("train", help="run one training phase")
    p.add_argument("--phase", choices=("parsing", "image", "joint"), required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. optim.lr_g=1e-3 (repeatable)")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="fixture directory (sets data.source=dir, data.root)")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_train)

    p = add("transfer-pose", help="re-pose a source person")
    _add_source_args(p)
    p.add_argument("--out-image")
    p.add_argument("--out-parsing")
    p.add_argument("--pairs", help="batch mode: pair list; writes <out-dir>/<target>.png")
    p.add_argument("--data")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_transfer_pose)

    p = add("transfer-texture", help="copy region styles from a reference image")
    _add_source_args(p)
    p.add_argument("--ref-image", required=True)
    p.add_argument("--ref-parsing", required=True)
    p.add_argument("--regions", default="", help="comma-separated region names")
    p.add_argument("--out-image", required=True)
    p.add_argument("--out-parsing")
    p.set_defaults(func=cmd_transfer_texture)

    p = add("interpolate", help="blend one region's style between two references")
    _add_source_args(p)
    p.add_argument("--ref-a-image", required=True)
    p.add_argument("--ref-a-parsing", required=True)
    p.add_argument("--ref-b-image", required=True)
    p.add_argument("--ref-b-parsing", required=True)
    p.add_argument("--region", required=True)
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = add("edit-region", help="apply an edit script and render")
    _add_source_args(p)
    p.add_argument("--script", required=True)
    p.add_argument("--parsing", help="use this parsing map instead of the generated one")
    p.add_argument("--out-image", required=True)
    p.add_argument("--out-parsing")
    p.set_defaults(func=cmd_edit_region)

    p = add("eval", help="PSNR and FID report")
    p.add_argument("--pairs", required=True)
    p.add_argument("--real-dir", required=True, help="directory of ground-truth <target>.png")
    p.add_argument("--generated-dir", required=True)
    p.add_argument("--extractor", default="stub")
    p.add_argument("--extractor-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args) or 0
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (D.DataError, OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
