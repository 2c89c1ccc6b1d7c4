"""Command-line entry point: phantom / train / segment / evaluate / ablate.

Configuration comes from a strict YAML file plus STX_-prefixed environment
overrides (STX_SECTION__FIELD=value) plus the flags below; every command
writes its fully resolved config next to its outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import phantom, pipeline
from .common import Domain, dataclass_from_dict
from .config import ConfigError, load_config


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override config.seed")
    parser.add_argument("--out", type=Path, default=None, help="override config.out_dir")
    parser.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="override config.deterministic",
    )


def _load(args: argparse.Namespace):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.deterministic is not None:
        overrides["deterministic"] = args.deterministic
    return load_config(args.config, overrides=overrides)


def cmd_phantom(args: argparse.Namespace) -> int:
    spec = phantom.PhantomSpec()
    if args.spec is not None:
        payload = yaml.safe_load(Path(args.spec).read_text()) or {}
        spec = dataclass_from_dict(phantom.PhantomSpec, payload, "phantom_spec")
    manifest = phantom.generate_dataset(
        spec,
        n_patients=args.patients,
        slices_per_patient=args.slices,
        domain=Domain(args.domain),
        seed=args.seed,
        out_dir=args.out,
        overwrite=args.overwrite,
    )
    print(f"wrote {len(manifest.entries)} samples to {manifest.path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out_dir = Path(cfg.out_dir) / args.mode
    result = pipeline.run_mode(cfg, args.mode, out_dir)
    print(f"{args.mode}: checkpoint at {result.checkpoint_path}")
    print(f"target mask reads during training: {result.target_mask_reads}")
    return 0


def cmd_segment(args: argparse.Namespace) -> int:
    manifest_path = pipeline.run_segment(args.checkpoint, args.input, args.out)
    print(f"predictions manifest: {manifest_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    spacing = tuple(float(v) for v in args.spacing.split(",")) if "," in args.spacing else float(args.spacing)
    result = pipeline.run_evaluate(
        args.pred, args.gt, args.out, spacing=spacing, per_slice_distances=args.per_slice_distances
    )
    print((Path(args.out) / "summary.txt").read_text())
    print(f"per-patient metrics: {Path(args.out) / 'metrics.csv'}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out_dir = Path(cfg.out_dir)
    result = pipeline.run_ablation(cfg, out_dir)
    print(f"comparison table: {result.comparison_csv}")
    for mode, row in result.table.items():
        cells = ", ".join(f"{k}={v:.3f}" for k, v in row.items())
        print(f"  {mode}: {cells}")
    print(f"target mask reads during training (all runs): {sum(result.isolation.values())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stx", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_phantom = sub.add_parser("phantom", help="synthetic dataset generation")
    phantom_sub = p_phantom.add_subparsers(dest="phantom_command", required=True)
    p_gen = phantom_sub.add_parser("generate", help="write a phantom dataset")
    p_gen.add_argument("--spec", type=Path, default=None, help="YAML PhantomSpec (defaults otherwise)")
    p_gen.add_argument("--domain", choices=[d.value for d in Domain], required=True)
    p_gen.add_argument("--patients", type=int, required=True)
    p_gen.add_argument("--slices", type=int, required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", type=Path, required=True)
    p_gen.add_argument("--overwrite", action="store_true")
    p_gen.set_defaults(func=cmd_phantom)

    p_train = sub.add_parser("train", help="run one training mode")
    p_train.add_argument("--mode", choices=pipeline.MODES, required=True)
    _common_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_seg = sub.add_parser("segment", help="apply a trained segmentor to a manifest")
    p_seg.add_argument("--checkpoint", type=Path, required=True)
    p_seg.add_argument("--input", type=Path, required=True, help="manifest of images to segment")
    p_seg.add_argument("--out", type=Path, required=True)
    p_seg.set_defaults(func=cmd_segment)

    p_eval = sub.add_parser("evaluate", help="compare predictions against ground truth")
    p_eval.add_argument("--pred", type=Path, required=True, help="predictions manifest")
    p_eval.add_argument("--gt", type=Path, required=True, help="ground-truth manifest")
    p_eval.add_argument("--out", type=Path, required=True)
    p_eval.add_argument("--spacing", default="1.0", help="isotropic value or slice,row,col")
    p_eval.add_argument("--per-slice-distances", action="store_true", help="2-D per-slice distance averaging")
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="run unet / noshape / shapetransfer and compare")
    _common_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
