"""Command-line front-end.

Subcommands: phantom, degrade, split, train, sr, eval, compare. Every
command exits 0 on success and prints a single-line diagnostic to
stderr with a nonzero exit code on failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .kspace import DegradeSpec, degrade
from .metrics import format_report, write_report
from .patches import PatchSpec
from .training import (
    BASELINE_METHODS,
    TrainConfig,
    compare_methods,
    desk_config,
    evaluate_model,
    format_comparison,
    infer_volume,
    load_manifest,
    paper_config,
    save_manifest,
    split_dataset,
    train,
    DatasetManifest,
    ManifestEntry,
)
from .volume import PhantomSpec, load_volume, make_phantom, save_volume


def _parse_ints(text, n, what):
    parts = tuple(int(t) for t in text.split(","))
    if len(parts) != n:
        raise ValueError(f"{what} needs {n} comma-separated integers, got {text!r}")
    return parts


def _cmd_phantom(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dims = _parse_ints(args.dims, 3, "--dims")
    entries = []
    for i in range(args.count):
        spec = PhantomSpec(dims=dims, seed=args.seed + i)
        name = f"phantom_{i:03d}"
        save_volume(make_phantom(spec), out_dir / name)
        entries.append(ManifestEntry(id=name, path=f"{name}.vol", split=""))
    save_manifest(DatasetManifest(entries=entries), out_dir / "manifest.csv")
    print(f"wrote {args.count} phantoms and manifest.csv to {out_dir}")


def _cmd_degrade(args):
    factors = _parse_ints(args.factors, 3, "--factors")
    axes = tuple(int(a) for a in args.axes.split(",")) if args.axes else None
    spec = DegradeSpec(factors=factors, axes=axes)
    vol = load_volume(args.input)
    save_volume(degrade(vol, spec), args.output)
    print(f"degraded {args.input} -> {args.output} (factors {factors})")


def _cmd_split(args):
    manifest = load_manifest(args.manifest)
    ratios = tuple(float(r) for r in args.ratios.split(","))
    ids = manifest.ids()
    paths = {e.id: e.path for e in manifest.entries}
    new = split_dataset(ids, ratios=ratios, seed=args.seed, paths=paths)
    save_manifest(new, args.manifest)
    counts = {s: len(new.select(s)) for s in ("train", "validation", "evaluation", "test")}
    print(f"assigned splits {counts} in {args.manifest}")


_TUPLE_KEYS = {"factors", "axes"}


def parse_train_config(path) -> TrainConfig:
    """Read a `key=value` config file into a TrainConfig.

    An optional `preset=desk|paper` line selects a base configuration;
    any other line overrides one TrainConfig field.
    """
    text = Path(path).read_text(encoding="utf-8")
    overrides = {}
    preset = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "preset":
            preset = value
            continue
        overrides[key] = value

    field_types = {f.name: f.type for f in fields(TrainConfig)}
    parsed = {}
    for key, value in overrides.items():
        if key not in field_types:
            raise ValueError(f"{path}: unknown config key {key!r}")
        if key in _TUPLE_KEYS:
            parsed[key] = tuple(int(t) for t in value.split(",")) if value else None
        elif key == "stride":
            parsed[key] = None if value.lower() in ("", "none") else int(value)
        elif key in ("lr",):
            parsed[key] = float(value)
        elif key in ("arch", "manifest", "out_dir"):
            parsed[key] = value
        else:
            parsed[key] = int(value)
    if preset is None:
        return TrainConfig(**parsed)
    if preset == "desk":
        return desk_config(**parsed)
    if preset == "paper":
        return paper_config(**parsed)
    raise ValueError(f"{path}: unknown preset {preset!r}")


def _cmd_train(args):
    cfg = parse_train_config(args.config)
    result = train(cfg)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    print(f"best validation loss: {result.best_val_loss:.6g}")


def _patch_from_args(args) -> PatchSpec:
    return PatchSpec(cube_size=args.cube, stride=args.stride)


def _cmd_sr(args):
    vol = load_volume(args.input)
    out = infer_volume(args.checkpoint, vol, _patch_from_args(args))
    save_volume(out, args.output)
    print(f"super-resolved {args.input} -> {args.output}")


def _degrade_spec_from_args(args) -> DegradeSpec:
    factors = _parse_ints(args.factors, 3, "--factors")
    axes = tuple(int(a) for a in args.axes.split(",")) if args.axes else None
    return DegradeSpec(factors=factors, axes=axes)


def _cmd_eval(args):
    report = evaluate_model(args.method, args.manifest, args.split,
                            _degrade_spec_from_args(args), _patch_from_args(args))
    if args.report:
        write_report(report, args.report)
        print(f"wrote report to {args.report}")
    else:
        sys.stdout.write(format_report(report))


def _cmd_compare(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ValueError("--methods must list at least one method")
    reports = compare_methods(methods, args.manifest, args.split,
                              _degrade_spec_from_args(args), _patch_from_args(args))
    text = format_comparison(reports)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
        print(f"wrote comparison to {args.report}")
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxelsr",
                                     description="Volumetric super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic phantom volumes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--dims", default="64,64,64")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("degrade", help="k-space truncation of one volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--factors", default="2,2,1")
    p.add_argument("--axes", default=None)
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("split", help="assign train/validation/evaluation/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="7,1,1,1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train a model from a key=value config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sr", help="super-resolve one volume with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--cube", type=int, default=64)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=_cmd_sr)

    p = sub.add_parser("eval", help="evaluate one method on a manifest split")
    p.add_argument("--method", required=True,
                   help=f"one of {'|'.join(BASELINE_METHODS)} or a checkpoint path")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", default=None, help="CSV output path (stdout if omitted)")
    p.add_argument("--factors", default="2,2,1")
    p.add_argument("--axes", default=None)
    p.add_argument("--cube", type=int, default=64)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare", help="evaluate several methods side by side")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", required=True, help="comma-separated method list")
    p.add_argument("--split", default="test")
    p.add_argument("--report", default=None)
    p.add_argument("--factors", default="2,2,1")
    p.add_argument("--axes", default=None)
    p.add_argument("--cube", type=int, default=64)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
