"""Batch command line: ``cbwkit gen-data | train | eval | render-depth``.

Exit status: 0 on success, 2 on invalid input or configuration, 3 on numeric failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config, parse_config_text
from .evaluate import evaluate, render_depth_images
from .losses import PRESETS
from .metrics import format_table, key_value_lines
from .networks import load_networks
from .synth import Dataset, DatasetSpec, SceneSpec, generate_dataset
from .train import NumericFailure, train

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbwkit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    _common(g)
    g.add_argument("--scenes", type=int, help="scene count (default 8)")
    g.add_argument("--frames", type=int, help="frames per scene (default 9)")
    g.add_argument("--snippet", type=int, help="snippet length (default 5)")
    g.add_argument("--moving-every", type=int, help="every k-th scene has a moving object; 0 disables (default 2)")
    g.add_argument("--height", type=int, help="image height (default 64)")
    g.add_argument("--width", type=int, help="image width (default 128)")

    t = sub.add_parser("train", help="train both networks")
    _common(t)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--iterations", type=int)
    t.add_argument("--log", type=Path, help="loss log path (default: <out>.log)")
    t.add_argument("--deterministic", action="store_true", help="serial data loading for byte-reproducible runs")
    t.add_argument("--moving-only", action="store_true", help="train on moving-object snippets only")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")

    e = sub.add_parser("eval", help="depth metrics and ATE of a checkpoint")
    e.add_argument("--ckpt", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--cap", type=float, default=80.0)
    e.add_argument("--moving-only", action="store_true")
    e.add_argument("--out", type=Path, help="also write metrics.txt and depth/error images here")
    e.add_argument("--images", type=int, default=0, help="number of frames to render into --out")

    r = sub.add_parser("render-depth", help="write inverse-depth and error images")
    r.add_argument("--ckpt", type=Path, required=True)
    r.add_argument("--data", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--limit", type=int)
    return ap


def _dataset(path: Path, moving_only: bool = False) -> Dataset:
    if not (path / "manifest.txt").is_file():
        raise ConfigError(f"{path} is not a dataset directory (no manifest.txt)")
    ds = Dataset(path, moving_only=moving_only)
    if len(ds) == 0:
        raise ConfigError(f"{path}: no snippets selected")
    return ds


GEN_KEYS = {"scenes": 8, "frames": 9, "snippet": 5, "moving_every": 2, "height": 64, "width": 128, "seed": 0}


def cmd_gen_data(args) -> int:
    vals = dict(GEN_KEYS)
    if args.config is not None:
        for k, v in parse_config_text(args.config.read_text()).items():
            if k not in GEN_KEYS:
                raise ConfigError(f"unknown gen-data key {k!r}")
            try:
                vals[k] = int(v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
    for k in GEN_KEYS:
        if getattr(args, k, None) is not None:
            vals[k] = getattr(args, k)
    scene = SceneSpec(height=vals["height"], width=vals["width"])
    spec = DatasetSpec(vals["scenes"], vals["frames"], vals["snippet"], vals["moving_every"], scene)
    refs = generate_dataset(args.out, spec, seed=vals["seed"])
    print(f"wrote {len(refs)} snippets from {spec.n_scenes} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in ("seed", "preset", "iterations"):
        if getattr(args, key) is not None:
            overrides[key] = str(getattr(args, key))
    if args.deterministic:
        overrides["deterministic"] = "true"
    if args.moving_only:
        overrides["moving_only"] = "true"
    cfg = load_config(args.config, overrides)
    ds = _dataset(args.data, cfg.moving_only)
    log = args.log or Path(str(args.out) + ".log")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    Path(str(args.out) + ".cfg").write_text(cfg.to_text())
    res = train(cfg, ds, args.out, log_path=log)
    last = res.history[-1]["total"] if res.history else float("nan")
    print(f"trained {res.iterations} iterations; final total={last:.6g}; checkpoint {args.out}; log {log}")
    return EXIT_OK


def cmd_eval(args) -> int:
    depth, camera = load_networks(args.ckpt)
    ds = _dataset(args.data, args.moving_only)
    rep = evaluate(depth, camera, ds, cap=args.cap)
    lines = [format_table({args.ckpt.name: rep.depth}), ""]
    lines.append(f"ATE {rep.ate_mean:.4f} +/- {rep.ate_std:.4f} over {rep.snippets} snippets (identity motion {rep.identity_ate_mean:.4f})")
    lines += key_value_lines("", rep.key_values())
    text = "\n".join(lines)
    print(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "metrics.txt").write_text(text + "\n")
        if args.images:
            render_depth_images(depth, ds, args.out, limit=args.images)
    return EXIT_OK


def cmd_render_depth(args) -> int:
    depth, _ = load_networks(args.ckpt)
    written = render_depth_images(depth, _dataset(args.data), args.out, limit=args.limit)
    print(f"wrote {len(written)} images to {args.out}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "render-depth": cmd_render_depth}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "config", None) is not None and not args.config.is_file():
        print(f"cbwkit: config file {args.config} not found", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except NumericFailure as exc:
        print(f"cbwkit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"cbwkit: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
