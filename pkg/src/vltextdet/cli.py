"""Command-line entry points.

Subcommands: train, detect, evaluate, ablate-depth, ablate-text, synth-data,
serve.  Configuration comes from an optional preset, an optional YAML/JSON
file, and repeated --set KEY=VALUE overrides, applied in that order.  On
failure a one-line JSON error summary goes to stderr and the exit code is
nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .config import ConfigError, TrainConfig
from .data.datasets import DatasetManifest
from .data.synth import SynthSpec, write_synthetic_dataset
from .training import (ablate_depth, ablate_text, fit, run_detect,
                       run_evaluate)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=("desk", "paper"),
                   help="named configuration to start from")
    p.add_argument("--config", type=Path,
                   help="YAML or JSON config file (overrides the preset)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="override one config field (repeatable)")


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    if args.config is not None:
        config = TrainConfig.load(args.config)
    elif args.preset is not None:
        config = TrainConfig.preset(args.preset)
    else:
        config = TrainConfig()
    for item in args.overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
        value = yaml.safe_load(raw)
        if isinstance(value, list):
            value = tuple(value)
        config = config.replace(**{key: value})
    return config


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


# ---- handlers ------------------------------------------------------------

def _cmd_train(args) -> int:
    config = resolve_config(args)
    manifest = DatasetManifest.load(args.manifest, args.data_root)
    samples = manifest.load_all()
    result = fit(config, samples, out_dir=args.out, max_steps=args.max_steps,
                 target_f1=args.target_f1, eval_every=args.eval_every,
                 log=print if not args.quiet else None)
    summary = {"checkpoint": str(result.checkpoint_path),
               "steps": result.steps,
               "final_loss": result.history["loss"][-1][1]
               if result.history["loss"] else None,
               "final_f1": result.final_f1}
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_detect(args) -> int:
    summary = run_detect(args.checkpoint, args.images, args.out,
                         prompt_id=args.prompt, threshold=args.threshold,
                         overlay=args.overlay)
    print(json.dumps(summary, indent=2))
    if summary["errors"]:
        print(json.dumps({"error": "DetectErrors",
                          "message": f"{len(summary['errors'])} image(s) "
                          "could not be processed",
                          "details": summary["errors"]}), file=sys.stderr)
        return 3
    return 0


def _cmd_evaluate(args) -> int:
    manifest = DatasetManifest.load(args.manifest, args.data_root)
    report = run_evaluate(args.dets, manifest, thresholds=args.thresholds,
                          allow_missing=args.allow_missing)
    print(report.format_table())
    if args.out is not None:
        json_path, txt_path = report.save(args.out)
        print(f"wrote {json_path} and {txt_path}")
    return 0


def _cmd_ablate_depth(args) -> int:
    config = resolve_config(args)
    manifest = DatasetManifest.load(args.manifest, args.data_root)
    samples = manifest.load_all()
    report = ablate_depth(config, samples, layers=args.layers,
                          out_dir=args.out, max_steps=args.max_steps,
                          log=print if not args.quiet else None)
    print(report.format_table())
    return 0


def _cmd_ablate_text(args) -> int:
    config = resolve_config(args)
    manifest = DatasetManifest.load(args.manifest, args.data_root)
    samples = manifest.load_all()
    prompts = args.prompts.split(",") if args.prompts else None
    report = ablate_text(config, samples, out_dir=args.out, prompts=prompts,
                         max_steps=args.max_steps,
                         log=print if not args.quiet else None)
    print(report.format_table())
    return 0


def _cmd_synth_data(args) -> int:
    spec = SynthSpec(image_size=args.image_size,
                     min_instances=args.min_instances,
                     max_instances=args.max_instances,
                     shape_family=args.family,
                     ignore_probability=args.ignore_prob)
    manifest_path = write_synthetic_dataset(args.out, args.count, spec,
                                            base_seed=args.seed,
                                            split=args.split)
    print(json.dumps({"manifest": str(manifest_path), "count": args.count}))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    app = create_app(checkpoint=args.checkpoint)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vltextdet",
        description="Prompt-conditioned scene-text detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a detector on a dataset manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True,
                   help="directory for checkpoints")
    p.add_argument("--data-root", type=Path, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--target-f1", type=float, default=None,
                   help="stop once train-set F1@50 reaches this value")
    p.add_argument("--eval-every", type=int, default=None,
                   help="steps between train-set evaluations")
    p.add_argument("--quiet", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="run a checkpoint over images")
    p.add_argument("images", nargs="+", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--prompt", default=None, help="prompt id, e.g. P1")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--overlay", action="store_true",
                   help="also write images with detection outlines")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("evaluate", help="score detection files against a manifest")
    p.add_argument("--dets", type=Path, required=True,
                   help="directory of per-image detection files")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--data-root", type=Path, default=None)
    p.add_argument("--thresholds", type=_parse_floats,
                   default=(0.5, 0.6, 0.7, 0.8, 0.9))
    p.add_argument("--allow-missing", action="store_true",
                   help="score despite unmatched image ids")
    p.add_argument("--out", type=Path, default=None,
                   help="report path prefix (.json/.txt are appended)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate-depth", help="train one model per decoder depth")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data-root", type=Path, default=None)
    p.add_argument("--layers", type=_parse_ints, default=(2, 3, 4, 5))
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=_cmd_ablate_depth)

    p = sub.add_parser("ablate-text", help="compare prompt conditioning on/off")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data-root", type=Path, default=None)
    p.add_argument("--prompts", default=None,
                   help="comma-separated prompt ids (default: all)")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=_cmd_ablate_text)

    p = sub.add_parser("synth-data", help="write a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--family", choices=("quad", "curved", "mixed"),
                   default="quad")
    p.add_argument("--min-instances", type=int, default=1)
    p.add_argument("--max-instances", type=int, default=3)
    p.add_argument("--ignore-prob", type=float, default=0.0)
    p.add_argument("--split", default="train")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("serve", help="start the HTTP detection service")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
