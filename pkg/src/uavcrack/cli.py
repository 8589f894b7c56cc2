"""Command line entry point: synth-wall, plan, stitch, detect, pipeline.

Stage flags are generated from the config dataclasses, one flag per key
(``--crack.k 0.5`` sets ``crack.k``). Flags override values from ``--config``.
Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from . import __version__
from .config import PipelineConfig, config_keys, set_key
from .errors import ConfigError, InspectionError, InvalidParameter, StageError
from .pipeline import run_detect, run_pipeline, run_plan, run_stitch
from .synthwall import SynthWallSpec, save_synth_wall, synth_wall

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("uavcrack")


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _flag(block: str, key: str) -> str:
    return f"--{block}.{key}" if block else f"--{key}"


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    g = p.add_argument_group("config keys")
    for block, key, typ in config_keys():
        g.add_argument(
            _flag(block, key),
            dest=f"cfg:{block}:{key}",
            type=_parse_bool if typ is bool else typ,
            default=None,
            metavar=typ.__name__.upper(),
        )


def _synth_fields():
    for f in fields(SynthWallSpec):
        if f.type in ("int", "float", "bool"):
            yield f.name, {"int": int, "float": float, "bool": _parse_bool}[f.type]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uavcrack", description="UAV surface inspection: planning, stitching and crack detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("synth-wall", help="render the synthetic panel wall, its tiles and ground truth")
    sw.add_argument("--out", required=True, help="output directory")
    for name, typ in _synth_fields():
        sw.add_argument(f"--{name.replace('_', '-')}", dest=f"spec:{name}", type=typ, default=None, metavar=name.upper())

    helps = {
        "plan": "point cloud -> surfaces -> waypoint JSON",
        "stitch": "stitch a directory of images into a mosaic",
        "detect": "pattern removal and crack detection on one image",
        "pipeline": "run the full flowchart",
    }
    for name, text in helps.items():
        _add_config_flags(sub.add_parser(name, help=text))
    return parser


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            _, block, key = dest.split(":")
            set_key(cfg, block, key, value)
    return cfg.validate()


def _cmd_synth(args) -> int:
    overrides = {dest.split(":", 1)[1]: v for dest, v in vars(args).items() if dest.startswith("spec:") and v is not None}
    spec = SynthWallSpec(**overrides)
    arts = save_synth_wall(synth_wall(spec), args.out)
    print(json.dumps(arts, indent=2))
    return EXIT_OK


RUNNERS = {"plan": run_plan, "stitch": run_stitch, "detect": run_detect, "pipeline": run_pipeline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "synth-wall":
            return _cmd_synth(args)
        cfg = config_from_args(args)
        if args.dump_config:
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
        if args.command == "plan" and not cfg.cloud:
            raise ConfigError("plan needs --cloud")
        if args.command != "plan" and not cfg.input:
            raise ConfigError(f"{args.command} needs --input")
        result = RUNNERS[args.command](cfg)
    except (ConfigError, InvalidParameter) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except InspectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(json.dumps(result, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
