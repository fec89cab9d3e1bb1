"""Command-line entry point.

Subcommands: ``simulate`` writes a snapshot-pair dataset, ``discover``
runs the full three-stage pipeline, ``stage`` runs a single stage, and
``render`` pretty-prints a saved report.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .datasets import write_dataset
from .pipeline import (
    ConfigError,
    build_model,
    load_config,
    load_dataset_from_config,
    render_report,
    run_diffusion_discovery,
    run_drift_discovery,
    run_full,
    run_jump_discovery,
    write_report,
)
from .simulate import generate_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="essr",
        description="Discover drift, diffusion and jump laws from snapshot pairs.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a dataset from a config")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", required=True, type=Path)

    disc = sub.add_parser("discover", help="run the full three-stage pipeline")
    disc.add_argument("--config", required=True, type=Path)
    disc.add_argument("--seed", type=int, default=None)
    disc.add_argument("--out", required=True, type=Path)
    disc.add_argument("--threads", type=int, default=None,
                      help="cap the numba thread count")

    stg = sub.add_parser("stage", help="run a single discovery stage")
    stg.add_argument("name", choices=["jump", "drift", "diffusion"])
    stg.add_argument("--config", required=True, type=Path)
    stg.add_argument("--seed", type=int, default=None)
    stg.add_argument("--out", required=True, type=Path)
    stg.add_argument("--threads", type=int, default=None)

    ren = sub.add_parser("render", help="print a saved report as text")
    ren.add_argument("report", type=Path)
    ren.add_argument("--format", choices=["text", "json"], default="text")
    return p


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)
    return config


def _set_threads(n):
    if n is None:
        return
    try:
        import numba

        numba.set_num_threads(max(1, n))
    except ImportError:
        pass


def _cmd_simulate(args) -> int:
    config = _load(args)
    if config.simulate is None:
        raise ConfigError("data.simulate", "required for the simulate command")
    sim = config.simulate
    model = build_model(sim.model_spec)
    data = generate_dataset(model, sim.domain, sim.samples, sim.h, config.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(args.out, data)
    print(f"wrote {data.n_samples} pairs (dim {data.dim}, h {data.h}) to {args.out}")
    return EXIT_OK


def _cmd_discover(args) -> int:
    _set_threads(args.threads)
    config = _load(args)
    report = run_full(config)
    path = write_report(report, args.out)
    print(render_report(report), end="")
    print(f"report: {path}")
    return EXIT_OK


def _cmd_stage(args) -> int:
    _set_threads(args.threads)
    config = _load(args)
    data = load_dataset_from_config(config)
    jump_stage = None
    if args.name in ("jump", "diffusion"):
        jump_stage = run_jump_discovery(data, config)
    if args.name == "jump":
        stage = jump_stage
    elif args.name == "drift":
        stage = run_drift_discovery(data, config)
    else:
        stage = run_diffusion_discovery(data, config, jump_stage)
    report = {
        "seed": config.seed,
        "dim": data.dim,
        "h": data.h,
        "n_samples": data.n_samples,
        "config": config.raw,
        "stages": {args.name: stage},
    }
    path = write_report(report, args.out)
    print(render_report(report), end="")
    print(f"report: {path}")
    return EXIT_OK


def _cmd_render(args) -> int:
    with open(args.report) as f:
        report = json.load(f)
    if args.format == "json":
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(render_report(report), end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    handlers = {
        "simulate": _cmd_simulate,
        "discover": _cmd_discover,
        "stage": _cmd_stage,
        "render": _cmd_render,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
