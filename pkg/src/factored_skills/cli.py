"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (e.g. missing inputs), 2 invalid
configuration or usage, 3 a table would exceed its memory cap.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .learner import MemoryCapError
from .plots import emit_plots
from .suite import load_skills, run_suite, stage_dci, stage_skills, stage_task

OUT_ENV = "FACTORED_SKILLS_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MEMORY = 0, 1, 2, 3


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factored-skills", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train-skills": "train skill sets for every seed",
        "eval-dci": "score trained skills with DCI (reads skills/ under --out)",
        "train-task": "train downstream learners on trained skills",
        "run-suite": "skills, DCI, downstream curves, plots and manifest",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="JSON config; defaults apply when omitted")
        p.add_argument("--seed", type=_u64, help="master seed (overrides run.master_seed)")
        p.add_argument("--out", type=Path, help=f"output directory (default: run.out, else ${OUT_ENV}/<hash>)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path config override, e.g. skill.train_steps=1000")
    p = sub.add_parser("plot", help="render SVG plots from the CSVs in a run directory")
    p.add_argument("--out", type=Path, required=True)
    return parser


def _config(args) -> ExperimentConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.master_seed={args.seed}")
    if args.config is None:
        return parse_config("{}", "<defaults>", overrides)
    return load_config(args.config, overrides)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out is not None:
        return args.out
    if cfg.run.out:
        return Path(cfg.run.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / cfg.digest()[:12]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            for p in emit_plots(args.out):
                print(p)
            return EXIT_OK
        cfg = _config(args)
        out = _out_dir(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "run-suite":
            run_suite(cfg, out)
            print(out / "manifest.json")
        elif args.command == "train-skills":
            (out / "config.json").write_text(cfg.to_json())
            _, files = stage_skills(cfg, out)
            print("\n".join(str(f) for f in files))
        elif args.command == "eval-dci":
            print(stage_dci(cfg, out, load_skills(cfg, out))[0])
        elif args.command == "train-task":
            print(stage_task(cfg, out, load_skills(cfg, out))[0])
    except ConfigError as e:
        print(f"config error:\n{e}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryCapError as e:
        print(f"memory cap exceeded: {e}", file=sys.stderr)
        return EXIT_MEMORY
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
