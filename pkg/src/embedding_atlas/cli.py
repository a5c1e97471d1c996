"""``embedding-atlas <experiment> --config PATH [--seed N] [--out DIR] [overrides]``"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .pipeline import EXIT_VALIDATION, EXPERIMENTS, PipelineConfig, ValidationError, run_pipeline

# flag -> (params key, type)
OVERRIDES = {
    "--learning-rate": ("learning_rate", float),
    "--max-iters": ("max_iters", int),
    "--loss-tol": ("loss_tol", float),
    "--cos-tol": ("cos_tol", float),
    "--perturb-budget": ("perturb_budget", float),
    "--record-every": ("record_every", int),
    "--epsilon": ("epsilon", float),
    "--grid-n": ("grid_n", int),
    "--singular": ("singular", int),
    "--random": ("random", int),
    "--null": ("null", int),
    "--optimized": ("optimized", int),
    "--steps": ("steps", int),
    "--step-len": ("step_len", float),
    "--n-steps": ("n_steps", int),
    "--drift-cap": ("drift_cap", float),
    "--rank-cut": ("rank_cut", int),
    "--anchors-per-class": ("anchors_per_class", int),
    "--diff-scale": ("diff_scale", float),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embedding-atlas",
        description="Probe the embedding geometry of a toy vision transformer.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="JSON pipeline config (optional; defaults apply)")
    parser.add_argument("--seed", type=int, help="pipeline RNG seed")
    parser.add_argument("--weights-seed", type=int, help="seed for randomly initialised weights")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--frames", action="store_true", help="dump interpolation frames as PPM")
    parser.add_argument("--no-match-first", action="store_true",
                        help="interpolate between the raw inputs instead of original -> matched")
    parser.add_argument("-v", "--verbose", action="store_true")
    for flag, (_, typ) in OVERRIDES.items():
        parser.add_argument(flag, type=typ)
    return parser


def config_from_args(args) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.load(args.config)
        if cfg.experiment != args.experiment:
            raise ValidationError(
                f"config is for {cfg.experiment!r} but {args.experiment!r} was requested")
    else:
        cfg = PipelineConfig(args.experiment)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.weights_seed is not None:
        cfg.model = {k: v for k, v in cfg.model.items() if k != "weights_file"}
        cfg.model["weights_seed"] = args.weights_seed
    if args.out:
        cfg.output_dir = args.out
    for flag, (key, _) in OVERRIDES.items():
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            cfg.params[key] = value
    if args.frames:
        cfg.params["frames"] = True
    if args.no_match_first:
        cfg.params["match_first"] = False
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValidationError, OSError, TypeError) as exc:
        print(json.dumps({"status": "error", "exit_code": EXIT_VALIDATION,
                          "kind": "validation", "message": str(exc)}), file=sys.stderr)
        return EXIT_VALIDATION
    return run_pipeline(cfg)


if __name__ == "__main__":
    sys.exit(main())
