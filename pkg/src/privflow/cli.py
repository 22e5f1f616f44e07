"""Command line front end for the staged pipeline.

Typical runs:

    privflow --preset 15min-30day --out run1
    privflow --config run1/config.ini --stage train --out run1
    privflow --config run1/config.ini --stage drift-check --out run1
    privflow --write-config my.ini --preset 60min-60day
"""

import argparse
import sys

from . import pipeline

_SEED_FIELDS = ["network_seed", "profile_seed", "randomize_seed",
                "collect_seed", "train_seed", "update_seed"]


def build_parser():
    p = argparse.ArgumentParser(
        prog="privflow",
        description="privacy-preserving meter data collection and "
                    "neural power-flow estimation")
    p.add_argument("--config", help="path to a key-value config file")
    p.add_argument("--preset", help="start from a named scenario preset "
                   "(15min-30day, 60min-60day, 60min-1year)")
    p.add_argument("--stage", default="all",
                   help="stage to run, or 'all' (default); one of: "
                   + ", ".join(pipeline.STAGES))
    p.add_argument("--seed", type=int,
                   help="override every stage seed with this value")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--parallel", action="store_true",
                   help="collect sessions in parallel")
    p.add_argument("--write-config", metavar="PATH",
                   help="write the resolved config to PATH and exit")
    return p


def resolve_config(args):
    if args.config and args.preset:
        raise pipeline.PipelineError("give either --config or --preset, not both")
    if args.config:
        cfg = pipeline.load_config(args.config)
    elif args.preset:
        cfg = pipeline.preset_config(args.preset)
    else:
        cfg = pipeline.RunConfig()
    if args.seed is not None:
        for field in _SEED_FIELDS:
            setattr(cfg, field, args.seed)
    if args.parallel:
        cfg.parallel = True
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.write_config:
            pipeline.write_config(cfg, args.write_config)
            print("wrote %s" % args.write_config)
            return 0
        if args.stage == "all":
            pipeline.run_pipeline(cfg, args.out)
        else:
            pipeline.run_stage(cfg, args.stage, args.out)
        return 0
    except pipeline.PipelineError as e:
        print("error: %s" % e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
