"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import datagen
from ..heads import MODES, MultiHeadClassifier
from . import report, runner
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("streamal")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _config(args, **overrides):
    extra = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "config", None):
        return load_config(args.config, **extra)
    return RunConfig(**extra)


def cmd_gen_data(args):
    cfg = _config(args, seed=args.seed)
    demos = runner.load_demos(cfg.replace(stream_path=None))
    datagen.save_stream(demos, args.out)
    print(f"wrote {sum(len(d.frames) for d in demos)} frames in {len(demos)} demonstrations to {args.out}")


def cmd_pretrain(args):
    cfg = _config(args, seed=args.seed, stream_path=args.stream, mode=args.mode)
    demos = runner.load_demos(cfg)
    clf, reports = runner.pretrain(cfg, demos)
    clf.save(args.out)
    for r in reports:
        b = r["bound"]
        tail = "" if b is None else f" bound={b['bound']:.4f} risk={b['emp_risk']:.4f} kl={b['kl']:.2f}"
        print(f"class {r['class_id']}: n={r['n']} {r['seconds']:.2f}s{tail}")


def cmd_run(args):
    cfg = _config(args, seed=args.seed, stream_path=args.stream, mode=args.mode, out_dir=args.out)
    metrics = runner.execute(cfg, pretrained=args.pretrained)
    print(json.dumps(report.strip_timing(metrics["aggregate"]), indent=2, sort_keys=True))


def cmd_eval(args):
    clf = MultiHeadClassifier.load(args.checkpoint)
    demos = datagen.load_stream(args.stream)
    frames = [(f.x, dm.class_id) for dm in demos for f in dm.frames if f.binary_label == 1]
    if not frames:
        raise ConfigError("the test stream has no positive frames")
    X = np.stack([x for x, _ in frames])
    truth = np.array([c for _, c in frames])
    out = runner.evaluate(clf, X, truth, sorted(set(truth.tolist())), args.bins)
    out["frames"] = len(truth)
    print(json.dumps(out, indent=2, sort_keys=True))


def cmd_compare(args):
    cfg = _config(args)
    seeds = list(range(args.seeds)) if args.seed_list is None else args.seed_list
    runs = runner.run_baseline(cfg, seeds, tuple(args.modes), args.out)
    table = report.comparison_table(runs)
    print(report.format_table(table))
    if args.out:
        with open(os.path.join(args.out, "comparison.json"), "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="streamal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic drifting stream as CSV")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="fit task-0 heads and write a checkpoint directory")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--stream")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="play a stream and write metrics, logs and checkpoints")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--stream")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--pretrained", help="checkpoint directory from 'pretrain'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the positive frames of a stream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--bins", type=int, default=15)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="baseline table over modes and seeds")
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed-list", type=int, nargs="+")
    p.add_argument("--modes", nargs="+", choices=MODES, default=["vanilla", "mean", "full"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, datagen.StreamFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # any module failure aborts the run
        log.debug("run aborted", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
