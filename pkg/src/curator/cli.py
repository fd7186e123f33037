"""`curator` command line: one subcommand per pipeline stage plus sample, eval and run.

Exit codes: 0 success, 2 config error, 3 missing upstream artifact,
4 data error.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

import yaml

from . import pipeline, synth
from .curation import STRATEGIES
from .errors import ConfigError, CuratorError, DependencyError

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DATA = 0, 2, 3, 4


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML config (falls back to $CURATOR_CONFIG)")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--out", help="run directory holding every artifact")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="curator", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")
    gen.add_argument("--spec", help="YAML corpus spec (num_scenarios, T, event_mix, road_kinds); "
                                    "writes straight into --out")
    for stage in pipeline.STAGES[1:-2]:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")

    sample = sub.add_parser("sample", parents=[common], help="draw transitions under a strategy")
    sample.add_argument("--strategy", choices=STRATEGIES, default="uniform")
    sample.add_argument("-n", "--num", type=int, default=10)
    sample.add_argument("--output", help="CSV file (default stdout)")

    ev = sub.add_parser("eval", parents=[common], help="closed-loop evaluation")
    ev.add_argument("--corpus", help="scenario directory; with --policy evaluates a single policy")
    ev.add_argument("--policy", help="checkpoint path, 'expert' or 'constant:a,w'")
    ev.add_argument("--report", help="per-scenario metrics CSV")

    sub.add_parser("report", parents=[common], help="metrics-by-strategy tables")

    run = sub.add_parser("run", parents=[common], help="run several stages in order")
    run.add_argument("--stages", default=",".join(pipeline.STAGES),
                     help="comma-separated subset of " + ",".join(pipeline.STAGES))
    return parser


def _config(args):
    return pipeline.load_config(args.config, out=args.out, seed=args.seed, workers=args.workers)


def _gen_from_spec(args):
    try:
        with open(args.spec) as f:
            doc = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read spec {args.spec}: {exc}") from exc
    if args.seed is not None:
        doc["seed"] = args.seed
    if "road_kinds" in doc:
        doc["road_kinds"] = tuple(doc["road_kinds"])
    try:
        spec = synth.CorpusSpec(**doc)
    except (TypeError, CuratorError, ValueError) as exc:
        raise ConfigError(f"invalid corpus spec: {exc}") from exc
    if not args.out:
        raise ConfigError("--out is required with --spec")
    events = synth.generate_corpus(spec, args.out, args.workers or 1)
    print(f"wrote {spec.num_scenarios} scenarios and {len(events)} planted events to {args.out}")


def _sample(args, cfg):
    draws = pipeline.sample_transitions(cfg, args.strategy, args.num)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["scenario_id", "t"])
        w.writerows(draws)
    finally:
        if args.output:
            out.close()


def _eval(args, cfg):
    if args.policy or args.corpus:
        if not (args.policy and args.corpus):
            raise ConfigError("--corpus and --policy go together")
        report = args.report or str(Path(cfg.out) / "reports" / "eval_policy.csv")
        m = pipeline.evaluate_policy_file(args.corpus, args.policy, report, cfg)
        print(f"collision {m.collision_rate:.3f}  offroad {m.offroad_rate:.3f}  success {m.success_rate:.3f}"
              f"  -> {report}")
        return
    info = pipeline.run_stage(cfg, "eval")
    for name, rate in info["collision_rate"].items():
        print(f"{name:8s} collision {rate:.3f}")


def dispatch(args):
    if args.command == "gen" and args.spec:
        _gen_from_spec(args)
        return EXIT_OK
    cfg = _config(args)
    if args.command == "sample":
        _sample(args, cfg)
    elif args.command == "eval":
        _eval(args, cfg)
    elif args.command == "run":
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        pipeline.run_pipeline(cfg, stages)
    else:
        pipeline.run_stage(cfg, args.command)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (CuratorError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
