"""Command line: ``tubeil {demo,train,simulate,evaluate,sweep,all}``.

Exit status is 0 on success, 1 for usage, configuration or missing-input
errors, and 2 for numerical failures (solver, Riccati, training, governor).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ROOT_ENV, ConfigError, RunConfig
from .dynamics import NumericalError
from .governor import GovernorSingular
from .lqr import RiccatiError
from .mlp import TrainingDiverged
from .sim import VARIANTS

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("tubeil")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="TOML run configuration (defaults are used for missing keys)")
    p.add_argument("--seed", type=int, help="override experiment.seed")
    p.add_argument("--out", help=f"artifact root (overrides ${ROOT_ENV} and the config file)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for episodes")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tubeil", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("demo", help="collect the MPC demonstration and the ancillary gain")
    _common(p)

    p = sub.add_parser("train", help="train the networks")
    _common(p)
    p.add_argument("--variant", default="all", choices=pipeline.TRAIN_VARIANTS + ("all",))

    p = sub.add_parser("simulate", help="run closed-loop episodes")
    _common(p)
    p.add_argument("--variant", default="proposed", choices=VARIANTS)
    p.add_argument("--episodes", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--governor", dest="governor", action="store_true", default=None)
    g.add_argument("--no-governor", dest="governor", action="store_false")
    p.add_argument("--changed-plant", action="store_true", help="use the [plant] masses instead of the nominal ones")

    p = sub.add_parser("evaluate", help="reports and figures from stored runs")
    _common(p)
    p.add_argument("results", nargs="?", help="directory of run folders (default: <root>/runs)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("sweep", help="RMSE against the number of demonstrated trajectories")
    _common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--points", type=int, nargs="+", help="trajectory counts (0 = zero network)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("all", help="demo, train, the standard runs, evaluate and sweep")
    _common(p)
    p.add_argument("--episodes", type=int)
    return ap


STANDARD_RUNS = (
    ("proposed", None, False),
    ("no-dr", None, False),
    ("dr-tube", None, False),
    ("dr-conventional", None, False),
    ("proposed", False, True),
    ("proposed", True, True),
)


def _dispatch(args, cfg: RunConfig) -> dict:
    cmd = args.command
    if cmd == "demo":
        return pipeline.step_demo(cfg)
    if cmd == "train":
        return pipeline.step_train(cfg, args.variant)
    if cmd == "simulate":
        _, doc = pipeline.step_simulate(cfg, args.variant, args.episodes, args.governor, args.changed_plant,
                                        args.jobs)
        s = doc["summary"]
        return {"episodes": s["episodes"], "regulated": s["regulated"], "diverged": s["diverged"],
                "rmse_mean": s["metrics"]["rmse"]["mean"]}
    if cmd == "evaluate":
        return pipeline.step_evaluate(cfg, args.results, figures=not args.no_figures)
    if cmd == "sweep":
        rows = pipeline.step_sweep(cfg, args.jobs, args.points, args.episodes, figures=not args.no_figures)
        return {"rows": rows}
    if cmd == "all":
        pipeline.step_demo(cfg)
        pipeline.step_train(cfg, "all")
        for variant, gov, changed in STANDARD_RUNS:
            pipeline.step_simulate(cfg, variant, args.episodes, gov, changed, args.jobs)
        out = pipeline.step_evaluate(cfg)
        out["sweep"] = pipeline.step_sweep(cfg, args.jobs, episodes=args.episodes)
        return out
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, root_override=args.out)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        result = _dispatch(args, cfg)
    except (ConfigError, pipeline.MissingArtifact, ValueError) as exc:
        print(f"tubeil: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, RiccatiError, TrainingDiverged, GovernorSingular, FloatingPointError) as exc:
        print(f"tubeil: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
