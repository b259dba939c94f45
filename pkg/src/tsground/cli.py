"""Command line entry points: generate, train, eval, gradcheck, ablate.

Exit status is 0 on success, 2 when inputs fail validation (bad config,
unreadable or mismatched files) and 3 on numerical failure (divergence,
gradient check mismatch).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, ExperimentConfig, tiny_config
import numpy as np

from .diffcore import finite_difference_check, redraw_zero_matrices
from .encoders import SampleError
from .grounder import ProposalError
from .lab.ablation import ablate
from .lab.evaluate import evaluate, evaluate_model, write_report
from .lab.io import FormatError, load_checkpoint, read_dataset, save_checkpoint, write_dataset
from .lab.synthetic import generate_dataset
from .lab.train import model_from_checkpoint, train
from .model import collate

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("tsground")


class GradientCheckFailed(ArithmeticError):
    pass


def _config(path) -> ExperimentConfig:
    return ExperimentConfig() if path is None else ExperimentConfig.load(path)


def cmd_generate(args) -> None:
    config = _config(args.config)
    samples = generate_dataset(config, args.count, args.seed, args.start_id)
    write_dataset(samples, args.out, config)
    log.info("wrote %d samples to %s", len(samples), args.out)


def _fit(config, args):
    train_set, data_config = read_dataset(args.data, with_config=True)
    eval_set = read_dataset(args.eval) if args.eval else []
    ck, _ = train(config or data_config, train_set, eval_set)
    return ck, eval_set


def cmd_train(args) -> None:
    config = None if args.config is None else _config(args.config)
    ck, _ = _fit(config, args)
    save_checkpoint(ck, args.out)
    log.info("best epoch %d, eval R@1,IoU=0.5 %.2f; saved %s", ck.best_epoch, ck.best_score,
             args.out)


def cmd_eval(args) -> None:
    report = evaluate(load_checkpoint(args.ckpt), read_dataset(args.data))
    if args.report:
        write_report(report, args.report)
    print(json.dumps(report["metrics"], sort_keys=True))


def cmd_gradcheck(args) -> None:
    config = (tiny_config() if args.config is None else _config(args.config)).replace(
        dtype="float64")
    model = ablate(config)
    redraw_zero_matrices(model, np.random.default_rng([config.seed, 1]))
    batch = collate(generate_dataset(config, args.samples, config.seed), model.dtype,
                    config.max_words)
    report = finite_difference_check(model, batch, h=args.h, tol=args.tol)
    print(report.summary())
    if not report.passed:
        raise GradientCheckFailed(f"{len(report.failures)} entries exceed tolerance {args.tol}")


def cmd_ablate(args) -> None:
    base = _config(args.config)
    flags = [f for f in (args.disable or "").split(",") if f.strip()]
    config = base.disable(flags)
    ck, eval_set = _fit(config, args)
    if args.out:
        save_checkpoint(ck, args.out)
    result = {"disabled": flags, "best_epoch": ck.best_epoch}
    if eval_set:
        report = evaluate_model(model_from_checkpoint(ck), eval_set)
        if args.report:
            write_report(report, args.report)
        result["metrics"] = report["metrics"]
    print(json.dumps(result, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsground", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--start-id", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train and save the best checkpoint")
    t.add_argument("--config", help="defaults to the config echoed in the training data")
    t.add_argument("--data", required=True)
    t.add_argument("--eval")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    c.add_argument("--config", help="defaults to the tiny double-precision config")
    c.add_argument("--tol", type=float, default=1e-3)
    c.add_argument("--h", type=float, default=1e-4)
    c.add_argument("--samples", type=int, default=1)
    c.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train and evaluate a variant with parts disabled")
    a.add_argument("--config")
    a.add_argument("--disable", default="", help="comma-separated flags, e.g. motion,threed")
    a.add_argument("--data", required=True)
    a.add_argument("--eval")
    a.add_argument("--out")
    a.add_argument("--report")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SampleError, FormatError, ProposalError, KeyError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
