"""Command line: ``nspda-lab {gen-data,train,eval,program,gradcheck}``.

Failures print one line ``nspda-lab: error[<kind>]: <message>`` on stderr
and exit with 2 (usage), 3 (missing input), 4 (bad checkpoint) or
5 (verification failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import CapacityError, CheckpointError, GrammarNotFoundError, InputError, NSPDAError
from .grammars import BUILTIN_GRAMMARS, builtin_grammar
from .model import ModelParams, forward_sequence, trace_lines
from .programming import tensor_census

PROG = "nspda-lab"
EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_CHECKPOINT, EXIT_VERIFY = 0, 2, 3, 4, 5

log = logging.getLogger(PROG)


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _fail(code: int, kind: str, message: str) -> int:
    line = " ".join(str(message).split())
    print(f"{PROG}: error[{kind}]: {line}", file=sys.stderr)
    return code


# -- shared option groups -----------------------------------------------------


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any config key, repeatable")
    p.add_argument("--grammar", choices=BUILTIN_GRAMMARS)
    p.add_argument("--seed", help="data seed")
    p.add_argument("--out")


def _config(args, flag_keys: dict[str, str]) -> harness.ExperimentConfig:
    values: dict = {}
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file {args.config} not found")
        values.update(harness.read_config_file(args.config))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(EXIT_USAGE, "usage", f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = str(v)
    return harness.build_config(values)


DATA_FLAGS = {"grammar": "grammar", "pos": "data.pos", "neg": "data.neg", "len": "data.len", "seed": "data.seed",
              "eval_lengths": "eval.lengths", "eval_size": "eval.size", "out": "out"}
TRAIN_FLAGS = {"grammar": "grammar", "order": "model.order", "states": "model.states", "hints": "model.hints",
               "algo": "opt.algo", "window": "opt.window", "lr0": "opt.lr0", "k": "opt.k",
               "loss_scope": "opt.loss_scope", "mode": "curriculum.mode", "epochs_cap": "curriculum.global_cap",
               "replicates": "replicates", "seed": "data.seed", "model_seed": "seed.model",
               "train_seed": "seed.train", "out": "out"}


# -- subcommands --------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args, DATA_FLAGS)
    sets = harness.make_datasets(cfg.grammar, cfg.data_pos, cfg.data_neg, cfg.data_len, cfg.data_seed,
                                 cfg.eval_lengths, cfg.eval_size)
    for path in harness.write_datasets(sets, cfg.out):
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, TRAIN_FLAGS)
    if cfg.global_cap < 0:
        raise CliError(EXIT_USAGE, "usage", "--epochs-cap must be >= 0")
    if args.data:
        sets = harness.read_datasets(args.data)
    else:
        sets = harness.make_datasets(cfg.grammar, cfg.data_pos, cfg.data_neg, cfg.data_len, cfg.data_seed,
                                     cfg.eval_lengths, cfg.eval_size)
    results = harness.run_experiment(cfg, sets, cfg.out)
    for r in results:
        m = r.metrics
        errs = " ".join(f"{k}={v:.2f}" for k, v in sorted(m.test_error.items()))
        print(f"replicate {r.replicate}: converged={m.converged} epochs={len(m.epochs)} "
              f"characters={m.characters_to_convergence} {errs}")
    print(f"aggregate: {Path(cfg.out) / 'aggregate.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    if args.trace is not None:
        if not isinstance(params, ModelParams):
            raise CliError(EXIT_USAGE, "usage", "--trace needs an NSPDA checkpoint")
        alphabet = harness.model_alphabet(params)
        trace: list = []
        preds, _ = forward_sequence(params, alphabet.encode(args.trace), None, "quantized",
                                    np.random.default_rng(args.seed), "sample", trace)
        for line in trace_lines(trace, alphabet.symbols):
            print(line)
        print(f"accept={preds[-1] > 0.5} yhat={preds[-1]:.4f}")
        return EXIT_OK
    if args.data:
        sets = harness.test_sets(harness.read_datasets(args.data)) if not args.all else harness.read_datasets(args.data)
    else:
        grammar = args.grammar or params.metadata.get("grammar")
        if not grammar:
            raise CliError(EXIT_USAGE, "usage", "give --data or --grammar (the checkpoint names no grammar)")
        pda = builtin_grammar(grammar)
        lengths = harness._lengths(args.lengths)
        sets = {f"len{n}": harness.sample_length_bucket(pda, n, args.size, args.seed + 1000 + i)
                for i, n in enumerate(lengths)}
    table = harness.evaluate(params, sets, seed=args.seed)
    if args.json:
        print(json.dumps(table, sort_keys=True))
    else:
        for name, err in table.items():
            print(f"{name}\t{err:.2f}")
    return EXIT_OK


def cmd_program(args) -> int:
    from .programming import program_full

    pda = builtin_grammar(args.grammar)
    J = args.states if args.states is not None else pda.M + (pda.M if args.order == "second" else 1)
    params = program_full(pda, args.order, J, args.H, args.theta)
    if params.metadata.get("split_accepting"):
        log.warning("second order: split-accepting-state construction used")
        print("construction: split-accepting states")
    out = Path(os.environ.get("NSPDA_OUT") or ".") / args.out if not Path(args.out).is_absolute() else Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out)
    for name, counts in tensor_census(params).items():
        print(f"{name} " + " ".join(f"{v}:{c}" for v, c in sorted(counts.items())))
    print(out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import verification as v

    suites = {
        "fd": lambda: [v.check_finite_differences(args.trials, args.seed)],
        "rtrl": lambda: [v.check_rtrl(args.trials, args.seed), v.check_rtrl(args.trials, args.seed,
                                                                             v.STRAIGHT_THROUGH_GAIN)],
        "tbptt": lambda: [v.check_tbptt_full_window(args.trials, args.seed, args.window)],
        "uoro": lambda: [v.check_uoro(args.samples, args.seed)],
        "kernels": lambda: [v.check_kernels(args.trials, args.seed)],
    }
    picked = list(suites) if args.algo == "all" else [args.algo]
    results = [r for name in picked for r in suites[name]()]
    for r in results:
        print(r.line())
    if not all(r.passed for r in results):
        return _fail(EXIT_VERIFY, "verification", "; ".join(r.name for r in results if not r.passed) + " failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=PROG, description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="sample train/validation/test files")
    _add_config_options(g)
    g.add_argument("--pos", type=int)
    g.add_argument("--neg", type=int)
    g.add_argument("--len", help="LOW:HIGH")
    g.add_argument("--eval-lengths", help="comma separated, e.g. 60,480,960")
    g.add_argument("--eval-size", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train replicates and write checkpoints and metrics")
    _add_config_options(t)
    t.add_argument("--data", help="directory written by gen-data (sampled in memory when omitted)")
    t.add_argument("--order", help="third, second, first_order or second_order")
    t.add_argument("--states", type=int)
    t.add_argument("--hints")
    t.add_argument("--algo")
    t.add_argument("--window", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("-k", type=int, dest="k")
    t.add_argument("--loss-scope")
    t.add_argument("--mode")
    t.add_argument("--epochs-cap", type=int)
    t.add_argument("--replicates", type=int)
    t.add_argument("--model-seed", type=int)
    t.add_argument("--train-seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="error %% of a checkpoint per evaluation set")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="gen-data directory; its test and long-string sets are scored")
    e.add_argument("--all", action="store_true", help="also score train and validation")
    e.add_argument("--grammar", choices=BUILTIN_GRAMMARS)
    e.add_argument("--lengths", default="60,480,960")
    e.add_argument("--size", type=int, default=10_000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--trace", metavar="STRING", help="print the per-step stack and state log for one string")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("program", help="compile a builtin grammar into a network")
    pr.add_argument("--grammar", required=True, choices=BUILTIN_GRAMMARS)
    pr.add_argument("--order", default="third", choices=("third", "second"))
    pr.add_argument("--states", type=int)
    pr.add_argument("--H", type=float, default=6.0)
    pr.add_argument("--theta", type=float, default=6.0)
    pr.add_argument("--out", default="programmed.json")
    pr.set_defaults(func=cmd_program)

    gc = sub.add_parser("gradcheck", help="gradient verification suites")
    gc.add_argument("--algo", default="all", choices=("all", "fd", "rtrl", "tbptt", "uoro", "kernels"))
    gc.add_argument("--trials", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--window", type=int, default=10_000)
    gc.add_argument("--samples", type=int, default=10_000, help="UORO estimates")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        return _fail(exc.code, exc.kind, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, exc)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, "checkpoint", exc)
    except (FileNotFoundError, IsADirectoryError) as exc:
        return _fail(EXIT_MISSING, "missing-input", exc)
    except GrammarNotFoundError as exc:
        return _fail(EXIT_USAGE, "usage", exc.args[0] if exc.args else exc)
    except CapacityError as exc:
        return _fail(EXIT_USAGE, "capacity", exc)
    except (InputError, NSPDAError) as exc:
        return _fail(EXIT_USAGE, "usage", exc)


if __name__ == "__main__":
    sys.exit(main())
