"""Command-line front end.

Subcommands: gen-data, train, distill, nst, eval, augment, loss. Each reads an
optional key=value config file plus flag overrides. Exit codes: 0 on success,
1 on usage errors (including no arguments), 2 on runtime failures.
"""

import argparse
import sys
from pathlib import Path

from .augment import make_rng
from .data import gen_synthetic_dataset
from .distill import coarsened_kl_loss, combined_loss, kl_lattice_loss
from .errors import RnntDistillError
from .lattice import rnnt_loss
from .metrics import write_metrics
from .model import load_params
from .pipeline import (
    augment_features,
    distill_run,
    evaluate,
    load_experiment_config,
    nst_loop,
    train_supervised,
)
from .tensorio import read_tensor, write_tensor


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(parser):
    parser.add_argument("--config", metavar="PATH", help="key=value config file")
    parser.add_argument("--seed", type=int, metavar="N")
    parser.add_argument("--mode", choices=["hard", "soft", "mixed", "efficient"])
    parser.add_argument("--alpha", type=float, metavar="X")
    parser.add_argument("--tau-teacher", type=float, metavar="X", dest="tau_teacher")
    parser.add_argument("--tau-student", type=float, metavar="X", dest="tau_student")
    parser.add_argument("--chunk-frames", type=int, metavar="N", dest="chunk_frames")
    parser.add_argument("--generations", type=int, metavar="N")
    parser.add_argument("--out", metavar="DIR")
    parser.add_argument("--data", metavar="DIR")
    parser.add_argument("--noisy-teacher", action="store_true", default=None,
                        dest="noisy_teacher")


_OVERRIDE_KEYS = ("seed", "mode", "alpha", "tau_teacher", "tau_student",
                  "chunk_frames", "generations", "noisy_teacher")


def _config_from(args):
    overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "data", None):
        overrides["data_dir"] = args.data
    return load_experiment_config(getattr(args, "config", None), overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="rnnt-distill",
                     description="Transducer distillation toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    _add_common(p)

    p = sub.add_parser("train", help="supervised training on the labeled split")
    _add_common(p)

    p = sub.add_parser("distill", help="distill a saved teacher into a student")
    _add_common(p)
    p.add_argument("--teacher", metavar="DIR", required=True,
                   help="saved teacher model directory")

    p = sub.add_parser("nst", help="multi-generation noisy student training")
    _add_common(p)

    p = sub.add_parser("eval", help="token error rate of a saved model")
    _add_common(p)
    p.add_argument("--model", metavar="DIR", required=True)
    p.add_argument("--split", default="eval", choices=["labeled", "eval"])

    p = sub.add_parser("augment", help="apply augmentation to a tensor file")
    _add_common(p)
    p.add_argument("input", metavar="IN.rntd")
    p.add_argument("output", metavar="OUT.rntd")

    p = sub.add_parser("loss", help="losses between stored logit lattices")
    _add_common(p)
    p.add_argument("lattices", nargs="+", metavar="LATTICE.rntd",
                   help="student lattice (hard) or teacher then student lattice")
    p.add_argument("--labels", metavar="IDS",
                   help="space-separated token ids (hard/mixed/efficient modes)")
    return parser


def _cmd_gen_data(args):
    cfg = _config_from(args)
    root = gen_synthetic_dataset(cfg.task, cfg.out_dir)
    print(f"dataset written to {root}")
    return 0


def _cmd_train(args):
    cfg = _config_from(args)
    _, record = train_supervised(cfg, run_id="train", out_dir=cfg.out_dir)
    write_metrics([record], cfg.out_dir)
    print(f"run {record.run_id}: ter={record.ter:.6f} final_loss={record.final_loss:.6f}")
    return 0


def _cmd_distill(args):
    cfg = _config_from(args)
    teacher = load_params(args.teacher)
    _, record = distill_run(teacher, cfg, run_id="distill", out_dir=cfg.out_dir)
    write_metrics([record], cfg.out_dir)
    print(f"run {record.run_id}: ter={record.ter:.6f} final_loss={record.final_loss:.6f}")
    return 0


def _cmd_nst(args):
    cfg = _config_from(args)
    _, records = nst_loop(cfg, out_dir=cfg.out_dir)
    write_metrics(records, cfg.out_dir)
    for record in records:
        print(f"generation {record.generation}: ter={record.ter:.6f}")
    return 0


def _cmd_eval(args):
    cfg = _config_from(args)
    params = load_params(args.model)
    ter = evaluate(params, cfg.data_dir, args.split, cfg.decode_u_max)
    print(f"{args.split} ter={ter:.6f}")
    return 0


def _cmd_augment(args):
    cfg = _config_from(args)
    features = read_tensor(args.input)
    out = augment_features(features, cfg, make_rng(cfg.seed))
    write_tensor(args.output, out)
    print(f"augmented ({cfg.augment_kind}) -> {args.output}")
    return 0


def _cmd_loss(args):
    cfg = _config_from(args)
    mode = cfg.distill.mode
    labels = [int(t) for t in args.labels.split()] if args.labels else []
    lattices = [read_tensor(p) for p in args.lattices]
    if mode == "hard":
        if len(lattices) != 1:
            raise _UsageError("hard mode takes one lattice file")
        value = rnnt_loss(lattices[0], labels).loss
    else:
        if len(lattices) != 2:
            raise _UsageError(f"{mode} mode takes teacher and student lattice files")
        teacher, student = lattices
        if mode == "soft":
            value = kl_lattice_loss(teacher, student, cfg.distill).loss
        elif mode == "efficient":
            value = coarsened_kl_loss(teacher, student, labels, cfg.distill).loss
        else:
            value = combined_loss(
                rnnt_loss(student, labels),
                kl_lattice_loss(teacher, student, cfg.distill),
                cfg.distill,
            ).loss
    print(value)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "distill": _cmd_distill,
    "nst": _cmd_nst,
    "eval": _cmd_eval,
    "augment": _cmd_augment,
    "loss": _cmd_loss,
}


def cli_dispatch(argv) -> int:
    """Parses argv (without the program name) and runs one subcommand."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    except (RnntDistillError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
