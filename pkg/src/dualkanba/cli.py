"""``dualkanba`` command line: data generation, training, evaluation, checks and experiments.

Exit status: 0 on success, 1 on runtime failure (or a failed gradient check),
2 on usage errors.
"""

import argparse
import csv
import json
import logging
import os
import sys

from . import bench as bench_mod
from . import gradcheck as gradcheck_mod
from .autodiff import OpError
from .config import ConfigError, RunConfig, load_config, model_config_from_flat, save_run_config
from .data import DataFormatError, generate_synthetic, read_jsonl, split, write_jsonl
from .model import ABLATIONS, CheckpointError, DualKanbaFormer
from .trainer import evaluate, mean_accuracy, run_ablation, sweep_layers, train_loop, write_history_csv

logger = logging.getLogger("dualkanba")

CHECKPOINT_NAME = "model.dkbf"
HISTORY_NAME = "history.csv"
CONFIG_NAME = "config.json"


class UsageError(Exception):
    pass


def _add_common(p, *names):
    if "config" in names:
        p.add_argument("--config", metavar="PATH", help="JSON file of dotted-key overrides")
    if "seed" in names:
        p.add_argument("--seed", type=int, metavar="U64", help="seed for every random stream")
    if "out" in names:
        p.add_argument("--out", metavar="PATH", help="output file or directory")
    for name in ("train", "dev", "test"):
        if name in names:
            p.add_argument(f"--{name}", metavar="PATH", help=f"{name} split (JSONL)")


def build_parser():
    parser = argparse.ArgumentParser(prog="dualkanba", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="write the planted bimodal synthetic task as JSONL")
    _add_common(p, "config", "seed", "out")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--ts", type=int)
    p.add_argument("--ti", type=int)
    p.add_argument("--ta", type=int)
    p.add_argument("--d-in", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--text-signal-pos", choices=("random", "fixed"))
    p.add_argument("--n-prototypes", type=int)
    p.add_argument("--split", action="store_true",
                   help="treat --out as a directory and write train/dev/test.jsonl (80/10/10)")

    p = sub.add_parser("train", help="train a model; writes checkpoint, history CSV and config")
    _add_common(p, "config", "seed", "out", "train", "dev")

    p = sub.add_parser("eval", help="print accuracy and macro-F1 of a checkpoint on a split")
    _add_common(p, "config", "test")
    p.add_argument("--checkpoint", metavar="PATH", required=True,
                   help="checkpoint file, or a training output directory")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _add_common(p, "seed")
    p.add_argument("--module", choices=gradcheck_mod.MODULES, help="restrict to one module")
    p.add_argument("--eps", type=float, help="central-difference step (default depends on the case)")
    p.add_argument("--tol", type=float, help="override the tolerance of every case")

    p = sub.add_parser("bench", help="attended key/value counts and timings vs dense attention")
    _add_common(p, "config", "seed", "out")
    p.add_argument("--ts", type=int, help="single sequence length (default: 64, 128, 256, 512)")
    p.add_argument("--no-timing", action="store_true", help="counts only")

    p = sub.add_parser("ablate", help="train with and without one component and print the difference")
    _add_common(p, "config", "seed", "train", "dev")
    p.add_argument("--component", required=True, choices=sorted(ABLATIONS))
    p.add_argument("--repeats", type=int, default=1, help="number of consecutive seeds to average")

    p = sub.add_parser("sweep-layers", help="dev accuracy for each stack depth in [--min, --max]")
    _add_common(p, "config", "seed", "out", "train", "dev")
    p.add_argument("--min", type=int, default=1)
    p.add_argument("--max", type=int, default=4)
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _run_config(args):
    return load_config(getattr(args, "config", None), getattr(args, "seed", None))


def _check_dims(run, dataset, what):
    s = dataset[0]
    if s.text_features.shape[1] != run.model.d_in or s.visual_features.shape[1] != run.model.d_img:
        raise UsageError(
            f"{what}: feature dims (text {s.text_features.shape[1]}, visual {s.visual_features.shape[1]}) "
            f"do not match the config (d_in {run.model.d_in}, d_img {run.model.d_img}); "
            f"set them with --config")


def _read_split(path, what, required=True):
    if not path:
        if required:
            raise UsageError(f"--{what} is required")
        return None
    data = read_jsonl(path)
    if not data:
        raise UsageError(f"{path}: the {what} split is empty")
    return data


def _train_dev(args, run):
    """Splits from --train/--dev, or the synthetic task from the data config when both are absent."""
    if args.train is None and args.dev is None:
        train, dev, _ = split(generate_synthetic(run.data), seed=run.data.seed)
        return train, dev
    train = _read_split(args.train, "train")
    dev = _read_split(args.dev, "dev", required=False) or train
    _check_dims(run, train, "train")
    return train, dev


def _locate_checkpoint(path):
    if os.path.isdir(path):
        return os.path.join(path, CHECKPOINT_NAME), os.path.join(path, CONFIG_NAME)
    return path, os.path.join(os.path.dirname(path) or ".", CONFIG_NAME)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen_data(args):
    run = _run_config(args)
    spec = run.data
    for flag in ("n_samples", "ts", "ti", "ta", "d_in", "noise_std", "text_signal_pos", "n_prototypes"):
        value = getattr(args, flag)
        if value is not None:
            setattr(spec, flag, value)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not args.out:
        raise UsageError("--out is required")
    dataset = generate_synthetic(spec)
    if args.split:
        os.makedirs(args.out, exist_ok=True)
        for name, part in zip(("train", "dev", "test"), split(dataset, seed=spec.seed)):
            write_jsonl(part, os.path.join(args.out, f"{name}.jsonl"))
            print(f"{name}: {len(part)} samples")
    else:
        write_jsonl(dataset, args.out)
        print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def cmd_train(args):
    run = _run_config(args)
    if not args.out:
        raise UsageError("--out is required")
    train = _read_split(args.train, "train")
    dev = _read_split(args.dev, "dev", required=False) or train
    _check_dims(run, train, "train")
    model = DualKanbaFormer(run.model)
    result = train_loop(model, train, dev, run.train,
                        on_epoch=lambda r: logger.info("epoch %d loss %.5f dev acc %.4f",
                                                       r["epoch"], r["train_loss"], r["dev_acc"]))
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, CHECKPOINT_NAME))
    write_history_csv(result.history, os.path.join(args.out, HISTORY_NAME))
    save_run_config(run, os.path.join(args.out, CONFIG_NAME))
    print(f"best epoch {result.best_epoch}: {evaluate(model, dev).line()}")
    return 0


def cmd_eval(args):
    ckpt, cfg_path = _locate_checkpoint(args.checkpoint)
    if args.config:
        model_cfg = _run_config(args).model
    elif os.path.exists(cfg_path):
        with open(cfg_path, encoding="utf-8") as fh:
            model_cfg = model_config_from_flat(json.load(fh))
    else:
        raise UsageError(f"no {CONFIG_NAME} next to {ckpt}; pass --config")
    test = _read_split(args.test, "test")
    _check_dims(RunConfig(model=model_cfg), test, "test")
    model = DualKanbaFormer.load(ckpt, model_cfg)
    print(evaluate(model, test).line())
    return 0


def cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else 0
    kwargs = {} if args.eps is None else {"eps": args.eps}
    results = gradcheck_mod.run_checks(args.module, tol=args.tol, seed=seed,
                                       on_result=lambda r: print(r.line(), flush=True), **kwargs)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


def cmd_bench(args):
    run = _run_config(args)
    lengths = (args.ts,) if args.ts is not None else bench_mod.DEFAULT_LENGTHS
    if min(lengths) < 1:
        raise UsageError("--ts must be positive")
    rows = bench_mod.bench_rows(lengths, cfg=run.model.adsa, d=run.model.d, heads=run.model.heads,
                                seed=run.model.seed, timing=not args.no_timing)
    bench_mod.write_bench_csv(rows, args.out)
    return 0


def cmd_ablate(args):
    run = _run_config(args)
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    train, dev = _train_dev(args, run)
    seeds = [run.model.seed + i for i in range(args.repeats)]
    baseline, ablated = run_ablation(args.component, train, dev, run.model, run.train, seeds)
    for b, a in zip(baseline, ablated):
        print(f"seed {b.seed}: full acc={b.dev.accuracy:.4f}  w/o {args.component} acc={a.dev.accuracy:.4f}")
    base, abl = mean_accuracy(baseline), mean_accuracy(ablated)
    print(f"full={base:.4f} w/o {args.component}={abl:.4f} delta={abl - base:+.4f}")
    return 0


def cmd_sweep_layers(args):
    run = _run_config(args)
    if args.min < 1 or args.max < args.min:
        raise UsageError("need 1 <= --min <= --max")
    train, dev = _train_dev(args, run)
    rows = sweep_layers(range(args.min, args.max + 1), train, dev, run.model, run.train)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "sweep-layers": cmd_sweep_layers,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dualkanba {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DataFormatError, CheckpointError, OpError, FloatingPointError, ValueError) as exc:
        print(f"dualkanba {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
