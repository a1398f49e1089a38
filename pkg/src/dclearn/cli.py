"""Command-line entry point: ``dcl bench2d | train | continual | analyze``.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 numeric
failure, 5 malformed input. ``DCL_SEED`` in the environment overrides
``--seed``.
"""

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, optim
from .dcl import DclConfig
from .model import LOSSES, save_checkpoint
from .numerics import NumericError, cosine_or_none
from .tasks import bench2d, classify, continual, data
from .traceio import MalformedTraceError, read_trace, write_csv, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_NUMERIC, EXIT_MALFORMED = 0, 2, 3, 4, 5

BENCH_COLUMNS = ["run_id", "optimizer", "dcl", "beta_w", "n_r", "lr", "final_z", "final_grad_norm",
                 "path_congruency", "iterations"]
EPOCH_COLUMNS = ["epoch", "train_loss", "test_error", "epoch_congruency", "magnitude_abs", "magnitude_rel"]
LOSS_NAMES = {"ce": "softmax_cross_entropy", "mse": "mse_onehot"}
OPT_NAMES = {"gd": "sgd", "sgd": "sgd", "rmsprop": "rmsprop", "adam": "adam"}


class ConfigError(ValueError):
    pass


def beta_w_arg(s):
    if s.lower() in ("inf", "infinity"):
        return math.inf
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"beta-w must be a positive integer or 'inf', got {s!r}") from None
    return v


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".", help="directory for output files (created if missing)")
    p.add_argument("--trace-every", type=int, default=1, metavar="K", help="record every K-th step in trace files")


def _add_dcl(p, beta_w=math.inf):
    p.add_argument("--dcl", action="store_true", help="apply the gradient correction")
    p.add_argument("--beta-w", type=beta_w_arg, default=beta_w, help="effective window (integer or inf)")
    p.add_argument("--beta-o", type=int, default=0, help="window offset")
    p.add_argument("--n-ref", type=int, default=1, help="number of references")


def _add_optim(p, kind="sgd", lr=0.05, momentum=0.0):
    p.add_argument("--optimizer", choices=sorted(OPT_NAMES), default=kind)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--momentum", type=float, default=momentum)
    p.add_argument("--weight-decay", type=float, default=0.0)


def build_parser():
    ap = argparse.ArgumentParser(prog="dcl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench2d", help="optimizer runs on a 2D test function")
    b.add_argument("--function", choices=sorted(bench2d.PROBLEMS), default="two-minimum")
    b.add_argument("--start", type=float, nargs=2, metavar=("X", "Y"))
    b.add_argument("--curvature", type=float, nargs=2, metavar=("A", "B"), default=(1.0, 10.0),
                   help="quadratic function curvatures")
    b.add_argument("--optimizer", nargs="+", choices=sorted(OPT_NAMES), default=["gd"])
    b.add_argument("--lr", type=float, nargs="+", default=[0.05], help="one rate, or one per optimizer")
    b.add_argument("--momentum", type=float, default=0.0)
    b.add_argument("--iters", type=int, default=200)
    b.add_argument("--grad-tol", type=float, default=0.0, help="stop once |grad f| falls below this")
    _add_dcl(b)
    _add_common(b)

    t = sub.add_parser("train", help="train an MLP on synthetic blobs")
    _add_optim(t, "sgd", 0.05, 0.9)
    t.add_argument("--schedule", choices=["constant", "halving", "milestones"], default="constant")
    t.add_argument("--milestones", type=int, nargs="*", default=[])
    t.add_argument("--gamma", type=float, default=0.1)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--classes", type=int, default=4)
    t.add_argument("--dim", type=int, default=8)
    t.add_argument("--n-train", type=int, default=200, help="training samples (split evenly over classes)")
    t.add_argument("--n-test", type=int, default=200)
    t.add_argument("--separation", type=float, default=2.0)
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--activation", choices=["relu", "tanh"], default="relu")
    t.add_argument("--loss", choices=sorted(LOSS_NAMES), default="ce")
    t.add_argument("--gem", action="store_true", help="one-sample memory, cleared every epoch")
    t.add_argument("--save-model", action="store_true", help="also write model.ckpt")
    _add_dcl(t)
    _add_common(t)

    c = sub.add_parser("continual", help="sequential training over a task stream")
    c.add_argument("--stream", choices=["rotate", "permute"], default="rotate")
    c.add_argument("--tasks", type=int, default=20)
    c.add_argument("--n-train", type=int, default=200, help="training samples per task")
    c.add_argument("--n-test", type=int, default=200, help="test samples per task")
    c.add_argument("--classes", type=int, default=10)
    c.add_argument("--dim", type=int, default=16)
    c.add_argument("--separation", type=float, default=3.0)
    c.add_argument("--hidden", type=int, default=32)
    c.add_argument("--lr", type=float, default=0.1)
    c.add_argument("--batch-size", type=int, default=10)
    c.add_argument("--epochs-per-task", type=int, default=1)
    c.add_argument("--mem", type=int, default=32, help="memory samples stored per task")
    c.add_argument("--use-memory", "--gem", dest="use_memory", action="store_true",
                   help="add one memory constraint per past task")
    c.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    c.add_argument("--trace", action="store_true", help="also write one trace per seed")
    _add_dcl(c)
    _add_common(c)

    a = sub.add_parser("analyze", help="congruency and magnitude of a recorded trace")
    a.add_argument("trace")
    a.add_argument("--out-dir", default=None, help="default: the trace's directory")
    a.add_argument("--m", type=int, default=0, help="reference step for the accumulated gradient")
    a.add_argument("--bound", action="store_true", help="also report the GD lower bound per step")
    a.add_argument("--lipschitz", type=float, default=None, help="L for --bound (default: from the trace header)")
    return ap


def _seed(args):
    env = os.environ.get("DCL_SEED")
    if env is None or env == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"DCL_SEED must be an integer, got {env!r}") from None


def _dcl_cfg(args, use_memory=False):
    if not args.dcl:
        return None
    try:
        return DclConfig(args.n_ref, args.beta_w, args.beta_o, use_memory)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _opt(kind, lr, momentum=0.0, weight_decay=0.0):
    try:
        return optim.OptimizerConfig(OPT_NAMES[kind], lr, momentum, weight_decay)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _echo(args, **extra):
    skip = {"out_dir", "func", "trace_every"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    cfg.update(extra)
    return cfg


def _positive(args, *names):
    for n in names:
        if getattr(args, n) < 1:
            raise ConfigError(f"--{n.replace('_', '-')} must be >= 1")


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _bw(cfg):
    if cfg is None:
        return None
    return "inf" if cfg.beta_w == math.inf else int(cfg.beta_w)


def cmd_bench2d(args):
    _positive(args, "iters", "trace_every")
    seed = _seed(args)
    if len(args.lr) not in (1, len(args.optimizer)):
        raise ConfigError("--lr takes one value or one per optimizer")
    if args.grad_tol < 0:
        raise ConfigError("--grad-tol must be >= 0")
    lrs = args.lr * len(args.optimizer) if len(args.lr) == 1 else args.lr
    if args.function == "quadratic":
        start = tuple(args.start) if args.start else (2.0, 1.0)
        try:
            prob = bench2d.quadratic_problem(*args.curvature, start=start)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    else:
        prob = bench2d.default_problem(tuple(args.start) if args.start else (0.3, -1.8))
    dcl_cfg = _dcl_cfg(args)
    runs = []
    for kind, lr in zip(args.optimizer, lrs):
        opt = _opt(kind, lr, args.momentum)
        runs.append((kind, opt, None))
        if dcl_cfg is not None:
            runs.append((kind, opt, dcl_cfg))

    out = _out_dir(args.out_dir)
    rows, diverged = [], False
    for kind, opt, cfg in runs:
        run_id = kind + ("-dcl" if cfg is not None else "")
        tr = bench2d.run_bench2d(prob, opt, cfg, args.iters, args.grad_tol)
        z, gn = bench2d.final_state(prob, tr)
        diverged |= tr.diverged
        rows.append({"run_id": run_id, "optimizer": kind, "dcl": cfg is not None, "beta_w": _bw(cfg),
                     "n_r": cfg.n_r if cfg else None, "lr": opt.lr, "final_z": z, "final_grad_norm": gn,
                     "path_congruency": analysis.path_congruency(tr), "iterations": len(tr)})
        echo = _echo(args, seed=seed, run_id=run_id, lipschitz=prob.params.get("lipschitz"))
        write_trace(out / f"trace_{run_id}.jsonl", tr, echo, args.trace_every)
    write_csv(out / "summary.csv", BENCH_COLUMNS, rows)
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_train(args):
    _positive(args, "epochs", "batch_size", "hidden", "trace_every")
    seed = _seed(args)
    if args.classes < 2 or args.dim < 2:
        raise ConfigError("--classes and --dim must be >= 2")
    if args.n_train < args.classes or args.n_test < args.classes:
        raise ConfigError("need at least one train and test sample per class")
    opt = _opt(args.optimizer, args.lr, args.momentum, args.weight_decay)
    try:
        sched = optim.LrSchedule(args.schedule, tuple(args.milestones), args.gamma)
        model_cfg = classify.ModelConfig(args.hidden, args.activation, LOSS_NAMES[args.loss])
        train_cfg = classify.TrainConfig(args.epochs, args.batch_size, sched)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    dcl_cfg = _dcl_cfg(args, use_memory=args.gem)
    tr_set, te_set = data.gen_blobs_split(args.classes, args.n_train // args.classes,
                                          args.n_test // args.classes, args.dim, args.separation, seed)
    rows, run = classify.train_blobs(tr_set, te_set, model_cfg, opt, train_cfg, dcl_cfg, args.gem, seed)
    out = _out_dir(args.out_dir)
    write_csv(out / "epochs.csv", EPOCH_COLUMNS, rows)
    write_trace(out / "trace.jsonl", run.trace, _echo(args, seed=seed), args.trace_every)
    if args.save_model:
        save_checkpoint(out / "model.ckpt", run.model)
    return EXIT_OK


def cmd_continual(args):
    _positive(args, "tasks", "seeds", "batch_size", "epochs_per_task", "hidden", "trace_every")
    seed = _seed(args)
    if args.classes < 2 or args.dim < 2:
        raise ConfigError("--classes and --dim must be >= 2")
    if args.n_train < args.classes or args.n_test < args.classes:
        raise ConfigError("need at least one train and test sample per class")
    if args.mem < 0:
        raise ConfigError("--mem must be >= 0")
    if args.use_memory and args.mem == 0:
        raise ConfigError("--use-memory needs --mem > 0")
    opt = _opt("sgd", args.lr)
    if args.dcl:
        dcl_cfg = _dcl_cfg(args, use_memory=args.use_memory)
    elif args.use_memory:
        dcl_cfg = continual.gem_config()
    else:
        dcl_cfg = None
    model_cfg = classify.ModelConfig(args.hidden)
    cont_cfg = continual.ContinualConfig(args.epochs_per_task, args.batch_size, args.mem)

    out = _out_dir(args.out_dir)
    T = args.tasks
    metric_rows = []
    for s in range(seed, seed + args.seeds):
        base = data.gen_blobs(args.classes, args.n_train // args.classes, args.dim, args.separation, s)
        stream = data.gen_stream(args.stream, T, base, [s, 1], args.n_train // args.classes,
                                 args.n_test // args.classes)
        acc, trace = continual.run_continual(stream, model_cfg, opt, dcl_cfg, cont_cfg, s)
        cols = ["after_task"] + [f"task_{j + 1}" for j in range(T)]
        rows = [["init", *acc.b]] + [[i + 1, *acc.R[i]] for i in range(T)]
        write_csv(out / f"R_seed{s}.csv", cols, rows)
        ACC, BWT, FWT = continual.metrics(acc)
        metric_rows.append({"seed": s, "acc": ACC, "bwt": BWT, "fwt": FWT})
        if args.trace:
            write_trace(out / f"trace_seed{s}.jsonl", trace, _echo(args, seed=s), args.trace_every)
    write_csv(out / "metrics.csv", ["seed", "acc", "bwt", "fwt"], metric_rows)
    agg = []
    for m in ("acc", "bwt", "fwt"):
        vals = [r[m] for r in metric_rows if r[m] is not None]
        agg.append({"metric": m, "mean": float(np.mean(vals)) if vals else None,
                    "std": float(np.std(vals)) if vals else None, "n": len(vals)})
    write_csv(out / "aggregate.csv", ["metric", "mean", "std", "n"], agg)
    return EXIT_OK


def cmd_analyze(args):
    path = Path(args.trace)
    if not path.is_file():
        raise ConfigError(f"no such trace file: {path}")
    if args.m < 0:
        raise ConfigError("--m must be >= 0")
    header, trace = read_trace(path)
    out = _out_dir(args.out_dir if args.out_dir is not None else path.parent)
    stem = path.stem
    congr = analysis.epoch_congruencies(trace, args.m) if len(trace) else {}
    rows = [{"epoch": e, "epoch_congruency": congr.get(e), "magnitude_abs": analysis.magnitude(trace, e, "absolute"),
             "magnitude_rel": analysis.magnitude(trace, e, "relative")} for e in trace.epochs()]
    write_csv(out / f"{stem}_epochs.csv", ["epoch", "epoch_congruency", "magnitude_abs", "magnitude_rel"], rows)
    series = analysis.congruency_series(trace, args.m)
    steps = [{"t": trace.records[k].t, "epoch": trace.records[k].epoch, "congruency": v}
             for k, v in zip(range(args.m + 1, len(trace)), series)]
    write_csv(out / f"{stem}_steps.csv", ["t", "epoch", "congruency"], steps)
    if args.bound:
        L = args.lipschitz if args.lipschitz is not None else header.get("config", {}).get("lipschitz")
        if not isinstance(L, (int, float)) or not L > 0:
            raise ConfigError("--bound needs a positive Lipschitz constant (--lipschitz)")
        lrs = {r.lr for r in trace.records}
        if len(lrs) != 1:
            raise ConfigError("--bound needs a constant step size")
        if header.get("every", 1) != 1:
            raise ConfigError("--bound needs an undownsampled trace")
        G = np.array([r.g for r in trace.records])
        bi = analysis.BoundInput(G, float(L), lrs.pop())
        brows = []
        for k in range(1, len(trace)):
            nu = cosine_or_none(G[k], G[:k].sum(axis=0))
            bnd = analysis.congruency_lower_bound(bi, k)
            brows.append({"k": k, "congruency": nu, "bound": bnd,
                          "bound_unsimplified": analysis.congruency_lower_bound_unsimplified(bi, k),
                          "holds": None if nu is None or bnd is None else nu >= bnd - 1e-9})
        write_csv(out / f"{stem}_bound.csv", ["k", "congruency", "bound", "bound_unsimplified", "holds"], brows)
    return EXIT_OK


COMMANDS = {"bench2d": cmd_bench2d, "train": cmd_train, "continual": cmd_continual, "analyze": cmd_analyze}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"dcl: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MalformedTraceError as e:
        print(f"dcl: malformed trace {args.trace}: {e}", file=sys.stderr)
        return EXIT_MALFORMED
    except (NumericError, FloatingPointError, OverflowError) as e:
        print(f"dcl: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
