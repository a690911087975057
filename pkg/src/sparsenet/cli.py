"""Command-line entry point: ``sparsenet {ght,train,sweep,compress,eval,inspect}``."""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bitmask, ght
from .experiment import SweepSpec, architecture_of, cmd_sweep, datasets_of, load_config, run_training
from .network import build_network, evaluate


def _planted(rows, cols, nnz, rng):
    A = rng.standard_normal((rows, cols))
    x = np.zeros(cols)
    idx = rng.choice(cols, nnz, replace=False)
    x[idx] = rng.choice([-1.0, 1.0], nnz) * rng.uniform(1.0, 3.0, nnz)
    return A, A @ x, x


def do_ght(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = None
    if args.matrix:
        if not args.rhs:
            raise ValueError("--matrix needs --rhs")
        A = ght.read_matrix(args.matrix)
        b = ght.read_matrix(args.rhs).ravel()
    else:
        rows, cols = (int(v) for v in args.planted.lower().split("x"))
        seed = 0 if args.seed is None else args.seed
        A, b, truth = _planted(rows, cols, args.k, np.random.default_rng(seed))
    obj = ght.least_squares(A, b)
    step = args.step_size
    if step is None and not args.matrix:
        step = 1.0 / np.linalg.norm(A, 2) ** 2
    cfg = ght.GhtConfig(args.k, step, args.max_iter, tolerance=args.tol)
    state = ght.ght_solve(obj, cfg)
    ght.write_trace_csv(out / "trace.csv", state.trace)
    ght.write_matrix(out / "solution.txt", state.x[None])
    result = {
        "iterations": state.iteration,
        "converged": state.converged,
        "objective": state.objective_value,
        "support": state.support.tolist(),
    }
    if truth is not None:
        result["true_support"] = ght.support(truth).tolist()
        result["max_abs_error"] = float(np.max(np.abs(state.x - truth)))
    print(json.dumps(result))


def do_train(args):
    cfg = load_config(args.config)
    summary = run_training(cfg, args.out, seed=args.seed)
    keys = ("status", "final_train_acc", "final_test_acc", "nonzeros", "bytes", "diagnostic")
    print(json.dumps({k: summary[k] for k in keys if k in summary}))
    return 0 if summary["status"] == "completed" else 3


def do_sweep(args):
    cfg = load_config(args.config)
    ratios = [float(r) for r in args.ratios.split(",")]
    rows = cmd_sweep(SweepSpec(ratios, cfg, args.out, args.seed, args.jobs))
    for row in rows:
        print(",".join(str(row[k]) for k in row))


def do_compress(args):
    recs = bitmask.load(args.input)
    out = args.output or str(Path(args.out) / (Path(args.input).stem + ".sdnn"))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    n = bitmask.save(out, recs)
    rep = bitmask.size_report(recs)
    print(json.dumps({"output": out, "bytes": n, "dense_bytes": rep.dense_bytes, "ratio": rep.ratio}))


def do_eval(args):
    cfg = load_config(args.config)
    model = build_network(architecture_of(cfg))
    bitmask.load_into(model, bitmask.load(args.model))
    train, test = datasets_of(cfg)
    data = test if args.split == "test" else train
    x = data.images.reshape((len(data),) + model.input_shape)
    acc, mean_loss = evaluate(model, x, data.labels)
    print(json.dumps({"split": args.split, "samples": len(data), "accuracy": acc, "loss": mean_loss}))


def do_inspect(args):
    recs = bitmask.load(args.model)
    for i, r in enumerate(recs):
        nnz = int(np.count_nonzero(r.weight))
        print(f"layer {i} {r.kind:<16} shape {list(r.weight.shape)} nonzeros {nnz}/{r.weight.size} bias {r.bias.size}")
    rep = bitmask.size_report(recs)
    print(
        f"parameters {rep.parameters} nonzeros {rep.nonzeros} "
        f"dense_bytes {rep.dense_bytes} bitmask_bytes {rep.bitmask_bytes} "
        f"ratio {rep.ratio:.3f} payload_ratio {rep.payload_ratio:.3f} parameter_ratio {rep.parameter_ratio:.3f}"
    )


def build_parser():
    def flags(suppress):
        # subcommand copies must not clobber values given before the subcommand
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        f = argparse.ArgumentParser(add_help=False)
        f.add_argument("--seed", type=int, default=d(None), help="overrides the config seed")
        f.add_argument("--jobs", type=int, default=d(1), help="parallel runs (sweep)")
        f.add_argument("--out", default=d("out"), help="output directory")
        f.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return f

    common = flags(True)
    p = argparse.ArgumentParser(prog="sparsenet", parents=[flags(False)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ght", parents=[common], help="sparse least squares by gradient hard thresholding")
    s.add_argument("-k", type=int, default=3, help="cardinality bound")
    s.add_argument("--planted", default="40x20", help="ROWSxCOLS planted instance")
    s.add_argument("--matrix", help="matrix file for A")
    s.add_argument("--rhs", help="matrix file for b (one row or one column)")
    s.add_argument("--step-size", type=float)
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--tol", type=float, default=1e-8)
    s.set_defaults(func=do_ght)

    s = sub.add_parser("train", parents=[common], help="one IHT run from a JSON config")
    s.add_argument("config")
    s.set_defaults(func=do_train)

    s = sub.add_parser("sweep", parents=[common], help="accuracy versus sparsity ratio")
    s.add_argument("config")
    s.add_argument("--ratios", default="0,0.25,0.5,0.75,0.9")
    s.set_defaults(func=do_sweep)

    s = sub.add_parser("compress", parents=[common], help="rewrite a checkpoint in bitmask form")
    s.add_argument("input")
    s.add_argument("-o", "--output")
    s.set_defaults(func=do_compress)

    s = sub.add_parser("eval", parents=[common], help="accuracy of a stored model")
    s.add_argument("config", help="run config naming the architecture and data")
    s.add_argument("--model", required=True)
    s.add_argument("--split", choices=["train", "test"], default="test")
    s.set_defaults(func=do_eval)

    s = sub.add_parser("inspect", parents=[common], help="per-layer nonzeros and sizes")
    s.add_argument("model")
    s.set_defaults(func=do_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args) or 0
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
