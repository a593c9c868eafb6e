"""Command-line surface: train / eval / attack / analyze / curve.

Every command that emits tabular data writes CSV with a header row.
"""

import argparse
import sys
from dataclasses import replace

import numpy as np

from .attacks import AttackSpec, fgsm, snr
from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_dataset
from .diagnostics import local_cov_dim, spectrum_histogram
from .errors import CheckpointError, DataFormatError
from .graph import forward, predict
from .lipschitz import graph_bound
from .models import build_mlp
from .training import TrainConfig, train
from .training import evaluate as _evaluate
from .training import robustness_curve


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parsevalnet")
    p.add_argument("--seed", type=int, default=None, help="override the config/default seed")
    p.add_argument("--reproducible", action="store_true",
                   help="force bit-reproducible mode (sequential reductions)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an MLP from a config file")
    t.add_argument("--config", default=None, help="key=value config file (defaults used if omitted)")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--metrics", default=None, help="also write the metric CSV stream here")

    e = sub.add_parser("eval", help="report accuracy of a checkpoint")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "test"))

    a = sub.add_parser("attack", help="one-model attack sweep, per-example CSV")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--split", default="test", choices=("train", "test"))
    a.add_argument("--norm", required=True, choices=("inf", "l2"))
    a.add_argument("--eps", required=True, type=float)
    a.add_argument("--iters", type=int, default=1)
    a.add_argument("--step", type=float, default=None)
    a.add_argument("--out", default=None, help="per-example CSV (default stdout)")

    an = sub.add_parser("analyze", help="model diagnostics")
    ansub = an.add_subparsers(dest="analysis", required=True)

    al = ansub.add_parser("lipschitz", help="per-node constants and the root bound")
    al.add_argument("--model", required=True)
    al.add_argument("--norm", required=True, choices=("l2", "inf"))

    asp = ansub.add_parser("spectrum", help="singular-value histograms of weight nodes")
    asp.add_argument("--model", required=True)
    asp.add_argument("--node", default=None, help="restrict to one node id")
    asp.add_argument("--bins", type=int, default=50)
    asp.add_argument("--out", default=None)

    ac = ansub.add_parser("covdim", help="local covariance dimension of activations")
    ac.add_argument("--model", required=True)
    ac.add_argument("--data", required=True)
    ac.add_argument("--split", default="test", choices=("train", "test"))
    ac.add_argument("--threshold", type=float, default=0.99)
    ac.add_argument("--per-class", action="store_true")
    ac.add_argument("--out", default=None)

    c = sub.add_parser("curve", help="accuracy vs attack budget")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--split", default="test", choices=("train", "test"))
    c.add_argument("--norm", required=True, choices=("inf", "l2"))
    c.add_argument("--eps", required=True,
                   help="comma-separated budgets, e.g. 0,0.05,0.1")
    c.add_argument("--out", default=None)
    return p


class _Tee:
    def __init__(self, *streams):
        self.streams = streams

    def write(self, text):
        for s in self.streams:
            s.write(text)

    def flush(self):
        for s in self.streams:
            s.flush()


def _out_stream(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w"), True


def _cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig.mlp_defaults()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.reproducible:
        cfg = replace(cfg, reproducible=True)
    train_set = load_dataset(args.data, "train")
    val_set = load_dataset(args.data, "test")
    classes = int(max(train_set.labels.max(), val_set.labels.max())) + 1
    graph = build_mlp(
        train_set.inputs.shape[1],
        cfg.hidden,
        classes,
        dropout=cfg.dropout,
        residual=cfg.residual,
        combine="convex" if cfg.parseval else "sum",
    )
    stream = sys.stdout
    metrics_file = None
    if args.metrics:
        metrics_file = open(args.metrics, "w")
        stream = _Tee(sys.stdout, metrics_file)
    try:
        ckpt, _ = train(graph, cfg, train_set, val_set, metrics_stream=stream)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    save_checkpoint(ckpt, args.out)
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.model)
    data = load_dataset(args.data, args.split)
    acc = _evaluate(ckpt.graph, ckpt.params, data)
    print("n,accuracy")
    print(f"{data.n},{acc!r}")
    return 0


def _cmd_attack(args) -> int:
    ckpt = load_checkpoint(args.model)
    data = load_dataset(args.data, args.split)
    spec = AttackSpec(norm=args.norm, epsilon=args.eps, iterations=args.iters,
                      step_size=args.step, clamp=ckpt.config.input_clamp)
    adv, _ = fgsm(ckpt.graph, ckpt.params, data, spec)
    clean_ok = predict(ckpt.graph, ckpt.params, data) == data.labels
    adv_ok = predict(ckpt.graph, ckpt.params, adv) == data.labels
    deltas = adv.inputs - data.inputs
    out, close = _out_stream(args.out)
    try:
        print("snr,clean_correct,adv_correct", file=out)
        for i in range(data.n):
            s = snr(data.inputs[i], deltas[i])
            print(f"{s!r},{int(clean_ok[i])},{int(adv_ok[i])}", file=out)
    finally:
        if close:
            out.close()
    if close:  # per-example rows went to a file; summarize on stdout
        print("clean_acc,adv_acc")
        print(f"{float(clean_ok.mean())!r},{float(adv_ok.mean())!r}")
    return 0


def _cmd_lipschitz(args) -> int:
    ckpt = load_checkpoint(args.model)
    report = graph_bound(ckpt.graph, ckpt.params, args.norm)
    print("node,factor,cumulative")
    for nid in ckpt.graph.topo_order:
        factor = report.node_factor.get(nid)
        factor_txt = "" if factor is None else repr(float(factor))
        print(f"{nid},{factor_txt},{float(report.per_node[nid])!r}")
    print(f"root,,{float(report.root)!r}")
    return 0


def _cmd_spectrum(args) -> int:
    ckpt = load_checkpoint(args.model)
    node_ids = ckpt.graph.weight_node_ids()
    if args.node is not None:
        if args.node not in node_ids:
            raise CheckpointError(f"node {args.node!r} is not a weight node of this model")
        node_ids = [args.node]
    out, close = _out_stream(args.out)
    try:
        print("node,bin_lo,bin_hi,count", file=out)
        for nid in node_ids:
            h = spectrum_histogram(ckpt.params, nid, bins=args.bins)
            for lo, hi, cnt in zip(h.edges[:-1], h.edges[1:], h.counts):
                print(f"{nid},{lo!r},{hi!r},{cnt}", file=out)
    finally:
        if close:
            out.close()
    return 0


def _cmd_covdim(args) -> int:
    ckpt = load_checkpoint(args.model)
    data = load_dataset(args.data, args.split)
    state = forward(ckpt.graph, ckpt.params, data, mode="eval")
    relu_ids = [nid for nid in ckpt.graph.topo_order if ckpt.graph.nodes[nid].kind == "relu"]
    out, close = _out_stream(args.out)
    try:
        if args.per_class:
            print("node,class,p,d,fraction", file=out)
        else:
            print("node,p,d,fraction", file=out)
        for nid in relu_ids:
            acts = state.activations[nid]
            if args.per_class:
                result = local_cov_dim(acts, threshold=args.threshold, labels=data.labels)
                d = result.d
                for cls in sorted(result.per_class):
                    p = result.per_class[cls]
                    print(f"{nid},{cls},{p},{d},{p / d!r}", file=out)
            else:
                r = local_cov_dim(acts, threshold=args.threshold)
                print(f"{nid},{r.p},{r.d},{r.fraction!r}", file=out)
    finally:
        if close:
            out.close()
    return 0


def _cmd_curve(args) -> int:
    ckpt = load_checkpoint(args.model)
    data = load_dataset(args.data, args.split)
    eps_list = [float(x) for x in args.eps.split(",") if x.strip()]
    points = robustness_curve(ckpt.graph, ckpt.params, data, eps_list,
                              norm=args.norm, clamp=ckpt.config.input_clamp)
    out, close = _out_stream(args.out)
    try:
        print("epsilon,mean_snr,accuracy", file=out)
        for pt in points:
            print(f"{pt.epsilon!r},{pt.mean_snr!r},{pt.accuracy!r}", file=out)
    finally:
        if close:
            out.close()
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "attack": _cmd_attack,
    "curve": _cmd_curve,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            handler = {
                "lipschitz": _cmd_lipschitz,
                "spectrum": _cmd_spectrum,
                "covdim": _cmd_covdim,
            }[args.analysis]
        else:
            handler = _COMMANDS[args.command]
        return handler(args)
    except (DataFormatError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
