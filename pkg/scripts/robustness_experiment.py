#!/usr/bin/env python3
"""Constrained-vs-baseline robustness experiment on the vendored MNIST subset.

Trains matched MLPs (tight-frame constrained vs plain weight decay) over
several seeds, then reports clean accuracy, one-step max-norm adversarial
accuracy at each requested budget, and the layer-3 local covariance
dimension fraction. Output is CSV on stdout (plus an optional file copy).

Usage:
    python3 scripts/robustness_experiment.py --data data/mnist10k \
        --seeds 0 1 2 --eps 0.05 0.1 0.2 --out results.csv
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from parsevalnet import (  # noqa: E402
    AttackSpec,
    TrainConfig,
    build_mlp,
    evaluate,
    fgsm,
    forward,
    local_cov_dim,
    predict,
    train,
)
from parsevalnet.data import load_dataset  # noqa: E402


def run_arm(train_set, test_set, seed, parseval, hidden, epochs, eps_list):
    g = build_mlp(784, hidden, 10)
    cfg = TrainConfig(
        epochs=epochs, batch_size=100, momentum=0.9, lr=0.1,
        lr_schedule=((8, 0.5), (14, 0.5)), weight_decay=0.0005,
        beta=0.3 if parseval else 0.0, row_subset_fraction=0.5,
        parseval=parseval, seed=seed, hidden=hidden,
    )
    t0 = time.time()
    ckpt, _ = train(g, cfg, train_set)
    clean = evaluate(g, ckpt.params, test_set)
    adv_accs = []
    for eps in eps_list:
        adv, _ = fgsm(g, ckpt.params, test_set,
                      AttackSpec(norm="inf", epsilon=eps, clamp=(0.0, 1.0)))
        adv_accs.append(float((predict(g, ckpt.params, adv) == test_set.labels).mean()))
    last_relu = f"relu{len(hidden)}"
    frac = local_cov_dim(
        forward(g, ckpt.params, test_set).activations[last_relu], threshold=0.99
    ).fraction
    print(f"# seed {seed} {'parseval' if parseval else 'vanilla '} "
          f"done in {time.time() - t0:.0f}s", file=sys.stderr)
    return clean, adv_accs, frac


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/mnist10k", help="IDX dataset directory")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--hidden", type=int, nargs="+", default=[256, 256, 256])
    ap.add_argument("--out", default=None, help="also write the CSV here")
    args = ap.parse_args(argv)

    train_set = load_dataset(args.data, "train")
    test_set = load_dataset(args.data, "test")
    hidden = tuple(args.hidden)

    header = ("mode,seed,clean_acc,"
              + ",".join(f"adv_acc_eps{e:g}" for e in args.eps)
              + ",covdim_fraction")
    rows = [header]
    arms = {True: [], False: []}
    for seed in args.seeds:
        for parseval in (True, False):
            clean, adv_accs, frac = run_arm(
                train_set, test_set, seed, parseval, hidden, args.epochs, args.eps)
            arms[parseval].append((clean, adv_accs, frac))
            rows.append(
                f"{'parseval' if parseval else 'vanilla'},{seed},{clean:.4f},"
                + ",".join(f"{a:.4f}" for a in adv_accs)
                + f",{frac:.4f}"
            )
    for parseval, label in ((True, "parseval"), (False, "vanilla")):
        runs = arms[parseval]
        mean_clean = np.mean([r[0] for r in runs])
        mean_adv = np.mean([r[1] for r in runs], axis=0)
        mean_frac = np.mean([r[2] for r in runs])
        rows.append(
            f"{label},mean,{mean_clean:.4f},"
            + ",".join(f"{a:.4f}" for a in mean_adv)
            + f",{mean_frac:.4f}"
        )

    text = "\n".join(rows) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
