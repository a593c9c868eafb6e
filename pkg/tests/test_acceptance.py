"""Acceptance gate: one test per headline requirement of the toolkit.

Each test prints a single scoreboard line with its measured numbers
(visible under ``pytest -s`` or in captured output) and asserts the
target thresholds, including runtime budgets. The three training-based
checks run real MNIST jobs on the vendored 10k-sample subset; the
robustness and covariance-dimension checks share one set of six runs.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from parsevalnet import (
    AttackSpec,
    Batch,
    Graph,
    NodeSpec,
    TrainConfig,
    backward,
    batch_log_loss,
    build_mlp,
    empirical_gap_check,
    evaluate,
    fgsm,
    forward,
    init_params,
    local_cov_dim,
    make_rng,
    predict,
    retraction_step,
    simplex_project,
    singular_values,
    spectral_norm,
    train,
)

DATA_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist10k"


def _scoreboard(ok: bool, name: str, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def mnist_data():
    if not DATA_DIR.exists():
        pytest.fail("data/mnist10k missing; regenerate with scripts/prepare_mnist.py")
    from parsevalnet.data import load_dataset

    return load_dataset(DATA_DIR, "train"), load_dataset(DATA_DIR, "test")


# --- A1: simplex projection against a brute-force oracle ---------------------


def _support_masks(k: int) -> np.ndarray:
    codes = np.arange(1, 2 ** k)
    return (codes[:, None] >> np.arange(k)) & 1 == 1


_MASKS = {k: _support_masks(k) for k in range(1, 9)}


def _simplex_oracle(y: np.ndarray) -> np.ndarray:
    """Exact projection by enumerating every support set (small K only)."""
    masks = _MASKS[len(y)]
    sizes = masks.sum(axis=1)
    tau = (masks @ y - 1.0) / sizes
    x = np.where(masks, y - tau[:, None], 0.0)
    feasible = (x >= -1e-12).all(axis=1)
    dists = ((x - y) ** 2).sum(axis=1)
    dists[~feasible] = np.inf
    return x[np.argmin(dists)]


def test_a1_simplex_projection_matches_bruteforce_oracle():
    r = make_rng(0xA1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        k = int(r.integers(1, 9))
        scale = float(r.choice([0.1, 1.0, 10.0]))
        y = scale * r.standard_normal(k)
        worst = max(worst, float(np.linalg.norm(simplex_project(y) - _simplex_oracle(y))))
    dt = time.perf_counter() - t0
    _scoreboard(
        worst <= 1e-8 and dt < 1.0,
        "A1 simplex projection vs brute-force oracle",
        f"max L2 deviation {worst:.2e} (<=1e-8) on 1000 vectors, {dt:.2f}s (<1)",
    )


# --- A2: power-iteration spectral norm against an eigendecomposition oracle --


def test_a2_spectral_norm_matches_eigendecomposition_oracle():
    r = make_rng(0xA2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        m, n = (int(x) for x in r.integers(1, 33, 2))
        w = r.standard_normal((m, n)) * float(r.choice([0.01, 1.0, 100.0]))
        gram = w.T @ w if m >= n else w @ w.T
        oracle = float(np.sqrt(max(np.linalg.eigvalsh(gram)[-1], 0.0)))
        est = spectral_norm(w)
        worst = max(worst, abs(est - oracle) / max(oracle, 1e-300))
    dt = time.perf_counter() - t0
    _scoreboard(
        worst <= 1e-6 and dt < 5.0,
        "A2 spectral norm vs Gram eigendecomposition",
        f"max relative deviation {worst:.2e} (<=1e-6) on 100 matrices, {dt:.2f}s (<5)",
    )


# --- A3: finite-difference gradient checks over every node kind --------------


def test_a3_gradients_pass_finite_difference_checks():
    # Three weight layers (conv2d, conv1d, dense) plus relu, dropout and a
    # convex aggregation node, so every differentiable kind is exercised.
    g = Graph([
        NodeSpec("in", "input", d_out=16),
        NodeSpec("c2", "conv2d", ("in",), d_in=1, d_out=2,
                 kernel_hw=(3, 3), input_hw=(4, 4)),
        NodeSpec("r1", "relu", ("c2",)),
        NodeSpec("c1", "conv1d", ("r1",), d_in=2, d_out=2, k=1),
        NodeSpec("dp", "dropout", ("c1",), rate=0.4),
        NodeSpec("agg", "aggregate", ("r1", "dp"), combine="convex"),
        NodeSpec("out", "dense", ("agg",), d_in=32, d_out=3),
    ])
    r = make_rng(0xA3)
    params = init_params(g, r)
    params.alphas["agg"] = np.array([0.6, 0.4])
    batch = Batch(r.standard_normal((4, 16)), np.array([0, 1, 2, 1]))

    def loss() -> float:
        # The fixed forward seed replays the identical dropout mask in
        # every perturbed evaluation.
        st = forward(g, params, batch, mode="train", rng=make_rng(7))
        return batch_log_loss(st.logits, batch.labels)

    t0 = time.perf_counter()
    state = forward(g, params, batch, mode="train", rng=make_rng(7))
    grads = backward(g, params, batch, state)
    h = 1e-5
    worst = 0.0
    checked = 0
    for kind in ("weights", "biases", "alphas"):
        store, gstore = getattr(params, kind), getattr(grads, kind)
        for nid, arr in store.items():
            if nid not in gstore:
                continue
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                old = arr[ix]
                arr[ix] = old + h
                lp = loss()
                arr[ix] = old - h
                lm = loss()
                arr[ix] = old
                num = (lp - lm) / (2 * h)
                worst = max(worst, abs(num - gstore[nid][ix]) / max(abs(gstore[nid][ix]), 1e-6))
                checked += 1
    dt = time.perf_counter() - t0
    _scoreboard(
        worst <= 1e-4 and dt < 30.0,
        "A3 finite-difference gradient check",
        f"max relative deviation {worst:.2e} (<=1e-4) over {checked} parameters, {dt:.1f}s (<30)",
    )


# --- A4: retraction convergence with a scalar-map oracle ----------------------


def test_a4_retraction_drives_singular_values_to_one():
    r = make_rng(0xA4)
    beta = 0.1
    t0 = time.perf_counter()
    worst_dev = 0.0
    worst_oracle = 0.0
    for _ in range(25):
        u, _ = np.linalg.qr(r.standard_normal((8, 8)))
        v, _ = np.linalg.qr(r.standard_normal((16, 8)))
        sig = r.uniform(0.2, 1.7, 8)
        w = (u * sig) @ v.T
        s = sig.copy()
        for _ in range(1000):
            w = retraction_step(w, beta)
            s = s * (1.0 + beta - beta * s * s)
        sv = singular_values(w)
        worst_dev = max(worst_dev, float(np.abs(sv - 1.0).max()))
        oracle = np.sort(np.abs(s))[::-1]
        worst_oracle = max(worst_oracle, float(np.abs(oracle - sv).max()))
    dt = time.perf_counter() - t0
    _scoreboard(
        worst_dev < 1e-3 and worst_oracle <= 1e-8 and dt < 5.0,
        "A4 retraction convergence",
        f"max|sigma-1| {worst_dev:.2e} (<1e-3), scalar-map oracle gap {worst_oracle:.2e}, "
        f"{dt:.2f}s (<5)",
    )


# --- A5: Lipschitz bound soundness on random graphs ---------------------------


def _random_check_graphs() -> list[Graph]:
    return [
        Graph([
            NodeSpec("in", "input", d_out=12),
            NodeSpec("d1", "dense", ("in",), d_in=12, d_out=16),
            NodeSpec("r1", "relu", ("d1",)),
            NodeSpec("dp", "dropout", ("r1",), rate=0.3),
            NodeSpec("d2", "dense", ("dp",), d_in=16, d_out=8),
            NodeSpec("r2", "relu", ("d2",)),
            NodeSpec("out", "dense", ("r2",), d_in=8, d_out=5),
        ]),
        Graph([
            NodeSpec("in", "input", d_out=24),
            NodeSpec("c1", "conv1d", ("in",), d_in=1, d_out=3, k=2),
            NodeSpec("r1", "relu", ("c1",)),
            NodeSpec("out", "dense", ("r1",), d_in=72, d_out=4),
        ]),
        Graph([
            NodeSpec("in", "input", d_out=36),
            NodeSpec("c2", "conv2d", ("in",), d_in=1, d_out=2,
                     kernel_hw=(3, 3), input_hw=(6, 6), rescale=1 / 3),
            NodeSpec("r1", "relu", ("c2",)),
            NodeSpec("out", "dense", ("r1",), d_in=72, d_out=3),
        ]),
        Graph([
            NodeSpec("in", "input", d_out=10),
            NodeSpec("d1", "dense", ("in",), d_in=10, d_out=10),
            NodeSpec("r1", "relu", ("d1",)),
            NodeSpec("skip", "aggregate", ("in", "r1"), combine="sum"),
            NodeSpec("out", "dense", ("skip",), d_in=10, d_out=4),
        ]),
        Graph([
            NodeSpec("in", "input", d_out=8),
            NodeSpec("d1", "dense", ("in",), d_in=8, d_out=8),
            NodeSpec("r1", "relu", ("d1",)),
            NodeSpec("dp", "dropout", ("r1",), rate=0.2),
            NodeSpec("skip", "aggregate", ("in", "dp"), combine="convex"),
            NodeSpec("out", "dense", ("skip",), d_in=8, d_out=3),
        ]),
    ]


def test_a5_lipschitz_bound_never_violated_empirically():
    r = make_rng(0xA5)
    t0 = time.perf_counter()
    violations = 0
    pairs_per_graph = 2000  # 5 graphs x 2000 = 10^4 pairs, each under both norms
    for g in _random_check_graphs():
        params = init_params(g, r)
        for nid in g.aggregate_node_ids():
            if g.nodes[nid].combine == "convex":
                params.alphas[nid] = simplex_project(r.standard_normal(2))
        dim = g.nodes["in"].d_out
        xs = r.standard_normal((pairs_per_graph, dim))
        scales = r.choice([1e-3, 1e-1, 1.0], size=(pairs_per_graph, 1))
        xts = xs + scales * r.standard_normal((pairs_per_graph, dim))
        for norm in ("l2", "inf"):
            violations += empirical_gap_check(g, params, (xs, xts), norm)
    dt = time.perf_counter() - t0
    _scoreboard(
        violations == 0 and dt < 60.0,
        "A5 Lipschitz bound soundness",
        f"{violations} violations (==0) over 10^4 pairs x 5 graphs x both norms, "
        f"{dt:.1f}s (<60)",
    )


# --- A6: constrained end-to-end training on MNIST ----------------------------


def test_a6_parseval_mlp_accuracy_and_tight_spectra(mnist_data):
    train_set, test_set = mnist_data
    t0 = time.perf_counter()
    g = build_mlp(784, (256, 256), 10, residual=True, combine="convex")
    cfg = TrainConfig(
        epochs=20, batch_size=100, momentum=0.9, lr=0.1,
        lr_schedule=((8, 0.5), (14, 0.5)), weight_decay=0.0005,
        beta=0.3, row_subset_fraction=0.5, parseval=True,
        seed=0, hidden=(256, 256), residual=True,
    )
    ckpt, _ = train(g, cfg, train_set)
    acc = evaluate(g, ckpt.params, test_set)
    worst = max(
        float(np.abs(singular_values(ckpt.params.weights[nid]) - 1.0).max())
        for nid in g.hidden_weight_node_ids()
    )
    alphas = [ckpt.params.alphas[nid] for nid in g.aggregate_node_ids()]
    alpha_ok = all(a.min() >= -1e-12 and abs(a.sum() - 1.0) <= 1e-8 for a in alphas)
    dt = time.perf_counter() - t0
    _scoreboard(
        acc >= 0.95 and worst <= 0.05 and alpha_ok and dt <= 600.0,
        "A6 constrained MLP end-to-end",
        f"test acc {acc:.4f} (>=0.95), max|sigma-1| {worst:.4f} (<=0.05), "
        f"aggregates on simplex: {alpha_ok}, {dt:.0f}s (<=600)",
    )


# --- A7/A8: robustness and covariance-dimension trends (shared runs) ---------


@pytest.fixture(scope="module")
def trend_runs(mnist_data):
    """Six jobs: 3 seeds x {constrained, weight-decay baseline}, 3x256 MLPs."""
    train_set, test_set = mnist_data
    t0 = time.perf_counter()
    results: dict[bool, list[tuple[float, float, float]]] = {True: [], False: []}
    for seed in (0, 1, 2):
        for parseval in (True, False):
            g = build_mlp(784, (256, 256, 256), 10)
            cfg = TrainConfig(
                epochs=20, batch_size=100, momentum=0.9, lr=0.1,
                lr_schedule=((8, 0.5), (14, 0.5)), weight_decay=0.0005,
                beta=0.3 if parseval else 0.0, row_subset_fraction=0.5,
                parseval=parseval, seed=seed, hidden=(256, 256, 256),
            )
            ckpt, _ = train(g, cfg, train_set)
            clean = evaluate(g, ckpt.params, test_set)
            adv, _ = fgsm(g, ckpt.params, test_set,
                          AttackSpec(norm="inf", epsilon=0.1, clamp=(0.0, 1.0)))
            adv_acc = float((predict(g, ckpt.params, adv) == test_set.labels).mean())
            frac = local_cov_dim(
                forward(g, ckpt.params, test_set).activations["relu3"], threshold=0.99
            ).fraction
            results[parseval].append((clean, adv_acc, frac))
    return results, time.perf_counter() - t0


def test_a7_constrained_net_is_more_robust_under_fgsm(trend_runs):
    results, dt = trend_runs
    adv_p = float(np.mean([r[1] for r in results[True]]))
    adv_v = float(np.mean([r[1] for r in results[False]]))
    clean_p = float(np.mean([r[0] for r in results[True]]))
    clean_v = float(np.mean([r[0] for r in results[False]]))
    gap = adv_p - adv_v
    _scoreboard(
        gap >= 0.02 and dt <= 1800.0,
        "A7 robustness trend at eps=0.1",
        f"adversarial acc {adv_p:.4f} vs {adv_v:.4f} (gap {gap * 100:+.1f}pp, >=+2pp), "
        f"clean {clean_p:.4f} vs {clean_v:.4f}, 3 seeds, {dt:.0f}s (<=1800)",
    )


def test_a8_constrained_net_uses_more_activation_directions(trend_runs):
    results, _ = trend_runs
    frac_p = [r[2] for r in results[True]]
    frac_v = [r[2] for r in results[False]]
    mean_p, mean_v = float(np.mean(frac_p)), float(np.mean(frac_v))
    _scoreboard(
        mean_p > mean_v,
        "A8 layer-3 covariance-dimension trend",
        f"fraction {mean_p:.3f} vs {mean_v:.3f} (strictly greater); per seed "
        f"{[round(f, 3) for f in frac_p]} vs {[round(f, 3) for f in frac_v]}",
    )


# --- A9: degenerate configuration equals plain momentum SGD -------------------


def _vanilla_sgd_reference(graph: Graph, cfg: TrainConfig, train_set: Batch):
    """Plain momentum-SGD loop written independently of train()."""
    rng = make_rng(cfg.seed)
    params = init_params(graph, rng, orthonormal_hidden=cfg.parseval)
    vel_w = {k: np.zeros_like(v) for k, v in params.weights.items()}
    vel_b = {k: np.zeros_like(v) for k, v in params.biases.items()}
    lr = cfg.lr
    schedule = dict(cfg.lr_schedule)
    for epoch in range(cfg.epochs):
        if epoch in schedule:
            lr *= schedule[epoch]
        perm = rng.permutation(train_set.n)
        for start in range(0, train_set.n, cfg.batch_size):
            mb = train_set.subset(perm[start:start + cfg.batch_size])
            state = forward(graph, params, mb, mode="train", rng=rng)
            grads = backward(graph, params, mb, state)
            for nid, g in grads.weights.items():
                if nid == graph.root and cfg.weight_decay > 0.0:
                    g = g + cfg.weight_decay * params.weights[nid]
                v = vel_w[nid]
                v *= cfg.momentum
                v -= lr * g
                params.weights[nid] += v
            for nid, g in grads.biases.items():
                v = vel_b[nid]
                v *= cfg.momentum
                v -= lr * g
                params.biases[nid] += v
    return params


def test_a9_degenerate_config_is_bitwise_vanilla_sgd(mnist_data):
    train_set, _ = mnist_data
    subset = train_set.subset(slice(0, 640))
    g = build_mlp(784, (64, 64), 10, residual=True, combine="sum")
    cfg = TrainConfig(
        epochs=3, batch_size=64, momentum=0.9, lr=0.05,
        lr_schedule=((2, 0.5),), weight_decay=0.0005,
        beta=0.0, parseval=True, adversarial=False,
        seed=23, reproducible=True, hidden=(64, 64), residual=True,
    )
    ckpt, _ = train(g, cfg, subset)
    ref = _vanilla_sgd_reference(g, cfg, subset)
    same = all(
        np.array_equal(ckpt.params.weights[nid], ref.weights[nid]) for nid in ref.weights
    ) and all(
        np.array_equal(ckpt.params.biases[nid], ref.biases[nid]) for nid in ref.biases
    )
    alphas_fixed = all(
        np.array_equal(ckpt.params.alphas[nid], np.ones(len(g.nodes[nid].children)))
        for nid in g.aggregate_node_ids()
    )
    n_params = len(ref.weights) + len(ref.biases)
    _scoreboard(
        same and alphas_fixed,
        "A9 degenerate-config equivalence",
        f"beta=0 sum-aggregation run is bit-identical to the reference loop "
        f"across {n_params} parameter arrays; sum coefficients untouched: {alphas_fixed}",
    )
