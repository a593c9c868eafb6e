"""Constrained SGD training loop, evaluation, and robustness curves.

One optimizer step is: momentum SGD on all learnable parameters (weight
decay on the output layer only), then, in constrained mode, a retraction
step on every hidden weight matrix (on a sampled row subset) and a
simplex projection of every convex aggregation coefficient vector.
"""

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .attacks import adversarial_batch
from .constraints import parseval_gap, retraction_step, sample_row_subset, simplex_project
from .errors import TrainingDivergedError
from .graph import Batch, Graph, Params, backward, batch_log_loss, forward, init_params, predict
from .rng import make_rng

METRICS_HEADER = "epoch,train_loss,val_acc,mean_gap"


@dataclass
class TrainConfig:
    """All training hyperparameters (also the on-disk config file schema).

    ``lr_schedule`` lists (epoch, multiplier) pairs applied at the start
    of the given 0-based epoch. ``beta`` is the retraction strength (0
    disables retraction entirely). ``row_subset_fraction`` applies to
    dense hidden layers; conv layers are always retracted in full.
    ``parseval`` switches on the constrained regime: orthonormal hidden
    init, retraction, and simplex projection of convex aggregates.
    ``hidden``/``residual``/``dropout`` describe the MLP the CLI builds.
    ``reproducible`` documents the bit-identical contract; all reductions
    here are sequential, so runs with equal seeds match exactly either way.
    """

    epochs: int = 10
    batch_size: int = 100
    lr: float = 0.1
    lr_schedule: tuple[tuple[int, float], ...] = ()
    momentum: float = 0.0
    beta: float = 0.0
    row_subset_fraction: float = 1.0
    weight_decay: float = 0.0
    dropout: float = 0.0
    adversarial: bool = False
    adv_sigma: float = 2.0
    adv_truncate: float = 2.0
    input_clamp: tuple[float, float] | None = (0.0, 1.0)
    parseval: bool = False
    seed: int = 0
    reproducible: bool = True
    hidden: tuple[int, ...] = (256, 256)
    residual: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        for name in ("lr", "momentum", "weight_decay", "adv_sigma", "adv_truncate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must be in [0, 1)")
        if not 0.0 < self.row_subset_fraction <= 1.0:
            raise ValueError("row_subset_fraction must be in (0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        epochs = [e for e, _ in self.lr_schedule]
        if epochs != sorted(set(epochs)):
            raise ValueError("lr_schedule epochs must be strictly increasing")
        if any(m <= 0 for _, m in self.lr_schedule):
            raise ValueError("lr_schedule multipliers must be positive")
        self.lr_schedule = tuple((int(e), float(m)) for e, m in self.lr_schedule)
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def mlp_defaults(cls) -> "TrainConfig":
        """Fully-connected defaults: batch 100, 50 epochs, lr halved every
        10 epochs, 30% retraction row subsets."""
        return cls(
            epochs=50,
            batch_size=100,
            lr=0.1,
            lr_schedule=((10, 0.5), (20, 0.5), (30, 0.5), (40, 0.5)),
            momentum=0.0,
            beta=0.05,
            row_subset_fraction=0.3,
            weight_decay=0.0005,
            parseval=True,
        )

    @classmethod
    def conv_defaults(cls) -> "TrainConfig":
        """Wide-residual-convnet defaults: momentum 0.9, lr 0.1 scaled by
        0.2 at epochs 60/120/160, 200 epochs, batch 128, beta 3e-4."""
        return cls(
            epochs=200,
            batch_size=128,
            lr=0.1,
            lr_schedule=((60, 0.2), (120, 0.2), (160, 0.2)),
            momentum=0.9,
            beta=0.0003,
            row_subset_fraction=1.0,
            weight_decay=0.0005,
            dropout=0.3,
            parseval=True,
        )

    # -- flat key=value serialization ------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def to_file(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ",".join(f"{e}:{m!r}" for e, m in v)
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, raw: str):
    if key in ("epochs", "batch_size", "seed"):
        return int(raw)
    if key in ("lr", "momentum", "beta", "row_subset_fraction", "weight_decay",
               "dropout", "adv_sigma", "adv_truncate"):
        return float(raw)
    if key in ("adversarial", "parseval", "reproducible", "residual"):
        if raw.lower() not in ("true", "false"):
            raise ValueError(f"{key}: expected true/false, got {raw!r}")
        return raw.lower() == "true"
    if key == "hidden":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if key == "lr_schedule":
        pairs = []
        for item in raw.split(","):
            item = item.strip()
            if not item:
                continue
            e, m = item.split(":")
            pairs.append((int(e), float(m)))
        return tuple(pairs)
    if key == "input_clamp":
        if raw.lower() == "none":
            return None
        lo, hi = (float(x) for x in raw.split(","))
        return (lo, hi)
    raise ValueError(f"unhandled config key {key!r}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_acc: float
    mean_gap: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.train_loss!r},{self.val_acc!r},{self.mean_gap!r}"


@dataclass
class Checkpoint:
    """Everything needed to resume or analyze a run."""

    graph: Graph
    params: Params
    velocity: Params
    config: TrainConfig
    epoch: int
    rng_state: dict


def train(
    graph: Graph,
    config: TrainConfig,
    train_set: Batch,
    val_set: Batch | None = None,
    params: Params | None = None,
    metrics_stream=None,
) -> tuple[Checkpoint, list[EpochMetrics]]:
    """Run the full training loop; returns the final checkpoint and metrics.

    ``params`` may be supplied to continue from (or pin) an initial state;
    otherwise parameters are initialized from the config seed. A
    non-finite loss aborts with :class:`TrainingDivergedError` carrying
    the last end-of-epoch checkpoint. Per-epoch metric rows (epoch, mean
    train loss, validation accuracy, mean hidden-layer tightness gap) are
    also written to ``metrics_stream`` when given.
    """
    rng = make_rng(config.seed)
    if params is None:
        params = init_params(graph, rng, orthonormal_hidden=config.parseval)
    else:
        params = params.copy()

    hidden_ids = graph.hidden_weight_node_ids()
    convex_aggs = [
        nid for nid in graph.aggregate_node_ids() if graph.nodes[nid].combine == "convex"
    ]
    decay_ids = {graph.root} if graph.root in params.weights else set()

    velocity = Params(
        {k: np.zeros_like(v) for k, v in params.weights.items()},
        {k: np.zeros_like(v) for k, v in params.biases.items()},
        {
            k: np.zeros_like(v)
            for k, v in params.alphas.items()
            if graph.nodes[k].combine == "convex"
        },
    )

    if metrics_stream is not None:
        print(METRICS_HEADER, file=metrics_stream)
    metrics: list[EpochMetrics] = []
    last_good: Checkpoint | None = None
    lr = config.lr
    schedule = dict(config.lr_schedule)

    for epoch in range(config.epochs):
        if epoch in schedule:
            lr *= schedule[epoch]
        perm = rng.permutation(train_set.n)
        epoch_losses = []
        for start in range(0, train_set.n, config.batch_size):
            mb = train_set.subset(perm[start:start + config.batch_size])
            if config.adversarial and mb.n >= 2:
                mb = adversarial_batch(
                    graph, params, mb, rng,
                    sigma=config.adv_sigma, truncate=config.adv_truncate,
                    clamp=config.input_clamp,
                )
            state = forward(graph, params, mb, mode="train", rng=rng)
            loss = batch_log_loss(state.logits, mb.labels)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, minibatch offset {start}",
                    checkpoint=last_good,
                )
            grads = backward(graph, params, mb, state)
            _sgd_step(graph, params, velocity, grads, lr, config, decay_ids)
            if config.parseval and config.beta > 0.0:
                _retract_hidden(graph, params, hidden_ids, config, rng)
            if config.parseval:
                for nid in convex_aggs:
                    params.alphas[nid] = simplex_project(params.alphas[nid])
            epoch_losses.append(loss)

        row = EpochMetrics(
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)),
            val_acc=evaluate(graph, params, val_set) if val_set is not None else float("nan"),
            mean_gap=_mean_gap(params, hidden_ids),
        )
        metrics.append(row)
        if metrics_stream is not None:
            print(row.csv_row(), file=metrics_stream, flush=True)
        last_good = Checkpoint(
            graph=graph,
            params=params.copy(),
            velocity=velocity.copy(),
            config=config,
            epoch=epoch + 1,
            rng_state=rng.bit_generator.state,
        )
    return last_good, metrics


def _sgd_step(graph, params, velocity, grads, lr, config, decay_ids):
    mu = config.momentum
    for nid, g in grads.weights.items():
        if nid in decay_ids and config.weight_decay > 0.0:
            g = g + config.weight_decay * params.weights[nid]
        v = velocity.weights[nid]
        v *= mu
        v -= lr * g
        params.weights[nid] += v
    for nid, g in grads.biases.items():
        v = velocity.biases[nid]
        v *= mu
        v -= lr * g
        params.biases[nid] += v
    for nid, g in grads.alphas.items():
        if nid not in velocity.alphas:
            continue  # sum-mode aggregates have fixed coefficients
        v = velocity.alphas[nid]
        v *= mu
        v -= lr * g
        params.alphas[nid] += v


def _retract_hidden(graph, params, hidden_ids, config, rng):
    for nid in hidden_ids:
        w = params.weights[nid]
        transposed = w.shape[0] > w.shape[1]
        target = w.T if transposed else w
        is_conv = graph.nodes[nid].kind in ("conv1d", "conv2d")
        fraction = 1.0 if is_conv else config.row_subset_fraction
        subset = None
        if fraction < 1.0:
            subset = sample_row_subset(target.shape[0], fraction, rng)
        new = retraction_step(target, config.beta, subset)
        params.weights[nid] = new.T.copy() if transposed else new


def _mean_gap(params, hidden_ids) -> float:
    if not hidden_ids:
        return float("nan")
    return float(np.mean([parseval_gap(params.weights[nid]) for nid in hidden_ids]))


def evaluate(graph: Graph, params: Params, dataset: Batch, chunk: int = 1024) -> float:
    """Fraction of correctly predicted rows."""
    correct = 0
    for start in range(0, dataset.n, chunk):
        part = dataset.subset(slice(start, start + chunk))
        correct += int((predict(graph, params, part) == part.labels).sum())
    return correct / dataset.n


@dataclass
class CurvePoint:
    epsilon: float
    mean_snr: float
    accuracy: float


def robustness_curve(
    graph: Graph,
    params: Params,
    dataset: Batch,
    eps_list,
    norm: str,
    clamp: tuple[float, float] | None = None,
) -> list[CurvePoint]:
    """One-step attack accuracy and mean SNR for each budget.

    epsilon = 0 reports clean accuracy with an infinite SNR sentinel. The
    mean SNR is taken over rows that actually moved.
    """
    from .attacks import AttackSpec, fgsm, snr

    points = []
    for eps in eps_list:
        if eps == 0:
            points.append(CurvePoint(0.0, math.inf, evaluate(graph, params, dataset)))
            continue
        adv, _ = fgsm(graph, params, dataset, AttackSpec(norm=norm, epsilon=eps, clamp=clamp))
        deltas = adv.inputs - dataset.inputs
        moved = np.linalg.norm(deltas, axis=1) > 0
        if moved.any():
            snrs = [snr(x, d) for x, d in zip(dataset.inputs[moved], deltas[moved])]
            mean_snr = float(np.mean(snrs))
        else:
            mean_snr = math.inf
        acc = float((predict(graph, params, adv) == dataset.labels).mean())
        points.append(CurvePoint(float(eps), mean_snr, acc))
    return points
