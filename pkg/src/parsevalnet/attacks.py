"""Gradient-based adversarial example generation and SNR bookkeeping."""

import math
from dataclasses import dataclass

import numpy as np

from .graph import Batch, Graph, Params, backward, forward


@dataclass
class AttackSpec:
    """Attack configuration: norm ball, budget, and iteration schedule.

    ``norm`` is "inf" or "l2". One-step attacks (iterations=1) move by the
    full budget; iterative attacks take ``step_size`` moves (default
    epsilon / iterations) and re-project onto the epsilon ball after each.
    ``clamp`` bounds the valid input range, e.g. (0, 1) for pixel data.
    """

    norm: str
    epsilon: float
    iterations: int = 1
    step_size: float | None = None
    clamp: tuple[float, float] | None = None

    def __post_init__(self):
        if self.norm not in ("inf", "l2"):
            raise ValueError(f"norm must be 'inf' or 'l2', got {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_size is None:
            self.step_size = self.epsilon if self.iterations == 1 else self.epsilon / self.iterations
        if self.step_size > self.epsilon + 1e-12:
            raise ValueError("step_size must not exceed epsilon")


def fgsm(graph: Graph, params: Params, batch: Batch, spec: AttackSpec):
    """Fast-gradient-family attack maximizing the loss of the true labels.

    One step under the max-norm is the classic sign attack
    x + epsilon * sign(grad); under the 2-norm the step follows the
    normalized gradient (the exact maximizer of the linearized loss on the
    epsilon ball). Iterative mode repeats with ``step_size`` and projects
    back onto the ball. Returns ``(perturbed_batch, zero_grad_rows)``
    where the boolean mask flags rows whose gradient vanished in every
    iteration (those rows are returned unchanged).
    """
    x0 = batch.inputs
    xt = x0.copy()
    moved = np.zeros(batch.n, dtype=bool)
    for _ in range(spec.iterations):
        state = forward(graph, params, Batch(xt, batch.labels), mode="eval")
        g = backward(graph, params, Batch(xt, batch.labels), state).input
        if spec.norm == "inf":
            step = np.sign(g)
        else:
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            step = np.divide(g, norms, out=np.zeros_like(g), where=norms > 0)
        nonzero = np.abs(g).sum(axis=1) > 0
        moved |= nonzero
        xt[nonzero] += spec.step_size * step[nonzero]
        delta = xt - x0
        if spec.norm == "inf":
            delta = np.clip(delta, -spec.epsilon, spec.epsilon)
        else:
            norms = np.linalg.norm(delta, axis=1, keepdims=True)
            over = norms[:, 0] > spec.epsilon
            if over.any():
                delta[over] *= spec.epsilon / norms[over]
        xt = x0 + delta
        if spec.clamp is not None:
            xt = np.clip(xt, spec.clamp[0], spec.clamp[1])
    return Batch(xt, batch.labels), ~moved


def snr(x: np.ndarray, delta: np.ndarray) -> float:
    """Signal-to-noise ratio 20 log10(|x| / |delta|) in decibels.

    A zero perturbation returns +inf.
    """
    nx = float(np.linalg.norm(x))
    nd = float(np.linalg.norm(delta))
    if nd == 0.0:
        return math.inf
    if nx == 0.0:
        return -math.inf
    return 20.0 * math.log10(nx / nd)


def epsilon_for_snr(inputs: np.ndarray, snr_db: float) -> float:
    """Sign-attack budget that lands near a target SNR on this data.

    A full sign perturbation in D dimensions has 2-norm epsilon * sqrt(D),
    so epsilon = mean|x| / (sqrt(D) * 10^(snr/20)).
    """
    mean_norm = float(np.mean(np.linalg.norm(inputs, axis=1)))
    return mean_norm / (math.sqrt(inputs.shape[1]) * 10.0 ** (snr_db / 20.0))


def adversarial_batch(
    graph: Graph,
    params: Params,
    batch: Batch,
    rng: np.random.Generator,
    sigma: float = 2.0,
    truncate: float = 2.0,
    clamp: tuple[float, float] | None = None,
) -> Batch:
    """Replace half of a minibatch with one-step sign-attack versions.

    The perturbed half is chosen uniformly; the budget for the whole
    minibatch is |N(0, sigma^2)| rejection-sampled to at most
    ``truncate`` standard deviations. Labels stay the ground truth (the
    one-step attack avoids label leaking).
    """
    if batch.n < 2:
        raise ValueError("adversarial_batch needs at least 2 rows")
    rows = rng.choice(batch.n, size=batch.n // 2, replace=False)
    while True:
        eps = rng.normal(0.0, sigma)
        if abs(eps) <= truncate * sigma:
            break
    eps = abs(eps)
    inputs = batch.inputs.copy()
    if eps > 0.0:
        sub = batch.subset(rows)
        adv, _ = fgsm(graph, params, sub, AttackSpec(norm="inf", epsilon=eps, clamp=clamp))
        inputs[rows] = adv.inputs
    return Batch(inputs, batch.labels.copy())
