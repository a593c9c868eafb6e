"""Tight-frame constraint machinery.

Two mechanisms keep hidden layers 1-Lipschitz during training: a cheap
retraction pulling weight matrices back toward orthonormal rows, and the
Euclidean projection of aggregation coefficients onto the probability
simplex. Both run after every optimizer step.
"""

import math

import numpy as np


def retraction_step(w: np.ndarray, beta: float, row_subset=None) -> np.ndarray:
    """One approximate-orthonormalization step W <- (1+b)W - b W W^T W.

    The update maps each singular value by s -> s * (1 + beta - beta*s^2),
    whose fixed point is 1; it contracts toward 1 for s in
    (0, sqrt((1+beta)/beta)) and sign-flips (and can diverge) beyond that,
    so keep singular values well inside that basin. With ``row_subset``
    the update touches only the selected rows, using the subset's own
    Gram matrix (the Monte Carlo variant; cost O(|S|^2 d)).

    Returns a new array; the input is not modified.
    """
    w = np.asarray(w, dtype=np.float64)
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    if row_subset is None:
        return (1.0 + beta) * w - beta * (w @ w.T @ w)
    idx = np.asarray(row_subset)
    if idx.size != np.unique(idx).size:
        raise ValueError("row_subset contains duplicate indices")
    if idx.size and (idx.min() < 0 or idx.max() >= w.shape[0]):
        raise ValueError("row_subset index out of range")
    out = w.copy()
    ws = w[idx]
    out[idx] = (1.0 + beta) * ws - beta * (ws @ ws.T @ ws)
    return out


def parseval_gap(w: np.ndarray) -> float:
    """Frobenius distance of the (smaller-side) Gram matrix from identity.

    For a tall matrix the Gram is W^T W, otherwise W W^T, so a tight frame
    in either orientation scores 0.
    """
    w = np.asarray(w, dtype=np.float64)
    gram = w @ w.T if w.shape[0] <= w.shape[1] else w.T @ w
    gram = gram - np.eye(gram.shape[0])
    return float(np.linalg.norm(gram))


def parseval_penalty(w: np.ndarray, beta: float) -> float:
    """Regularizer value (beta/2) * parseval_gap(w)^2."""
    return 0.5 * beta * parseval_gap(w) ** 2


def sample_row_subset(num_rows: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ceil(fraction * num_rows) distinct row indices, sorted."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    m = math.ceil(fraction * num_rows)
    return np.sort(rng.choice(num_rows, size=m, replace=False))


def simplex_project(alpha: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sort-based soft thresholding: with entries sorted descending, find the
    largest k such that 1 + k * a_(k) > sum_{j<=k} a_(j), subtract
    tau = (sum_{j<=k} a_(j) - 1) / k everywhere and clip at zero. The
    result is renormalized so the sum is exactly 1 up to float rounding.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ValueError("simplex_project expects a nonempty 1-d vector")
    if not np.isfinite(alpha).all():
        raise ValueError("simplex_project requires finite entries")
    s = np.sort(alpha)[::-1]
    csum = np.cumsum(s)
    ks = np.arange(1, alpha.size + 1)
    feasible = 1.0 + ks * s > csum
    k = int(ks[feasible][-1])
    tau = (csum[k - 1] - 1.0) / k
    out = np.maximum(alpha - tau, 0.0)
    return out / out.sum()


def conv_rescale(window_size: int) -> float:
    """Output multiplier window_size**-1/2 for constrained conv layers.

    ``window_size`` is the kernel width 2k+1 in 1-d, or the kernel area in
    2-d. With it, a tight-frame kernel matrix contributes a 2-norm gain
    of at most 1.
    """
    if window_size < 1:
        raise ValueError("window size must be >= 1")
    return float(window_size) ** -0.5
