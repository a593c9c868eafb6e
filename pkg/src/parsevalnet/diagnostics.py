"""Model analyses: weight spectra and local covariance dimension."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .graph import Params
from .linalg import singular_values


@dataclass
class SpectrumHistogram:
    """Histogram of one weight matrix's singular values, with summary stats."""

    node_id: str
    edges: np.ndarray
    counts: np.ndarray
    sigma_min: float
    sigma_max: float
    sigma_mean: float


def spectrum_histogram(params: Params, node_id: str, bins: int = 50) -> SpectrumHistogram:
    """Histogram over the singular values of a node's weight matrix."""
    if node_id not in params.weights:
        raise ValueError(f"node {node_id!r} has no weight matrix")
    sv = singular_values(params.weights[node_id])
    counts, edges = np.histogram(sv, bins=bins)
    return SpectrumHistogram(
        node_id=node_id,
        edges=edges,
        counts=counts,
        sigma_min=float(sv.min()),
        sigma_max=float(sv.max()),
        sigma_mean=float(sv.mean()),
    )


@dataclass
class CovarianceDimension:
    """Directions needed to reach the variance threshold.

    ``p`` counts eigen-directions of the uncentered activation covariance
    whose cumulative spectrum reaches the threshold; ``fraction`` is
    p / d. Per-class results are present when labels were supplied;
    classes with fewer than 2 rows are skipped and listed.
    """

    p: int
    d: int
    fraction: float
    per_class: dict[int, int] | None = None
    class_mean: float | None = None
    skipped_classes: list[int] | None = None


def local_cov_dim(
    activations: np.ndarray,
    threshold: float = 0.99,
    labels: np.ndarray | None = None,
) -> CovarianceDimension:
    """Smallest p with the top-p covariance eigenvalues >= threshold of the total.

    The covariance is the uncentered second moment (1/n) sum phi phi^T.
    Eigenvalues below numerical noise are treated as zero, so a threshold
    of 1.0 returns the numerical rank. Invariant to global scaling of the
    activations.
    """
    phi = np.asarray(activations, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[0] < 2:
        raise DimensionError("activations must be (n, d) with n >= 2")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    if phi.shape[1] > 4096:
        raise DimensionError("activation dimension exceeds the 4096 cap")

    p = _spectrum_dim(phi, threshold)
    d = phi.shape[1]
    result = CovarianceDimension(p=p, d=d, fraction=p / d)
    if labels is not None:
        labels = np.asarray(labels)
        per_class: dict[int, int] = {}
        skipped: list[int] = []
        for c in np.unique(labels):
            rows = phi[labels == c]
            if rows.shape[0] < 2:
                skipped.append(int(c))
                continue
            per_class[int(c)] = _spectrum_dim(rows, threshold)
        result.per_class = per_class
        result.class_mean = float(np.mean(list(per_class.values()))) if per_class else float("nan")
        result.skipped_classes = skipped
    return result


def _spectrum_dim(phi: np.ndarray, threshold: float) -> int:
    cov = (phi.T @ phi) / phi.shape[0]
    evals = np.linalg.eigvalsh(cov)[::-1]
    evals = np.clip(evals, 0.0, None)
    if evals[0] == 0.0:
        return 0
    evals[evals < evals[0] * cov.shape[0] * np.finfo(float).eps] = 0.0
    total = evals.sum()
    cum = np.cumsum(evals)
    target = threshold * total * (1.0 - 1e-12)
    return int(np.searchsorted(cum, target) + 1)
