"""Dense linear-algebra primitives.

All matrices are 2-d ``float64`` numpy arrays in row-major order; vectors
are 1-d ``float64`` arrays. Nothing here is performance-tuned beyond what
numpy gives for free: correctness and determinism first.
"""

import numpy as np

from .errors import ConvergenceError, DimensionError
from .rng import make_rng

# Fixed seed for the power-iteration start vector, so spectral_norm is a
# deterministic function of its matrix argument.
_POWER_ITERATION_SEED = 0x5EED


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def inf_operator_norm(w: np.ndarray) -> float:
    """Operator norm induced by the max-norm: largest row 1-norm."""
    w = _require_matrix(w, "inf_operator_norm")
    return float(np.abs(w).sum(axis=1).max())


def spectral_norm(w: np.ndarray, tol: float = 1e-12, max_iter: int = 1000) -> float:
    """Largest singular value of ``w`` by power iteration on the Gram matrix.

    Iterates on the smaller side of ``w`` and stops once the Rayleigh
    estimate changes by less than ``tol`` (relative) between iterations.
    The start vector comes from a fixed seeded generator, so the result is
    deterministic. Raises :class:`ConvergenceError` (carrying the last
    estimate) if ``max_iter`` is exhausted, which in practice only happens
    for nearly-degenerate leading singular values.
    """
    w = _require_matrix(w, "spectral_norm")
    if tol <= 0:
        raise ValueError("tol must be positive")
    # Iterate on the smaller dimension; gram(x) applies W^T W or W W^T.
    if w.shape[0] <= w.shape[1]:
        def gram(x):
            return w @ (w.T @ x)
        dim = w.shape[0]
    else:
        def gram(x):
            return w.T @ (w @ x)
        dim = w.shape[1]

    rng = make_rng(_POWER_ITERATION_SEED)
    x = rng.standard_normal(dim)
    x /= np.linalg.norm(x)

    sigma = 0.0
    for _ in range(max_iter):
        y = gram(x)
        lam = float(x @ y)
        sigma_new = np.sqrt(max(lam, 0.0))
        norm_y = np.linalg.norm(y)
        if norm_y == 0.0:
            return 0.0  # w maps the iterate (hence everything) to zero
        converged = abs(sigma_new - sigma) <= tol * max(sigma_new, np.finfo(float).tiny)
        sigma = sigma_new
        if converged:
            return sigma
        x = y / norm_y
    raise ConvergenceError(
        f"power iteration did not converge within {max_iter} iterations", estimate=sigma
    )


def singular_values(w: np.ndarray) -> np.ndarray:
    """All singular values of ``w`` in descending order.

    Computed as square roots of the eigenvalues of the smaller Gram matrix;
    the smaller side of ``w`` is capped at 4096.
    """
    w = _require_matrix(w, "singular_values")
    if min(w.shape) > 4096:
        raise DimensionError(f"matrix side {min(w.shape)} exceeds the 4096 cap")
    gram = w @ w.T if w.shape[0] <= w.shape[1] else w.T @ w
    evals = np.linalg.eigvalsh(gram)
    return np.sqrt(np.clip(evals, 0.0, None))[::-1]


def orthonormal_rows_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix with exactly orthonormal rows (W W^T = I).

    Draws a Gaussian matrix and runs modified Gram-Schmidt over the rows,
    with a second orthogonalization pass to push the Gram residual to
    machine precision. Requires ``rows <= cols``; for wide parameter
    matrices, orthonormalize the transpose instead. A numerically
    rank-deficient draw (probability ~0 for Gaussians) is resampled a few
    times before giving up.
    """
    if rows > cols:
        raise DimensionError(f"rows={rows} > cols={cols}; orthonormalize the transpose")
    if rows < 1 or cols < 1:
        raise DimensionError("rows and cols must be positive")
    for _ in range(5):
        w = rng.standard_normal((rows, cols))
        q = _gram_schmidt_rows(w)
        if q is not None:
            return q
    raise ConvergenceError("could not orthonormalize a Gaussian sample after 5 draws", estimate=float("nan"))


def _gram_schmidt_rows(w: np.ndarray) -> np.ndarray | None:
    """Modified Gram-Schmidt on rows; None if a row degenerates."""
    q = np.array(w, dtype=np.float64)
    n = q.shape[0]
    for i in range(n):
        v = q[i]
        for _ in range(2):  # re-orthogonalize: "twice is enough"
            if i > 0:
                v = v - q[:i].T @ (q[:i] @ v)
        norm = np.linalg.norm(v)
        if norm < 1e-8 * max(1.0, np.linalg.norm(w[i])):
            return None
        q[i] = v / norm
    return q


def _require_matrix(w: np.ndarray, op: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionError(f"{op} expects a 2-d array, got {w.ndim}-d")
    if w.size == 0:
        raise DimensionError(f"{op} expects a nonempty matrix")
    return w
