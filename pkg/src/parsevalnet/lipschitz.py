"""Static Lipschitz upper bounds propagated over the computation graph.

Per-node operator norms are composed along the DAG: the bound for a node
is its own gain times (for aggregates: a coefficient-weighted sum of) the
bounds of its children. Biases are translations and do not enter;
dropout is analyzed in eval mode where it is the identity.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .graph import Batch, Graph, NodeSpec, Params, forward
from .linalg import inf_operator_norm, singular_values, spectral_norm


def _sigma_max(w: np.ndarray) -> float:
    # Power iteration stalls when the leading singular values cluster
    # (typical for trained tight-frame layers, where they all sit near 1);
    # the exact eigensolver is the right tool there.
    try:
        return spectral_norm(w)
    except ConvergenceError:
        return float(singular_values(w)[0])


@dataclass
class LipschitzReport:
    """Per-node and whole-network bounds for one norm.

    ``per_node`` maps node id to the cumulative bound of that node as a
    function of the network input; ``node_factor`` holds the single-node
    gain for weight-bearing nodes. ``root`` is the network bound.
    """

    per_node: dict[str, float]
    node_factor: dict[str, float]
    root: float
    norm: str


def node_constant(node: NodeSpec, params: Params, norm: str) -> float:
    """Lipschitz gain of a single node with respect to its (sole) child.

    Dense layers use the operator norm of the weight; conv layers account
    for the window repetition (a factor sqrt(window) in the 2-norm,
    nothing in the max-norm) and the node's output rescale. ReLU and
    dropout are 1-Lipschitz. Aggregates have no single gain (their edge
    coefficients live in graph_bound) and are rejected here.
    """
    _check_norm(norm)
    if node.kind == "dense":
        w = params.weights[node.id]
        return _sigma_max(w) if norm == "l2" else inf_operator_norm(w)
    if node.kind in ("conv1d", "conv2d"):
        w = params.weights[node.id]
        if norm == "l2":
            return math.sqrt(node.window_size) * _sigma_max(w) * node.rescale
        return inf_operator_norm(w) * node.rescale
    if node.kind in ("relu", "dropout"):
        return 1.0
    if node.kind == "input":
        return 1.0
    raise ValueError(f"no single-node constant for kind {node.kind!r}; use graph_bound")


def graph_bound(graph: Graph, params: Params, norm: str) -> LipschitzReport:
    """Propagate per-node bounds from the input to the root.

    The input node has constant 1; aggregates contribute the sum of
    |alpha_i| times each child's bound (all-ones alphas make that the
    plain residual sum).
    """
    _check_norm(norm)
    lam: dict[str, float] = {}
    factors: dict[str, float] = {}
    for nid in graph.topo_order:
        n = graph.nodes[nid]
        if n.kind == "input":
            lam[nid] = 1.0
        elif n.kind == "aggregate":
            alpha = params.alphas[nid]
            lam[nid] = float(sum(abs(alpha[i]) * lam[c] for i, c in enumerate(n.children)))
        else:
            c = node_constant(n, params, norm)
            if n.kind in ("dense", "conv1d", "conv2d"):
                factors[nid] = c
            lam[nid] = c * lam[n.children[0]]
    return LipschitzReport(per_node=lam, node_factor=factors, root=lam[graph.root], norm=norm)


def empirical_gap_check(
    graph: Graph,
    params: Params,
    pairs,
    norm: str,
    report: LipschitzReport | None = None,
    slack: float = 1e-6,
) -> int:
    """Count input pairs that violate the propagated bound (must be zero).

    ``pairs`` is either an iterable of (x, x_tilde) vectors or a tuple of
    two equally-shaped (n, dim) matrices.
    """
    _check_norm(norm)
    if report is None:
        report = graph_bound(graph, params, norm)
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.asarray(pairs[0]).ndim == 2:
        xs, xts = (np.asarray(p, dtype=np.float64) for p in pairs)
    else:
        pair_list = list(pairs)
        xs = np.array([p[0] for p in pair_list], dtype=np.float64)
        xts = np.array([p[1] for p in pair_list], dtype=np.float64)
    ord_ = np.inf if norm == "inf" else 2
    dummy = np.zeros(xs.shape[0], dtype=np.int64)
    out_a = forward(graph, params, Batch(xs, dummy), mode="eval").logits
    out_b = forward(graph, params, Batch(xts, dummy), mode="eval").logits
    out_gap = np.linalg.norm(out_a - out_b, ord=ord_, axis=1)
    in_gap = np.linalg.norm(xs - xts, ord=ord_, axis=1)
    return int(np.sum(out_gap > report.root * in_gap + slack))


def _check_norm(norm: str):
    if norm not in ("l2", "inf"):
        raise ValueError(f"norm must be 'l2' or 'inf', got {norm!r}")
