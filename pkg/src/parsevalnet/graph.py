"""Computation-graph model: typed nodes, forward evaluation, backprop.

A network is a single-root DAG. Each node computes a function of its
children (the nodes feeding it); the root's output are the class logits.
Activations are batched row-wise: every node produces a (batch, width)
array. Convolutional nodes view each row as a row-major (positions,
channels) sequence / (height, width, channels) image.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, GraphError

NODE_KINDS = ("input", "dense", "conv1d", "conv2d", "relu", "dropout", "aggregate")
AGGREGATE_MODES = ("convex", "sum")


@dataclass(frozen=True)
class NodeSpec:
    """Static description of one graph node.

    ``d_in``/``d_out`` are the full vector widths for dense nodes and the
    channel counts for conv nodes (spatial extent is inferred from the
    child for conv1d and given by ``input_hw`` for conv2d). ``rescale``
    multiplies conv outputs; tight-frame conv layers set it to
    window_size**-0.5 so their 2-norm gain stays at the spectral norm of
    the kernel matrix.
    """

    id: str
    kind: str
    children: tuple[str, ...] = ()
    d_in: int = 0
    d_out: int = 0
    k: int = 0                                  # conv1d half-width (kernel width 2k+1)
    kernel_hw: tuple[int, int] | None = None    # conv2d kernel size (odd, odd)
    input_hw: tuple[int, int] | None = None     # conv2d input spatial size
    rate: float = 0.0                           # dropout probability
    combine: str = "convex"                     # aggregate mode
    rescale: float = 1.0                        # conv output multiplier

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise GraphError(f"unknown node kind {self.kind!r}")
        object.__setattr__(self, "children", tuple(self.children))

    @property
    def window_size(self) -> int:
        if self.kind == "conv1d":
            return 2 * self.k + 1
        if self.kind == "conv2d":
            return self.kernel_hw[0] * self.kernel_hw[1]
        raise GraphError(f"node {self.id!r} ({self.kind}) has no window")

    def weight_shape(self) -> tuple[int, int]:
        if self.kind == "dense":
            return (self.d_out, self.d_in)
        if self.kind in ("conv1d", "conv2d"):
            return (self.d_out, self.window_size * self.d_in)
        raise GraphError(f"node {self.id!r} ({self.kind}) has no weight")


class Graph:
    """Validated single-root DAG of :class:`NodeSpec`.

    Construction checks acyclicity, the single-root property, arities,
    and width consistency, and caches a topological order (children
    before parents) plus every node's output width.
    """

    def __init__(self, nodes):
        nodes = list(nodes)
        self.nodes: dict[str, NodeSpec] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise GraphError(f"duplicate node id {n.id!r}")
            self.nodes[n.id] = n
        for n in nodes:
            for c in n.children:
                if c not in self.nodes:
                    raise GraphError(f"node {n.id!r} references missing child {c!r}")
        self.topo_order = self._topo_sort(nodes)
        self.root = self._find_root(nodes)
        self._widths: dict[str, int] = {}
        self._validate_and_size()

    def _topo_sort(self, nodes) -> tuple[str, ...]:
        # Kahn's algorithm over child -> parent edges; leftover nodes mean a
        # cycle. Ties break lexicographically so the order is a canonical
        # property of the graph, independent of construction order.
        indeg = {n.id: len(n.children) for n in nodes}
        parents: dict[str, list[str]] = {n.id: [] for n in nodes}
        for n in nodes:
            for c in n.children:
                parents[c].append(n.id)
        ready = sorted((nid for nid, d in indeg.items() if d == 0), reverse=True)
        order = []
        while ready:
            nid = ready.pop()
            order.append(nid)
            newly = []
            for p in parents[nid]:
                indeg[p] -= 1
                if indeg[p] == 0:
                    newly.append(p)
            if newly:
                ready.extend(newly)
                ready.sort(reverse=True)
        if len(order) != len(nodes):
            raise GraphError("graph contains a cycle")
        return tuple(order)

    def _find_root(self, nodes) -> str:
        is_child = set()
        for n in nodes:
            is_child.update(n.children)
        roots = [n.id for n in nodes if n.id not in is_child]
        if len(roots) != 1:
            raise GraphError(f"expected exactly one root, found {sorted(roots)}")
        return roots[0]

    def _validate_and_size(self):
        input_nodes = []
        for nid in self.topo_order:
            n = self.nodes[nid]
            if n.kind == "input":
                if n.children:
                    raise GraphError(f"input node {nid!r} cannot have children")
                if n.d_out < 1:
                    raise GraphError(f"input node {nid!r} needs d_out >= 1")
                input_nodes.append(nid)
                self._widths[nid] = n.d_out
                continue
            if not n.children:
                raise GraphError(f"non-input node {nid!r} has no children")
            child_widths = [self._widths[c] for c in n.children]
            if n.kind == "dense":
                self._require_single_child(n)
                if child_widths[0] != n.d_in:
                    raise GraphError(
                        f"dense node {nid!r}: child width {child_widths[0]} != d_in {n.d_in}"
                    )
                self._widths[nid] = n.d_out
            elif n.kind == "conv1d":
                self._require_single_child(n)
                if n.k < 0:
                    raise GraphError(f"conv1d node {nid!r}: negative half-width")
                if n.d_in < 1 or child_widths[0] % n.d_in != 0:
                    raise GraphError(
                        f"conv1d node {nid!r}: child width {child_widths[0]} is not a"
                        f" multiple of d_in {n.d_in}"
                    )
                self._widths[nid] = (child_widths[0] // n.d_in) * n.d_out
            elif n.kind == "conv2d":
                self._require_single_child(n)
                if n.kernel_hw is None or n.input_hw is None:
                    raise GraphError(f"conv2d node {nid!r} needs kernel_hw and input_hw")
                kh, kw = n.kernel_hw
                if kh % 2 != 1 or kw % 2 != 1:
                    raise GraphError(f"conv2d node {nid!r}: kernel dims must be odd")
                h, wdt = n.input_hw
                if child_widths[0] != h * wdt * n.d_in:
                    raise GraphError(
                        f"conv2d node {nid!r}: child width {child_widths[0]} != "
                        f"{h}x{wdt}x{n.d_in}"
                    )
                self._widths[nid] = h * wdt * n.d_out
            elif n.kind in ("relu", "dropout"):
                self._require_single_child(n)
                if n.kind == "dropout" and not 0.0 <= n.rate < 1.0:
                    raise GraphError(f"dropout node {nid!r}: rate must be in [0, 1)")
                self._widths[nid] = child_widths[0]
            elif n.kind == "aggregate":
                if len(n.children) < 2:
                    raise GraphError(f"aggregate node {nid!r} needs >= 2 children")
                if len(set(child_widths)) != 1:
                    raise GraphError(
                        f"aggregate node {nid!r}: child widths differ: {child_widths}"
                    )
                if n.combine not in AGGREGATE_MODES:
                    raise GraphError(f"aggregate node {nid!r}: bad combine {n.combine!r}")
                self._widths[nid] = child_widths[0]
        if len(input_nodes) != 1:
            raise GraphError(f"expected exactly one input node, found {len(input_nodes)}")
        self.input_id = input_nodes[0]

    @staticmethod
    def _require_single_child(n: NodeSpec):
        if len(n.children) != 1:
            raise GraphError(f"{n.kind} node {n.id!r} must have exactly one child")

    def width(self, node_id: str) -> int:
        return self._widths[node_id]

    def weight_node_ids(self) -> list[str]:
        return [nid for nid in self.topo_order if self.nodes[nid].kind in ("dense", "conv1d", "conv2d")]

    def hidden_weight_node_ids(self) -> list[str]:
        """Weight-bearing nodes other than the root (the output layer)."""
        return [nid for nid in self.weight_node_ids() if nid != self.root]

    def aggregate_node_ids(self) -> list[str]:
        return [nid for nid in self.topo_order if self.nodes[nid].kind == "aggregate"]


@dataclass
class Batch:
    """A batch of examples: inputs (batch, dim) and integer class labels.

    Labels are 0-based class indices (so an MNIST digit equals its label).
    """

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise DimensionError(f"inputs must be 2-d, got {self.inputs.ndim}-d")
        if self.inputs.shape[0] == 0:
            raise DimensionError("batch is empty")
        if self.labels.shape != (self.inputs.shape[0],):
            raise DimensionError(
                f"labels shape {self.labels.shape} does not match batch size {self.inputs.shape[0]}"
            )
        if (self.labels < 0).any():
            raise DimensionError("labels must be nonnegative class indices")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


@dataclass
class Params:
    """Learnable parameters keyed by node id."""

    weights: dict[str, np.ndarray] = field(default_factory=dict)
    biases: dict[str, np.ndarray] = field(default_factory=dict)
    alphas: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "Params":
        return Params(
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.biases.items()},
            {k: v.copy() for k, v in self.alphas.items()},
        )


def tight_frame_init(d_out: int, d_in: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal init for a (d_out, d_in) weight.

    Rows are orthonormal when d_out <= d_in, columns otherwise (the
    transpose convention for wide matrices).
    """
    from .linalg import orthonormal_rows_init

    if d_out <= d_in:
        return orthonormal_rows_init(d_out, d_in, rng)
    return orthonormal_rows_init(d_in, d_out, rng).T.copy()


def init_params(graph: Graph, rng: np.random.Generator, orthonormal_hidden: bool = False) -> Params:
    """Initialize all parameters, drawing in topological order.

    Hidden weight layers get a tight-frame (orthonormal) init when
    ``orthonormal_hidden`` is set, otherwise fan-in-scaled Gaussians; the
    output layer always uses the Gaussian init. Biases start at zero.
    Convex aggregates start uniform on the simplex; sum aggregates are
    fixed all-ones.
    """
    params = Params()
    for nid in graph.topo_order:
        n = graph.nodes[nid]
        if n.kind in ("dense", "conv1d", "conv2d"):
            shape = n.weight_shape()
            if orthonormal_hidden and nid != graph.root:
                params.weights[nid] = tight_frame_init(shape[0], shape[1], rng)
            else:
                params.weights[nid] = rng.standard_normal(shape) / np.sqrt(shape[1])
            params.biases[nid] = np.zeros(n.d_out)
        elif n.kind == "aggregate":
            kk = len(n.children)
            params.alphas[nid] = np.full(kk, 1.0 / kk) if n.combine == "convex" else np.ones(kk)
    return params


# ---------------------------------------------------------------------------
# forward


@dataclass
class ForwardState:
    """Per-node activations plus the dropout masks drawn in train mode."""

    activations: dict[str, np.ndarray]
    dropout_masks: dict[str, np.ndarray]
    root: str

    @property
    def logits(self) -> np.ndarray:
        return self.activations[self.root]


def unfold(z: np.ndarray, k: int) -> np.ndarray:
    """Sliding-window layout of a (T, d_in) sequence for half-width ``k``.

    Column j stacks the window [z_{j-k}; ...; z_{j+k}] (position-major,
    channels within each position), with zeros outside the sequence.
    Result shape: ((2k+1) * d_in, T).
    """
    if k < 0:
        raise DimensionError("half-width k must be >= 0")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    t, d = z.shape
    padded = np.zeros((t + 2 * k, d))
    padded[k:k + t] = z
    cols = np.empty(((2 * k + 1) * d, t))
    for j in range(t):
        cols[:, j] = padded[j:j + 2 * k + 1].reshape(-1)
    return cols


def _unfold_batch_1d(x: np.ndarray, t: int, d_in: int, k: int) -> np.ndarray:
    """(B, T*d_in) rows -> (B, T, (2k+1)*d_in) windows, zero padded."""
    b = x.shape[0]
    z = x.reshape(b, t, d_in)
    padded = np.zeros((b, t + 2 * k, d_in))
    padded[:, k:k + t] = z
    windows = np.stack([padded[:, o:o + t] for o in range(2 * k + 1)], axis=2)
    return windows.reshape(b, t, (2 * k + 1) * d_in)


def _fold_batch_1d(g: np.ndarray, t: int, d_in: int, k: int) -> np.ndarray:
    """Adjoint of :func:`_unfold_batch_1d`: scatter-add windows back."""
    b = g.shape[0]
    gw = g.reshape(b, t, 2 * k + 1, d_in)
    gpad = np.zeros((b, t + 2 * k, d_in))
    for o in range(2 * k + 1):
        gpad[:, o:o + t] += gw[:, :, o]
    return gpad[:, k:k + t].reshape(b, t * d_in)


def _unfold_batch_2d(x, h, w, d_in, kh, kw):
    b = x.shape[0]
    ph, pw = kh // 2, kw // 2
    z = x.reshape(b, h, w, d_in)
    padded = np.zeros((b, h + 2 * ph, w + 2 * pw, d_in))
    padded[:, ph:ph + h, pw:pw + w] = z
    windows = np.stack(
        [padded[:, oy:oy + h, ox:ox + w] for oy in range(kh) for ox in range(kw)], axis=3
    )
    return windows.reshape(b, h * w, kh * kw * d_in)


def _fold_batch_2d(g, h, w, d_in, kh, kw):
    b = g.shape[0]
    ph, pw = kh // 2, kw // 2
    gw = g.reshape(b, h, w, kh * kw, d_in)
    gpad = np.zeros((b, h + 2 * ph, w + 2 * pw, d_in))
    i = 0
    for oy in range(kh):
        for ox in range(kw):
            gpad[:, oy:oy + h, ox:ox + w] += gw[:, :, :, i]
            i += 1
    return gpad[:, ph:ph + h, pw:pw + w].reshape(b, h * w * d_in)


def forward(
    graph: Graph,
    params: Params,
    batch: Batch,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> ForwardState:
    """Evaluate the graph on a batch; returns all activations.

    ``mode`` is "train" or "eval". Train mode draws inverted-scaling
    dropout masks from ``rng`` (masks are recorded so backprop and
    repeated evaluation reuse them); eval mode makes dropout the identity.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    acts: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}
    for nid in graph.topo_order:
        n = graph.nodes[nid]
        if n.kind == "input":
            if batch.inputs.shape[1] != n.d_out:
                raise DimensionError(
                    f"input width {batch.inputs.shape[1]} != input node d_out {n.d_out}"
                )
            acts[nid] = batch.inputs
        elif n.kind == "dense":
            x = acts[n.children[0]]
            acts[nid] = x @ params.weights[nid].T + params.biases[nid]
        elif n.kind == "conv1d":
            x = acts[n.children[0]]
            t = graph.width(n.children[0]) // n.d_in
            stacked = _unfold_batch_1d(x, t, n.d_in, n.k)
            y = n.rescale * (stacked @ params.weights[nid].T) + params.biases[nid]
            acts[nid] = y.reshape(x.shape[0], t * n.d_out)
        elif n.kind == "conv2d":
            x = acts[n.children[0]]
            (h, w), (kh, kw) = n.input_hw, n.kernel_hw
            stacked = _unfold_batch_2d(x, h, w, n.d_in, kh, kw)
            y = n.rescale * (stacked @ params.weights[nid].T) + params.biases[nid]
            acts[nid] = y.reshape(x.shape[0], h * w * n.d_out)
        elif n.kind == "relu":
            acts[nid] = np.maximum(acts[n.children[0]], 0.0)
        elif n.kind == "dropout":
            x = acts[n.children[0]]
            if mode == "train" and n.rate > 0.0:
                if rng is None:
                    raise ValueError("train-mode forward with dropout needs an rng")
                mask = (rng.random(x.shape) >= n.rate) / (1.0 - n.rate)
                masks[nid] = mask
                acts[nid] = x * mask
            else:
                acts[nid] = x
        elif n.kind == "aggregate":
            alpha = params.alphas[nid]
            out = alpha[0] * acts[n.children[0]]
            for i, c in enumerate(n.children[1:], start=1):
                out = out + alpha[i] * acts[c]
            acts[nid] = out
    return ForwardState(acts, masks, graph.root)


# ---------------------------------------------------------------------------
# loss


def log_loss(logits: np.ndarray, label: int) -> float:
    """Multiclass log-loss -z_y + log sum_j exp(z_j), max-stabilized."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise DimensionError("log_loss expects a logit vector over >= 2 classes")
    if not 0 <= label < z.size:
        raise DimensionError(f"label {label} out of range for {z.size} classes")
    m = z.max()
    return float(-z[label] + m + np.log(np.exp(z - m).sum()))


def batch_log_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean log-loss over the rows of a (batch, classes) logit matrix."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if (labels >= z.shape[1]).any():
        raise DimensionError("label out of range for logit width")
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    picked = z[np.arange(z.shape[0]), labels]
    return float(np.mean(lse - picked))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# backward


@dataclass
class Grads:
    """Gradients of the mean batch log-loss."""

    weights: dict[str, np.ndarray] = field(default_factory=dict)
    biases: dict[str, np.ndarray] = field(default_factory=dict)
    alphas: dict[str, np.ndarray] = field(default_factory=dict)
    input: np.ndarray | None = None


def backward(graph: Graph, params: Params, batch: Batch, state: ForwardState) -> Grads:
    """Exact gradients of the mean log-loss for every parameter and the input.

    ``state`` must come from :func:`forward` on the same batch. Dropout
    nodes replay their recorded masks; a state produced in eval mode
    treats dropout as identity (used by attack generation).
    """
    b = batch.n
    logits = state.logits
    if (batch.labels >= logits.shape[1]).any():
        raise DimensionError("label out of range for logit width")
    g_out = _softmax(logits)
    g_out[np.arange(b), batch.labels] -= 1.0
    g_out /= b

    grads = Grads()
    pending: dict[str, np.ndarray] = {graph.root: g_out}
    for nid in reversed(graph.topo_order):
        if nid not in pending:
            continue  # node does not influence the root
        g = pending.pop(nid)
        n = graph.nodes[nid]
        if n.kind == "input":
            grads.input = g if grads.input is None else grads.input + g
            continue
        if n.kind == "dense":
            x = state.activations[n.children[0]]
            grads.weights[nid] = g.T @ x
            grads.biases[nid] = g.sum(axis=0)
            _accumulate(pending, n.children[0], g @ params.weights[nid])
        elif n.kind == "conv1d":
            x = state.activations[n.children[0]]
            t = graph.width(n.children[0]) // n.d_in
            stacked = _unfold_batch_1d(x, t, n.d_in, n.k)
            gc = g.reshape(b * t, n.d_out)
            flat = stacked.reshape(b * t, -1)
            grads.weights[nid] = n.rescale * (gc.T @ flat)
            grads.biases[nid] = g.reshape(b, t, n.d_out).sum(axis=(0, 1))
            gs = n.rescale * (gc @ params.weights[nid])
            _accumulate(pending, n.children[0], _fold_batch_1d(gs.reshape(b, t, -1), t, n.d_in, n.k))
        elif n.kind == "conv2d":
            x = state.activations[n.children[0]]
            (h, w), (kh, kw) = n.input_hw, n.kernel_hw
            stacked = _unfold_batch_2d(x, h, w, n.d_in, kh, kw)
            hw = h * w
            gc = g.reshape(b * hw, n.d_out)
            flat = stacked.reshape(b * hw, -1)
            grads.weights[nid] = n.rescale * (gc.T @ flat)
            grads.biases[nid] = g.reshape(b, hw, n.d_out).sum(axis=(0, 1))
            gs = n.rescale * (gc @ params.weights[nid])
            _accumulate(
                pending, n.children[0], _fold_batch_2d(gs.reshape(b, hw, -1), h, w, n.d_in, kh, kw)
            )
        elif n.kind == "relu":
            x = state.activations[n.children[0]]
            _accumulate(pending, n.children[0], g * (x > 0.0))
        elif n.kind == "dropout":
            mask = state.dropout_masks.get(nid)
            _accumulate(pending, n.children[0], g if mask is None else g * mask)
        elif n.kind == "aggregate":
            alpha = params.alphas[nid]
            galpha = np.empty(len(n.children))
            for i, c in enumerate(n.children):
                galpha[i] = float((g * state.activations[c]).sum())
                _accumulate(pending, c, alpha[i] * g)
            grads.alphas[nid] = galpha
    return grads


def _accumulate(pending: dict, nid: str, g: np.ndarray):
    if nid in pending:
        pending[nid] = pending[nid] + g
    else:
        pending[nid] = g


def predict(graph: Graph, params: Params, batch: Batch) -> np.ndarray:
    """Predicted class per row: argmax of the logits, ties to the lowest index."""
    state = forward(graph, params, batch, mode="eval")
    return np.argmax(state.logits, axis=1)
