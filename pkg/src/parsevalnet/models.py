"""Graph builders for the architectures used in experiments and tests."""

from .graph import Graph, NodeSpec


def build_mlp(
    input_dim: int,
    hidden: tuple[int, ...],
    classes: int,
    dropout: float = 0.0,
    residual: bool = False,
    combine: str = "sum",
) -> Graph:
    """Fully connected classifier: input -> [dense -> relu (-> skip) (-> dropout)]* -> dense.

    With ``residual`` set, every hidden block whose width matches its
    input gets an aggregation node joining the block input and the ReLU
    output; ``combine`` picks the aggregation mode ("sum" for the
    residual-network convention, "convex" for simplex-constrained
    coefficients).
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    nodes = [NodeSpec(id="input", kind="input", d_out=input_dim)]
    prev, prev_width = "input", input_dim
    for i, width in enumerate(hidden, start=1):
        nodes.append(NodeSpec(id=f"dense{i}", kind="dense", children=(prev,), d_in=prev_width, d_out=width))
        nodes.append(NodeSpec(id=f"relu{i}", kind="relu", children=(f"dense{i}",)))
        top = f"relu{i}"
        if residual and width == prev_width:
            nodes.append(
                NodeSpec(id=f"skip{i}", kind="aggregate", children=(prev, top), combine=combine)
            )
            top = f"skip{i}"
        if dropout > 0.0:
            nodes.append(NodeSpec(id=f"drop{i}", kind="dropout", children=(top,), rate=dropout))
            top = f"drop{i}"
        prev, prev_width = top, width
    nodes.append(
        NodeSpec(id="output", kind="dense", children=(prev,), d_in=prev_width, d_out=classes)
    )
    return Graph(nodes)
