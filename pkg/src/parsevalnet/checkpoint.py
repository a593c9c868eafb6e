"""Binary checkpoint format: graph, parameters, optimizer state, config.

Layout (all integers little-endian u32 unless noted):

    magic            12 bytes  b"PARSEVALNET\\0"
    version          u32       currently 1
    epoch            u32
    config           u32 length + utf-8 key=value text
    node count       u32
    nodes            per node, topo order: u32 length + canonical JSON
    parameters       per node, topo order: flags byte (1=weight, 2=bias,
                     4=alpha), then each present array
    velocity flag    1 byte; if 1, a second parameter section
    rng state        u32 length + canonical JSON

Arrays are stored as u32 ndim, u32 dims, then little-endian float64
data. The encoding is canonical (sorted JSON keys, repr'd floats), so
save -> load -> save is byte-identical.
"""

import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .graph import Graph, NodeSpec, Params
from .training import Checkpoint, TrainConfig

MAGIC = b"PARSEVALNET\x00"
VERSION = 1

_FLAG_WEIGHT = 1
_FLAG_BIAS = 2
_FLAG_ALPHA = 4


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _write_block(out, data: bytes):
    out.write(struct.pack("<I", len(data)))
    out.write(data)


def _write_array(out, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    out.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        out.write(struct.pack("<I", d))
    out.write(arr.tobytes())


def _node_record(n: NodeSpec) -> dict:
    rec = asdict(n)
    rec["children"] = list(rec["children"])
    for key in ("kernel_hw", "input_hw"):
        if rec[key] is not None:
            rec[key] = list(rec[key])
    return rec


def _write_param_section(out, graph: Graph, params: Params):
    for nid in graph.topo_order:
        flags = 0
        if nid in params.weights:
            flags |= _FLAG_WEIGHT
        if nid in params.biases:
            flags |= _FLAG_BIAS
        if nid in params.alphas:
            flags |= _FLAG_ALPHA
        out.write(bytes([flags]))
        if flags & _FLAG_WEIGHT:
            _write_array(out, params.weights[nid])
        if flags & _FLAG_BIAS:
            _write_array(out, params.biases[nid])
        if flags & _FLAG_ALPHA:
            _write_array(out, params.alphas[nid])


def save_checkpoint(ckpt: Checkpoint, path):
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(struct.pack("<I", ckpt.epoch))
    _write_block(out, ckpt.config.to_text().encode())
    out.write(struct.pack("<I", len(ckpt.graph.topo_order)))
    for nid in ckpt.graph.topo_order:
        _write_block(out, _json_bytes(_node_record(ckpt.graph.nodes[nid])))
    _write_param_section(out, ckpt.graph, ckpt.params)
    if ckpt.velocity is not None:
        out.write(b"\x01")
        _write_param_section(out, ckpt.graph, ckpt.velocity)
    else:
        out.write(b"\x00")
    _write_block(out, _json_bytes(ckpt.rng_state))
    Path(path).write_bytes(out.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes for {what} at offset {self.pos}, "
                f"file has {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def block(self, what: str) -> bytes:
        return self.take(self.u32(what + " length"), what)

    def array(self, what: str) -> np.ndarray:
        ndim = self.u32(what + " ndim")
        if ndim > 8:
            raise CheckpointError(f"implausible array rank {ndim} for {what} at offset {self.pos - 4}")
        shape = tuple(self.u32(what + " dim") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(8 * count, what + " data")
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _read_param_section(r: _Reader, graph: Graph) -> Params:
    params = Params()
    for nid in graph.topo_order:
        flags = r.take(1, f"flags for node {nid!r}")[0]
        if flags & _FLAG_WEIGHT:
            params.weights[nid] = r.array(f"weight of {nid!r}")
        if flags & _FLAG_BIAS:
            params.biases[nid] = r.array(f"bias of {nid!r}")
        if flags & _FLAG_ALPHA:
            params.alphas[nid] = r.array(f"alpha of {nid!r}")
    return params


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    epoch = r.u32("epoch")
    config = TrainConfig.from_text(r.block("config").decode())
    n_nodes = r.u32("node count")
    nodes = []
    for i in range(n_nodes):
        rec = json.loads(r.block(f"node record {i}").decode())
        for key in ("kernel_hw", "input_hw"):
            if rec.get(key) is not None:
                rec[key] = tuple(rec[key])
        rec["children"] = tuple(rec["children"])
        nodes.append(NodeSpec(**rec))
    graph = Graph(nodes)
    params = _read_param_section(r, graph)
    has_velocity = r.take(1, "velocity flag")[0]
    velocity = _read_param_section(r, graph) if has_velocity else None
    rng_state = json.loads(r.block("rng state").decode())
    if r.pos != len(data):
        raise CheckpointError(f"trailing garbage after checkpoint at offset {r.pos}")
    return Checkpoint(
        graph=graph, params=params, velocity=velocity,
        config=config, epoch=epoch, rng_state=rng_state,
    )
