"""Forward definitions for GCN, SGC, GAT, and the edge-free MLP branch.

Forward passes take a Tape (or None for evaluation) and accept node
features either as a dense Tensor or as a constant SparseMatrix; wide
bag-of-words inputs stay sparse through the first layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import SparseMatrix, Segments, Tape, Tensor
from .graph import Graph
from .optim import glorot_uniform
from .rng import stream

MODEL_KINDS = ("gcn", "sgc", "gat", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor; shapes of all parameters follow from it."""

    kind: str
    in_dim: int
    num_classes: int
    layers: int = 2
    hidden: int = 64
    heads: int = 8
    out_heads: int = 1
    dropout: float = 0.5
    leaky_slope: float = 0.2
    sgc_hops: int = 2

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")

    def head_dim(self) -> int:
        return max(1, self.hidden // self.heads)


@dataclass
class ModelParams:
    """Ordered named tensors plus their architecture descriptor."""

    spec: ModelSpec
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self.tensors.items():
            t.value[...] = values[name]


def _layer_dims(spec: ModelSpec) -> list[int]:
    return [spec.in_dim] + [spec.hidden] * (spec.layers - 1) + [spec.num_classes]


def init_params(spec: ModelSpec, seed: int, namespace: str = "") -> ModelParams:
    """Glorot-uniform weights, zero biases.

    Each tensor draws from its own named stream, so initialization is
    independent of construction order and of any other consumer of the
    seed.
    """
    params = ModelParams(spec=spec)

    def weight(name, rows, cols):
        rng = stream(seed, f"init.{namespace}{name}")
        params.tensors[name] = Tensor(glorot_uniform(rows, cols, rng), requires_grad=True)

    def zeros(name, cols):
        params.tensors[name] = Tensor(np.zeros((1, cols)), requires_grad=True)

    if spec.kind == "sgc":
        weight("linear.weight", spec.in_dim, spec.num_classes)
        zeros("linear.bias", spec.num_classes)
        return params

    if spec.kind in ("gcn", "mlp"):
        dims = _layer_dims(spec)
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            weight(f"layer{i}.weight", d_in, d_out)
            zeros(f"layer{i}.bias", d_out)
        return params

    # gat: concat heads on hidden layers, average on the output layer
    d_in = spec.in_dim
    for i in range(spec.layers):
        last = i == spec.layers - 1
        heads = spec.out_heads if last else spec.heads
        d_out = spec.num_classes if last else spec.head_dim()
        for h in range(heads):
            weight(f"layer{i}.head{h}.weight", d_in, d_out)
            weight(f"layer{i}.head{h}.a_src", d_out, 1)
            weight(f"layer{i}.head{h}.a_dst", d_out, 1)
        zeros(f"layer{i}.bias", d_out if last else d_out * heads)
        d_in = d_out if last else d_out * heads
    return params


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class ForwardOut:
    logits: Tensor
    embedding: Tensor | None    # last hidden representation (pre-logit)


def _drop(tape, x, rate, rng, training):
    if isinstance(x, SparseMatrix):
        return ad.sparse_dropout(x, rate, rng, training)
    return ad.dropout(tape, x, rate, rng, training)


def _linear_in(tape, x, w):
    """x @ w for dense-Tensor or constant-sparse x."""
    if isinstance(x, SparseMatrix):
        return ad.spmm(tape, x, w)
    return ad.matmul(tape, x, w)


def gcn_forward(tape: Tape | None, params: ModelParams, adj: SparseMatrix, x,
                training: bool = False, rng: np.random.Generator | None = None) -> ForwardOut:
    """Per layer: dropout -> propagate -> linear -> ReLU (none on the last)."""
    spec = params.spec
    h = x
    embedding = None
    for i in range(spec.layers):
        h = _drop(tape, h, spec.dropout, rng, training)
        if isinstance(h, SparseMatrix):
            # A(XW) instead of (AX)W: same product, keeps the wide input sparse
            z = ad.spmm(tape, h, params.tensors[f"layer{i}.weight"])
            z = ad.spmm(tape, adj, z)
        else:
            z = ad.spmm(tape, adj, h)
            z = ad.matmul(tape, z, params.tensors[f"layer{i}.weight"])
        z = ad.add_rowvec(tape, z, params.tensors[f"layer{i}.bias"])
        if i < spec.layers - 1:
            h = ad.relu(tape, z)
            embedding = h
        else:
            h = z
    return ForwardOut(logits=h, embedding=embedding)


def dropedge_forward(tape: Tape | None, params: ModelParams, x,
                     training: bool = False, rng: np.random.Generator | None = None) -> ForwardOut:
    """All-edges-dropped branch: a plain MLP, structurally a GCN with identity propagation."""
    spec = params.spec
    h = x
    embedding = None
    for i in range(spec.layers):
        h = _drop(tape, h, spec.dropout, rng, training)
        z = _linear_in(tape, h, params.tensors[f"layer{i}.weight"])
        z = ad.add_rowvec(tape, z, params.tensors[f"layer{i}.bias"])
        if i < spec.layers - 1:
            h = ad.relu(tape, z)
            embedding = h
        else:
            h = z
    return ForwardOut(logits=h, embedding=embedding)


def sgc_precompute(adj: SparseMatrix, x, hops: int):
    """Smooth features by `hops` applications of the normalized adjacency."""
    if hops < 0:
        raise ValueError("hops must be >= 0")
    if isinstance(x, SparseMatrix):
        out = x.csr
        for _ in range(hops):
            out = adj.csr @ out
        return SparseMatrix(out) if hops else x
    out = np.asarray(x, dtype=np.float64)
    for _ in range(hops):
        out = adj.csr @ out
    return out


def sgc_forward(tape: Tape | None, params: ModelParams, smoothed,
                training: bool = False, rng: np.random.Generator | None = None) -> ForwardOut:
    """Single linear layer over the precomputed smoothed features."""
    if isinstance(smoothed, np.ndarray):
        smoothed = Tensor(smoothed)
    z = _linear_in(tape, smoothed, params.tensors["linear.weight"])
    z = ad.add_rowvec(tape, z, params.tensors["linear.bias"])
    return ForwardOut(logits=z, embedding=None)


class AttentionIndex:
    """Arcs grouped by destination, each neighborhood ending with the self arc."""

    def __init__(self, g: Graph):
        n = g.num_nodes
        deg = g.degrees()
        counts = deg + 1
        indptr = np.concatenate([[0], np.cumsum(counts)])
        src = np.empty(indptr[-1], dtype=np.int64)
        self_slots = indptr[1:] - 1
        src[self_slots] = np.arange(n)
        neighbor_slots = np.ones(indptr[-1], dtype=bool)
        neighbor_slots[self_slots] = False
        src[neighbor_slots] = g.indices
        self.src = src
        self.seg = Segments(indptr)

    @property
    def dst(self) -> np.ndarray:
        return self.seg.ids


def attention_index(g: Graph) -> AttentionIndex:
    return AttentionIndex(g)


def gat_forward(tape: Tape | None, params: ModelParams, att: AttentionIndex, x,
                training: bool = False, rng: np.random.Generator | None = None) -> ForwardOut:
    """Multi-head attention over each node's neighborhood plus itself.

    Per arc (u -> i) the coefficient comes from LeakyReLU of the
    attention vector applied to the transformed endpoint features,
    softmax-normalized over i's neighborhood. Heads are concatenated on
    hidden layers and averaged on the output layer, ELU in between.
    """
    spec = params.spec
    h = x
    embedding = None
    for i in range(spec.layers):
        last = i == spec.layers - 1
        heads = spec.out_heads if last else spec.heads
        h_in = _drop(tape, h, spec.dropout, rng, training)
        head_outs = []
        for k in range(heads):
            w = params.tensors[f"layer{i}.head{k}.weight"]
            hw = _linear_in(tape, h_in, w)
            s_src = ad.matmul(tape, hw, params.tensors[f"layer{i}.head{k}.a_src"])
            s_dst = ad.matmul(tape, hw, params.tensors[f"layer{i}.head{k}.a_dst"])
            logits = ad.add(tape,
                            ad.gather_rows(tape, s_src, att.src),
                            ad.gather_rows(tape, s_dst, att.dst))
            alpha = ad.segment_softmax(tape, ad.leaky_relu(tape, logits, spec.leaky_slope),
                                       att.seg)
            alpha = ad.dropout(tape, alpha, spec.dropout, rng, training)
            head_outs.append(
                ad.segment_weighted_sum(tape, alpha, ad.gather_rows(tape, hw, att.src), att.seg))
        if last:
            z = head_outs[0]
            for extra in head_outs[1:]:
                z = ad.add(tape, z, extra)
            if heads > 1:
                z = ad.mul_scalar(tape, z, 1.0 / heads)
        else:
            z = head_outs[0] if heads == 1 else ad.concat_cols(tape, head_outs)
        z = ad.add_rowvec(tape, z, params.tensors[f"layer{i}.bias"])
        if not last:
            h = ad.elu(tape, z)
            embedding = h
        else:
            h = z
    return ForwardOut(logits=h, embedding=embedding)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path) -> None:
    """Flat binary of float64 tensors with a JSON manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"spec": params.spec.__dict__, "tensors": []}
    offset = 0
    with open(root / "params.bin", "wb") as fh:
        for name, t in params.tensors.items():
            data = t.value.astype("<f8").tobytes()
            manifest["tensors"].append(
                {"name": name, "shape": list(t.shape), "offset": offset})
            fh.write(data)
            offset += len(data)
    (root / "params.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(path) -> ModelParams:
    root = Path(path)
    manifest = json.loads((root / "params.json").read_text())
    spec = ModelSpec(**manifest["spec"])
    blob = (root / "params.bin").read_bytes()
    params = ModelParams(spec=spec)
    for entry in manifest["tensors"]:
        rows, cols = entry["shape"]
        count = rows * cols
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(rows, cols)
        params.tensors[entry["name"]] = Tensor(arr.copy(), requires_grad=True)
    return params


def with_depth(spec: ModelSpec, layers: int) -> ModelSpec:
    return replace(spec, layers=layers)
