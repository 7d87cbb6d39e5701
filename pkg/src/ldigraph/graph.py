"""Graph data model, GIB-v1 on-disk format, and structural operations.

Graphs are undirected and CSR-structured: every undirected edge is
stored as two directed arcs, self-loops are never stored (they are
added only inside adjacency normalization), and unlabeled nodes carry
the 0xFFFF sentinel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .autodiff import SparseMatrix

UNLABELED = 0xFFFF

_META_KEYS = {"format", "name", "num_nodes", "num_arcs", "num_features", "num_classes"}


class GraphFormatError(Exception):
    """Raised when a GIB-v1 directory or graph invariant is invalid."""


@dataclass
class NodeSplit:
    """Disjoint train/val/test node-id sets (subsets of labeled nodes)."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        combined = np.concatenate([self.train, self.val, self.test])
        if len(np.unique(combined)) != len(combined):
            raise GraphFormatError("split sets overlap")

    def to_dict(self) -> dict:
        return {
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }


@dataclass
class Graph:
    """CSR-structured undirected graph with features and labels."""

    name: str
    num_classes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    splits: NodeSplit | None = None

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        validate_graph(self)

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_arcs(self) -> int:
        return len(self.indices)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)


def validate_graph(g: Graph) -> None:
    n = g.num_nodes
    if n < 1:
        raise GraphFormatError("graph has no nodes")
    if np.any(np.diff(g.indptr) < 0):
        raise GraphFormatError("indptr is not non-decreasing")
    if g.indptr[0] != 0 or g.indptr[-1] != len(g.indices):
        raise GraphFormatError("indptr does not span indices")
    if g.num_arcs and (g.indices.min() < 0 or g.indices.max() >= n):
        raise GraphFormatError("neighbor id out of range")
    if g.features.shape[0] != n:
        raise GraphFormatError("feature row count != num_nodes")
    if g.labels.shape != (n,):
        raise GraphFormatError("label count != num_nodes")
    labeled = g.labels[g.labels != UNLABELED]
    if labeled.size and (labeled.min() < 0 or labeled.max() >= g.num_classes):
        raise GraphFormatError("label out of class range")
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(g.indptr))
    if np.any(src == g.indices):
        raise GraphFormatError("self-loop stored in adjacency")
    adj = sp.csr_matrix((np.ones(g.num_arcs), g.indices, g.indptr), shape=(n, n))
    if (adj != adj.T).nnz != 0:
        diff = (adj - adj.T).tocoo()
        u, v = int(diff.row[0]), int(diff.col[0])
        raise GraphFormatError(f"asymmetry at ({u},{v})")
    if g.splits is not None:
        members = np.concatenate([g.splits.train, g.splits.val, g.splits.test])
        if members.size and (members.min() < 0 or members.max() >= n):
            raise GraphFormatError("split node id out of range")
        if np.any(g.labels[members] == UNLABELED):
            raise GraphFormatError("split contains unlabeled node")


# ---------------------------------------------------------------------------
# GIB-v1 directory format


def _read_exact(path: Path, dtype: str, count: int) -> np.ndarray:
    if not path.is_file():
        raise GraphFormatError(f"missing file: {path.name}")
    expected = count * np.dtype(dtype).itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise GraphFormatError(f"{path.name}: expected {expected} bytes, found {actual}")
    return np.fromfile(path, dtype=dtype)


def load_graph(path) -> Graph:
    """Load a GIB-v1 directory."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise GraphFormatError("missing file: meta.json")
    meta = json.loads(meta_path.read_text())
    missing = _META_KEYS - meta.keys()
    if missing:
        raise GraphFormatError(f"meta.json missing keys: {sorted(missing)}")
    if meta["format"] != "gib-v1":
        raise GraphFormatError(f"unsupported format: {meta['format']!r}")
    n, m, d = int(meta["num_nodes"]), int(meta["num_arcs"]), int(meta["num_features"])

    indptr = _read_exact(root / "indptr.bin", "<u8", n + 1).astype(np.int64)
    indices = _read_exact(root / "indices.bin", "<u8", m).astype(np.int64)
    features = _read_exact(root / "features.bin", "<f4", n * d).reshape(n, d)
    labels = _read_exact(root / "labels.bin", "<u2", n).astype(np.int64)

    splits = None
    splits_path = root / "splits.json"
    if splits_path.is_file():
        raw = json.loads(splits_path.read_text())
        splits = NodeSplit(raw["train"], raw["val"], raw["test"])

    return Graph(
        name=meta["name"],
        num_classes=int(meta["num_classes"]),
        indptr=indptr,
        indices=indices,
        features=features,
        labels=labels,
        splits=splits,
    )


def save_graph(g: Graph, path, extra_meta: dict | None = None) -> None:
    """Write a GIB-v1 directory (round-trips bit-exactly with load_graph)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": "gib-v1",
        "name": g.name,
        "num_nodes": g.num_nodes,
        "num_arcs": g.num_arcs,
        "num_features": g.num_features,
        "num_classes": g.num_classes,
    }
    if extra_meta:
        meta.update(extra_meta)
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    g.indptr.astype("<u8").tofile(root / "indptr.bin")
    g.indices.astype("<u8").tofile(root / "indices.bin")
    g.features.astype("<f4").tofile(root / "features.bin")
    g.labels.astype("<u2").tofile(root / "labels.bin")
    if g.splits is not None:
        (root / "splits.json").write_text(json.dumps(g.splits.to_dict()) + "\n")


# ---------------------------------------------------------------------------
# structural operations


class NormalizedAdjacency(SparseMatrix):
    """Symmetrically normalized adjacency with self-loops."""


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    """D^{-1/2} (A + I) D^{-1/2} with D the degree of A + I.

    Entry (u, v) is built as dinv[u] * dinv[v], which is exactly
    symmetric; isolated nodes keep a diagonal 1.0 from the self-loop.
    """
    n = g.num_nodes
    adj = sp.csr_matrix((np.ones(g.num_arcs), g.indices, g.indptr), shape=(n, n))
    adj = adj + sp.eye(n, format="csr")
    dinv = 1.0 / np.sqrt(adj.sum(axis=1).A1)
    coo = adj.tocoo()
    data = dinv[coo.row] * dinv[coo.col]
    return NormalizedAdjacency(sp.csr_matrix((data, (coo.row, coo.col)), shape=(n, n)))


def k_hop_neighborhood(g: Graph, node: int, k: int) -> set[int]:
    """Nodes at shortest-path distance 1..k from `node` (excluding it)."""
    if not 0 <= node < g.num_nodes:
        raise ValueError(f"node id {node} out of range")
    if k < 1:
        raise ValueError("k must be >= 1")
    seen = {node}
    frontier = np.array([node], dtype=np.int64)
    reached: set[int] = set()
    for _ in range(k):
        if frontier.size == 0:
            break
        nxt = np.unique(np.concatenate([g.neighbors(u) for u in frontier]))
        nxt = np.array([v for v in nxt if v not in seen], dtype=np.int64)
        seen.update(int(v) for v in nxt)
        reached.update(int(v) for v in nxt)
        frontier = nxt
    return reached


@dataclass
class InducedSubgraph:
    graph: Graph
    new_to_old: np.ndarray
    old_to_new: np.ndarray


def induce_subgraph(g: Graph, keep) -> InducedSubgraph:
    """Subgraph on `keep` containing exactly the arcs with both endpoints kept.

    New ids are assigned by ascending old id; the returned mapping is
    bijective onto [0, len(keep)).
    """
    keep = np.unique(np.asarray(list(keep), dtype=np.int64))
    if keep.size == 0:
        raise ValueError("keep set is empty")
    if keep.min() < 0 or keep.max() >= g.num_nodes:
        raise ValueError("keep node id out of range")
    old_to_new = np.full(g.num_nodes, -1, dtype=np.int64)
    old_to_new[keep] = np.arange(keep.size)

    counts = np.zeros(keep.size, dtype=np.int64)
    new_rows = []
    for new_u, old_u in enumerate(keep):
        nbrs = old_to_new[g.neighbors(old_u)]
        nbrs = np.sort(nbrs[nbrs >= 0])
        new_rows.append(nbrs)
        counts[new_u] = nbrs.size
    indptr = np.concatenate([[0], np.cumsum(counts)])
    indices = np.concatenate(new_rows) if new_rows else np.array([], dtype=np.int64)

    sub = Graph(
        name=f"{g.name}:sub",
        num_classes=g.num_classes,
        indptr=indptr,
        indices=indices,
        features=g.features[keep],
        labels=g.labels[keep],
        splits=None,
    )
    return InducedSubgraph(graph=sub, new_to_old=keep, old_to_new=old_to_new)


def make_splits(g: Graph, ratios: tuple[float, float, float], shuffle: bool,
                rng: np.random.Generator | None = None) -> NodeSplit:
    """Partition labeled nodes by consecutive prefix of the node order.

    Without shuffle the dataset's native node order is used and the
    result is independent of the rng. Sizes are floor(ratio * n) for
    train and val, remainder to test.
    """
    r_train, r_val, r_test = ratios
    if min(ratios) <= 0:
        raise ValueError("ratios must be positive")
    if abs(r_train + r_val + r_test - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    order = g.labeled_nodes()
    if shuffle:
        if rng is None:
            raise ValueError("shuffle requires an rng")
        order = rng.permutation(order)
    n = order.size
    n_train = int(np.floor(r_train * n))
    n_val = int(np.floor(r_val * n))
    train, val, test = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    if min(train.size, val.size, test.size) == 0:
        raise ValueError("a split is empty; not enough labeled nodes for these ratios")
    return NodeSplit(train=train, val=val, test=test)
