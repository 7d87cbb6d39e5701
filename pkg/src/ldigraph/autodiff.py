"""Reverse-mode differentiation over dense float64 matrices.

A Tape records each primitive as it executes; backward() replays the
records in exact reverse order, accumulating analytic gradients into
every tensor that requires them. Sparse matrices (normalized adjacency,
bag-of-words features) enter through spmm/segment primitives as
constants: no gradient is ever taken with respect to their entries.

All values are 2-D float64 arrays. Scalars are 1x1 tensors.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class Tensor:
    """Dense matrix with an optional gradient slot."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() requires a 1x1 tensor")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class SparseMatrix:
    """Constant CSR matrix used by spmm; caches its transpose.

    with_data() reuses the cached transpose permutation so per-epoch
    sparse dropout does not re-sort indices.
    """

    def __init__(self, matrix, _transposed: sp.csr_matrix | None = None):
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        csr.sort_indices()
        self.csr = csr
        if _transposed is None:
            _transposed = csr.T.tocsr()
            _transposed.sort_indices()
        self.csr_t = _transposed
        self._t_perm: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def _transpose_perm(self) -> np.ndarray:
        if self._t_perm is None:
            tagged = sp.csr_matrix(
                (np.arange(self.csr.nnz, dtype=np.float64), self.csr.indices, self.csr.indptr),
                shape=self.csr.shape,
            )
            tt = tagged.T.tocsr()
            tt.sort_indices()
            self._t_perm = tt.data.astype(np.int64)
        return self._t_perm

    def with_data(self, data: np.ndarray) -> "SparseMatrix":
        """Same sparsity pattern, new entry values."""
        if data.shape != self.csr.data.shape:
            raise ValueError("data length mismatch")
        fwd = sp.csr_matrix((data, self.csr.indices, self.csr.indptr), shape=self.csr.shape)
        bwd = sp.csr_matrix(
            (data[self._transpose_perm()], self.csr_t.indices, self.csr_t.indptr),
            shape=self.csr_t.shape,
        )
        out = SparseMatrix.__new__(SparseMatrix)
        out.csr = fwd
        out.csr_t = bwd
        out._t_perm = self._t_perm
        return out


class Segments:
    """Contiguous groups of an arc array (arcs sorted by group id).

    Used for per-neighborhood softmax/aggregation; every segment must be
    non-empty (attention neighborhoods always contain the self arc).
    """

    def __init__(self, indptr):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.counts = np.diff(self.indptr)
        if np.any(self.counts <= 0):
            raise ValueError("segments must be non-empty")
        self.ids = np.repeat(np.arange(len(self.counts)), self.counts)

    @property
    def num_segments(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(self.indptr[-1])

    def sum(self, x: np.ndarray) -> np.ndarray:
        """Per-segment sum along axis 0 (x is (size,) or (size, d))."""
        return np.add.reduceat(x, self.indptr[:-1], axis=0)

    def max(self, x: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(x, self.indptr[:-1], axis=0)


class Tape:
    """Ordered record of executed primitives; replayed in reverse."""

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[], None]]] = []
        self._seen: dict[int, Tensor] = {}

    def __len__(self):
        return len(self._records)

    def _track(self, t: Tensor):
        self._seen.setdefault(id(t), t)

    def record(self, out: Tensor, inputs: Iterable[Tensor], backward: Callable[[], None]):
        for t in inputs:
            self._track(t)
        self._track(out)
        self._records.append((out, backward))

    def backward(self, loss: Tensor):
        """Populate .grad on every tensor this tape has seen.

        Gradients are reset first, so repeated calls are idempotent.
        Tensors recorded on the tape but off the loss path end with
        zero gradients.
        """
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be 1x1, got {loss.shape}")
        for t in self._seen.values():
            t.grad = np.zeros_like(t.value)
        if id(loss) not in self._seen:
            self._track(loss)
            loss.grad = np.zeros_like(loss.value)
        loss.grad = np.ones((1, 1))
        for _, backward in reversed(self._records):
            backward()


def _result(tape: Tape | None, value, inputs: Sequence[Tensor], backward_factory):
    """Wrap a forward value; record backward when gradients are needed."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if tape is not None and needs:
        tape.record(out, inputs, backward_factory(out))
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a.grad += g @ b.value.T
            if b.requires_grad:
                b.grad += a.value.T @ g
        return run

    return _result(tape, a.value @ b.value, (a, b), backward)


def spmm(tape: Tape | None, s: SparseMatrix, x: Tensor) -> Tensor:
    """Sparse-constant @ dense. Gradient flows to x only."""
    if s.shape[1] != x.shape[0]:
        raise ValueError(f"spmm shape mismatch: {s.shape} @ {x.shape}")

    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += s.csr_t @ out.grad
        return run

    return _result(tape, s.csr @ x.value, (x,), backward)


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(out):
        def run():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad
        return run

    return _result(tape, a.value + b.value, (a, b), backward)


def add_rowvec(tape: Tape | None, x: Tensor, b: Tensor) -> Tensor:
    if b.shape != (1, x.shape[1]):
        raise ValueError(f"row vector must be 1x{x.shape[1]}, got {b.shape}")

    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad.sum(axis=0, keepdims=True)
        return run

    return _result(tape, x.value + b.value, (x, b), backward)


def add_scalar(tape: Tape | None, x: Tensor, c: float) -> Tensor:
    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad
        return run

    return _result(tape, x.value + c, (x,), backward)


def mul_scalar(tape: Tape | None, x: Tensor, c: float) -> Tensor:
    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += c * out.grad
        return run

    return _result(tape, x.value * c, (x,), backward)


def hadamard(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")

    def backward(out):
        def run():
            if a.requires_grad:
                a.grad += out.grad * b.value
            if b.requires_grad:
                b.grad += out.grad * a.value
        return run

    return _result(tape, a.value * b.value, (a, b), backward)


def relu(tape: Tape | None, x: Tensor) -> Tensor:
    mask = x.value > 0

    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * mask
        return run

    return _result(tape, np.where(mask, x.value, 0.0), (x,), backward)


def leaky_relu(tape: Tape | None, x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.value > 0

    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * np.where(mask, 1.0, slope)
        return run

    return _result(tape, np.where(mask, x.value, slope * x.value), (x,), backward)


def elu(tape: Tape | None, x: Tensor, alpha: float = 1.0) -> Tensor:
    mask = x.value > 0
    expm1 = np.expm1(np.minimum(x.value, 0.0))

    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * np.where(mask, 1.0, alpha * (expm1 + 1.0))
        return run

    return _result(tape, np.where(mask, x.value, alpha * expm1), (x,), backward)


def sqrt(tape: Tape | None, x: Tensor) -> Tensor:
    if np.any(x.value < 0):
        raise ValueError("sqrt of negative entry")
    root = np.sqrt(x.value)

    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * 0.5 / root
        return run

    return _result(tape, root, (x,), backward)


def log_softmax_rows(tape: Tape | None, x: Tensor) -> Tensor:
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    softmax = np.exp(logp)

    def backward(out):
        def run():
            if x.requires_grad:
                g = out.grad
                x.grad += g - softmax * g.sum(axis=1, keepdims=True)
        return run

    return _result(tape, logp, (x,), backward)


def dropout(tape: Tape | None, x: Tensor, rate: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    factor = keep * scale

    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * factor
        return run

    return _result(tape, x.value * factor, (x,), backward)


def sparse_dropout(s: SparseMatrix, rate: float, rng: np.random.Generator,
                   training: bool) -> SparseMatrix:
    """Dropout on a constant sparse matrix (zero entries stay zero)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return s
    keep = rng.random(s.nnz) >= rate
    return s.with_data(s.csr.data * keep / (1.0 - rate))


def concat_cols(tape: Tape | None, parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_cols needs at least one tensor")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ValueError("concat_cols row mismatch")
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(out):
        def run():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p.grad += out.grad[:, lo:hi]
        return run

    return _result(tape, np.concatenate([p.value for p in parts], axis=1), tuple(parts), backward)


def gather_rows(tape: Tape | None, x: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("ids must be 1-D")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[0]):
        raise ValueError("row id out of range")

    def backward(out):
        def run():
            if x.requires_grad:
                np.add.at(x.grad, ids, out.grad)
        return run

    return _result(tape, x.value[ids], (x,), backward)


def segment_softmax(tape: Tape | None, v: Tensor, seg: Segments) -> Tensor:
    """Softmax over each contiguous segment of an m x 1 tensor."""
    if v.shape != (seg.size, 1):
        raise ValueError(f"expected shape ({seg.size}, 1), got {v.shape}")
    vals = v.value[:, 0]
    shifted = vals - seg.max(vals)[seg.ids]
    expv = np.exp(shifted)
    alpha = expv / seg.sum(expv)[seg.ids]
    alpha = alpha[:, None]

    def backward(out):
        def run():
            if v.requires_grad:
                g = out.grad
                weighted = (alpha * g)[:, 0]
                v.grad += alpha * (g - seg.sum(weighted)[seg.ids][:, None])
        return run

    return _result(tape, alpha, (v,), backward)


def segment_weighted_sum(tape: Tape | None, w: Tensor, f: Tensor, seg: Segments) -> Tensor:
    """out[i] = sum over segment i of w_e * f_e (w is m x 1, f is m x d)."""
    if w.shape != (seg.size, 1) or f.shape[0] != seg.size:
        raise ValueError("segment_weighted_sum shape mismatch")
    prod = w.value * f.value

    def backward(out):
        def run():
            g_rows = out.grad[seg.ids]
            if w.requires_grad:
                w.grad += (f.value * g_rows).sum(axis=1, keepdims=True)
            if f.requires_grad:
                f.grad += w.value * g_rows
        return run

    return _result(tape, seg.sum(prod), (w, f), backward)


def sum_all(tape: Tape | None, x: Tensor) -> Tensor:
    def backward(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad[0, 0]
        return run

    return _result(tape, np.array([[x.value.sum()]]), (x,), backward)


def weighted_nll(tape: Tape | None, logp: Tensor, labels, weights) -> Tensor:
    """-sum_i w_i * logp[i, y_i]; weights are per-row constants."""
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if labels.shape != (logp.shape[0],) or weights.shape != labels.shape:
        raise ValueError("labels/weights must be 1-D and match the row count")
    if labels.size and (labels.min() < 0 or labels.max() >= logp.shape[1]):
        raise ValueError("label out of range")
    rows = np.arange(labels.size)
    value = -(weights * logp.value[rows, labels]).sum()

    def backward(out):
        def run():
            if logp.requires_grad:
                g = out.grad[0, 0]
                np.add.at(logp.grad, (rows, labels), -weights * g)
        return run

    return _result(tape, np.array([[value]]), (logp,), backward)


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tape | None], Tensor], params: Sequence[Tensor],
               h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    f(tape) must rebuild the scalar loss from `params` on each call and
    be deterministic (dropout disabled); this is checked by evaluating
    it twice before differencing.
    """
    v0 = f(None).item()
    v1 = f(None).item()
    if v0 != v1:
        raise ValueError("f is not deterministic (is dropout enabled?)")

    tape = Tape()
    loss = f(tape)
    tape.backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        if a is None:
            a = np.zeros_like(p.value)
        it = np.nditer(p.value, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.value[idx]
            p.value[idx] = orig + h
            up = f(None).item()
            p.value[idx] = orig - h
            down = f(None).item()
            p.value[idx] = orig
            fd = (up - down) / (2.0 * h)
            if not np.isfinite(fd) or not np.isfinite(a[idx]):
                raise ValueError("non-finite value in gradient check")
            err = abs(a[idx] - fd) / max(1.0, abs(a[idx]))
            worst = max(worst, err)
    return worst
