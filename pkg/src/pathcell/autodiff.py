"""Reverse-mode automatic differentiation over dense numpy arrays.

Covers exactly the operator set the recurrent cell needs: add, elementwise
multiply, vector-matrix product, the complex-space pairwise (Hermitian)
product, sigmoid/tanh, gated combination, dropout masking, embedding lookup,
full-vocabulary dot scoring and a softmax cross-entropy head. Everything runs
in float64 by default; float32 is available as a runtime option for speed.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64

_dtype = DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    """Switch the engine between float64 (default) and float32."""
    global _dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}")
    _dtype = dtype.type


def default_dtype():
    return _dtype


class NonFiniteError(ArithmeticError):
    """An operation produced a NaN or infinity."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by operation '{op}'")
        self.op = op


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op)


class Tensor:
    """Dense array node. Leaves carry parameters; interior nodes are op outputs."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=_dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad

    def grad_or_zeros(self) -> np.ndarray:
        """Gradient after backward; untouched tensors read as zero."""
        return self.grad if self.grad is not None else np.zeros_like(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"


class Tape:
    """Append-only record of primitive applications.

    Ops are recorded in execution order, so iterating in reverse is a valid
    reverse-topological traversal; gradients accumulate additively at fan-out.
    Also tracks which embedding rows each lookup touched (for sparse Adam).
    """

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], object]] = []
        self.touched_rows: dict[int, object] = {}  # id(leaf) -> row ids or "all"

    def record(self, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._records.append((inputs, backward_fn))

    def touch(self, leaf: Tensor, rows) -> None:
        prev = self.touched_rows.get(id(leaf))
        if (isinstance(rows, str) and rows == "all") or \
                (isinstance(prev, str) and prev == "all"):
            self.touched_rows[id(leaf)] = "all"
        elif prev is None:
            self.touched_rows[id(leaf)] = [np.asarray(rows)]
        else:
            prev.append(np.asarray(rows))

    def touched(self, leaf: Tensor):
        """Touched row ids for an embedding leaf: array, 'all', or None."""
        got = self.touched_rows.get(id(leaf))
        if got is None or isinstance(got, str):
            return got
        return np.unique(np.concatenate(got))

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        if loss.value.shape != ():
            raise ValueError("backward requires a scalar loss node")
        loss.grad = np.ones((), dtype=_dtype)
        for inputs, fn in reversed(self._records):
            fn()


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _needs(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _out(op: str, value: np.ndarray, requires_grad: bool) -> Tensor:
    _check_finite(op, value)
    return Tensor(value, requires_grad=requires_grad)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = _out("add", a.value + b.value, _needs(a, b))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.ensure_grad()
                a.grad += out.grad
            if b.requires_grad:
                b.ensure_grad()
                b.grad += out.grad
        tape.record((a, b), bwd)
    return out


def elementwise_mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape("elementwise_mul", a, b)
    out = _out("elementwise_mul", a.value * b.value, _needs(a, b))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.ensure_grad()
                a.grad += out.grad * b.value
            if b.requires_grad:
                b.ensure_grad()
                b.grad += out.grad * a.value
        tape.record((a, b), bwd)
    return out


def affine(tape: Tape, a: Tensor, scale: float = 1.0, shift: float = 0.0) -> Tensor:
    """out = scale * a + shift with python-scalar coefficients."""
    out = _out("affine", scale * a.value + shift, a.requires_grad)
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            a.ensure_grad()
            a.grad += scale * out.grad
        tape.record((a,), bwd)
    return out


def matmul(tape: Tape, x: Tensor, w: Tensor) -> Tensor:
    """Row-vector batch times square matrix: (B, d) @ (d, d) or (d,) @ (d, d)."""
    if x.value.shape[-1] != w.value.shape[0] or w.value.ndim != 2:
        raise ValueError(f"matmul: shape mismatch {x.value.shape} @ {w.value.shape}")
    out = _out("matmul", x.value @ w.value, _needs(x, w))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            if x.requires_grad:
                x.ensure_grad()
                x.grad += out.grad @ w.value.T
            if w.requires_grad:
                w.ensure_grad()
                if x.value.ndim == 1:
                    w.grad += np.outer(x.value, out.grad)
                else:
                    w.grad += x.value.T @ out.grad
        tape.record((x, w), bwd)
    return out


def hermitian_product(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Complex-space pairwise product on even-dimensional vectors.

    With half = d/2 and inputs split as (a1, a2), (b1, b2):
      out[:half] = a1*b1 - a2*b2
      out[half:] = a1*b2 - a2*b1
    The second branch's sign follows the combinator definition used by the
    search space, not plain complex multiplication.
    """
    _same_shape("hermitian_product", a, b)
    d = a.value.shape[-1]
    if d % 2 != 0:
        raise ValueError(f"hermitian_product requires even dimension, got {d}")
    h = d // 2
    a1, a2 = a.value[..., :h], a.value[..., h:]
    b1, b2 = b.value[..., :h], b.value[..., h:]
    val = np.concatenate([a1 * b1 - a2 * b2, a1 * b2 - a2 * b1], axis=-1)
    out = _out("hermitian_product", val, _needs(a, b))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            g1, g2 = out.grad[..., :h], out.grad[..., h:]
            if a.requires_grad:
                a.ensure_grad()
                a.grad[..., :h] += g1 * b1 + g2 * b2
                a.grad[..., h:] += -g1 * b2 - g2 * b1
            if b.requires_grad:
                b.ensure_grad()
                b.grad[..., :h] += g1 * a1 - g2 * a2
                b.grad[..., h:] += -g1 * a2 + g2 * a1
        tape.record((a, b), bwd)
    return out


def sigmoid(tape: Tape, a: Tensor) -> Tensor:
    x = a.value
    val = np.empty_like(x)
    pos = x >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    val[~pos] = ex / (1.0 + ex)
    out = _out("sigmoid", val, a.requires_grad)
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            a.ensure_grad()
            a.grad += out.grad * val * (1.0 - val)
        tape.record((a,), bwd)
    return out


def tanh(tape: Tape, a: Tensor) -> Tensor:
    val = np.tanh(a.value)
    out = _out("tanh", val, a.requires_grad)
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            a.ensure_grad()
            a.grad += out.grad * (1.0 - val * val)
        tape.record((a,), bwd)
    return out


def identity(tape: Tape, a: Tensor) -> Tensor:
    return a


def gated_combine(tape: Tape, a: Tensor, b: Tensor, wa: Tensor, wb: Tensor) -> Tensor:
    """g = sigmoid(a@Wa + b@Wb); out = g*a + (1-g)*b."""
    g = sigmoid(tape, add(tape, matmul(tape, a, wa), matmul(tape, b, wb)))
    return add(tape, elementwise_mul(tape, g, a),
               elementwise_mul(tape, affine(tape, g, -1.0, 1.0), b))


def dropout(tape: Tape, a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scales kept entries by 1/(1-rate). No-op at rate 0."""
    if rate < 0.0 or rate >= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    mask = (rng.random(a.value.shape) >= rate).astype(_dtype) / (1.0 - rate)
    out = _out("dropout", a.value * mask, a.requires_grad)
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            a.ensure_grad()
            a.grad += out.grad * mask
        tape.record((a,), bwd)
    return out


def embedding_lookup(tape: Tape, table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.value.shape[0]):
        raise IndexError("embedding_lookup: id out of range")
    out = _out("embedding_lookup", table.value[ids], table.requires_grad)
    if out.requires_grad:
        tape.touch(table, ids)
        def bwd():
            if out.grad is None:
                return
            table.ensure_grad()
            np.add.at(table.grad, ids, out.grad)
        tape.record((table,), bwd)
    return out


def dot_scores(tape: Tape, v: Tensor, table: Tensor) -> Tensor:
    """Scores of each row of v against every embedding row: (B, d) -> (B, N)."""
    if v.value.shape[-1] != table.value.shape[1]:
        raise ValueError(
            f"dot_scores: dim mismatch {v.value.shape} vs {table.value.shape}")
    out = _out("dot_scores", v.value @ table.value.T, _needs(v, table))
    if out.requires_grad:
        if table.requires_grad:
            tape.touch(table, "all")  # partition function touches every row
        def bwd():
            if out.grad is None:
                return
            if v.requires_grad:
                v.ensure_grad()
                v.grad += out.grad @ table.value
            if table.requires_grad:
                table.ensure_grad()
                table.grad += out.grad.T @ (v.value if v.value.ndim == 2
                                            else v.value[None, :])
        tape.record((v, table), bwd)
    return out


def softmax_cross_entropy(tape: Tape, logits: Tensor, targets: np.ndarray,
                          weights: np.ndarray | None = None) -> Tensor:
    """Multi-class log-loss, summed over rows: sum_i w_i * (-z[t_i] + logsumexp(z_i)).

    Max-subtraction keeps the partition term stable. `weights` defaults to all
    ones; zero-weight rows contribute exactly zero loss and zero gradient.
    """
    z = logits.value
    if z.ndim != 2:
        raise ValueError("softmax_cross_entropy expects (B, K) logits")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (z.shape[0],):
        raise ValueError("softmax_cross_entropy: one target id per logit row")
    if weights is None:
        weights = np.ones(z.shape[0], dtype=_dtype)
    else:
        weights = np.asarray(weights, dtype=_dtype)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    zsum = ez.sum(axis=1)
    logsumexp = np.log(zsum) + zmax[:, 0]
    rows = np.arange(z.shape[0])
    losses = logsumexp - z[rows, targets]
    val = np.asarray((losses * weights).sum(), dtype=_dtype)
    out = _out("softmax_cross_entropy", val, logits.requires_grad)
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            probs = ez / zsum[:, None]
            probs[rows, targets] -= 1.0
            logits.ensure_grad()
            logits.grad += out.grad * probs * weights[:, None]
        tape.record((logits,), bwd)
    return out


def reduce_sum(tape: Tape, a: Tensor) -> Tensor:
    """Sum of all elements as a scalar node."""
    out = _out("reduce_sum", np.asarray(a.value.sum(), dtype=_dtype),
               a.requires_grad)
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            a.ensure_grad()
            a.grad += out.grad  # broadcasts the scalar adjoint
        tape.record((a,), bwd)
    return out


def zeros_like_input(shape) -> Tensor:
    """Constant zero tensor (no gradient), for severed connections."""
    return Tensor(np.zeros(shape, dtype=_dtype))
