"""Dense 64-bit tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor`. When gradient tracking is on
and one of the inputs requires a gradient, the result remembers its inputs
and a backward rule; :meth:`Tensor.backward` collects the reachable
operations into a :class:`Tape` and replays the rules in reverse order.

Selections (top-k, argmax) are not differentiable: gradients flow only
through the entries that were kept and are zero elsewhere.
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ContractError, DataError, DimensionError, NonFiniteError, ParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

LAYER_NORM_EPS = 1e-5
COSINE_EPS = 1e-12

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar("hicl_grad_enabled", default=True)


def is_grad_enabled() -> bool:
    """True when new operations are recorded for backward"""
    return _GRAD_ENABLED.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable gradient tracking inside the block.

    Inference kernels also switch to row-by-row matrix products here, so a
    row's output does not depend on which other rows share the batch.
    """
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def _check_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """Dense n-dimensional float64 value with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        _check_finite(array, name or "tensor constructor")
        self.data: np.ndarray = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(array) if self.requires_grad else None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardRule] = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardRule, op: str) -> "Tensor":
        data = np.asarray(data, dtype=np.float64)
        _check_finite(data, op)
        out = cls.__new__(cls)
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.data = data
        out.requires_grad = track
        out.grad = np.zeros_like(data) if track else None
        out.name = None
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        out._op = op
        return out

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def set_requires_grad(self, flag: bool) -> None:
        """Toggle gradient tracking on a leaf; the buffer follows the flag."""
        if not self.is_leaf:
            raise ContractError("requires_grad can only be changed on leaf tensors")
        self.requires_grad = bool(flag)
        self.grad = np.zeros_like(self.data) if flag else None

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad}{label})"

    # ------------------------------------------------------------------
    # Operators
    # ------------------------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: float) -> "Tensor":
        if not np.isscalar(other):
            raise ContractError("tensor division is only defined for scalar divisors")
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def relu(self) -> "Tensor":
        return relu(self)

    def sin(self) -> "Tensor":
        return sin(self)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        """Populate ``grad`` on every tracked tensor this scalar depends on.

        Gradients accumulate across calls until :meth:`zero_grad` is used.

        Raises:
            ContractError: If the tensor is not a scalar
        """
        if self.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        tape = Tape.from_root(self)
        tape.run_backward(self, np.ones_like(self.data))


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Wrap constants; tensors pass through unchanged"""
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike, name: str) -> Tensor:
    """Create a named trainable leaf"""
    return Tensor(data, requires_grad=True, name=name)


# ----------------------------------------------------------------------
# Tape
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TapeEntry:
    """One recorded operation"""
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardRule
    op: str


class Tape:
    """Operations reachable from a root, ordered so every input precedes its user."""

    def __init__(self, entries: List[TapeEntry], leaves: List[Tensor]):
        self.entries = entries
        self.leaves = leaves

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        entries: List[TapeEntry] = []
        leaves: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                entries.append(TapeEntry(node, node._parents, node._backward, node._op))
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            if node._backward is None:
                if node.requires_grad:
                    leaves.append(node)
                continue
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(entries, leaves)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TapeEntry]:
        return iter(self.entries)

    def run_backward(self, root: Tensor, seed: np.ndarray) -> None:
        # each node is visited exactly once; cotangents are summed before use
        cotangents: Dict[int, np.ndarray] = {id(root): seed}
        for entry in reversed(self.entries):
            upstream = cotangents.pop(id(entry.output), None)
            if upstream is None:
                continue
            entry.output.grad += upstream
            for parent, grad in zip(entry.inputs, entry.backward(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                cotangents[key] = cotangents[key] + grad if key in cotangents else grad
        for leaf in self.leaves:
            grad = cotangents.pop(id(leaf), None)
            if grad is not None:
                leaf.grad += grad


# ----------------------------------------------------------------------
# Broadcasting helpers
# ----------------------------------------------------------------------
def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# Linear algebra
# ----------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor, rowwise: Optional[bool] = None) -> Tensor:
    """Matrix product ``a[m×k] · b[k×n]``.

    Args:
        a: Left operand
        b: Right operand
        rowwise: Evaluate each output row as its own vector-matrix product.
            Defaults to True exactly when gradient tracking is off.

    Returns:
        Tensor of shape (m, n)

    Raises:
        DimensionError: If either operand is not 2-D or inner sizes differ
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if rowwise is None:
        rowwise = not is_grad_enabled()
    if rowwise:
        data = np.empty((a.shape[0], b.shape[1]), dtype=np.float64)
        for row in range(a.shape[0]):
            data[row] = a.data[row] @ b.data
    else:
        data = a.data @ b.data
    a_data, b_data = a.data, b.data

    def backward(grad: np.ndarray):
        return grad @ b_data.T, a_data.T @ grad

    return Tensor._from_op(data, (a, b), backward, "matmul")


# ----------------------------------------------------------------------
# Elementwise
# ----------------------------------------------------------------------
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, (a, b),
                           lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, (a, b),
                           lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    a_data, b_data = a.data, b.data

    def backward(grad: np.ndarray):
        return _unbroadcast(grad * b_data, a_data.shape), _unbroadcast(grad * a_data, b_data.shape)

    return Tensor._from_op(a_data * b_data, (a, b), backward, "mul")


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    if not np.isfinite(factor):
        raise NonFiniteError("scale factor must be finite")
    return Tensor._from_op(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    gate = a.data > 0
    return Tensor._from_op(np.where(gate, a.data, 0.0), (a,), lambda g: (g * gate,), "relu")


def sin(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    cos = np.cos(a.data)
    return Tensor._from_op(np.sin(a.data), (a,), lambda g: (g * cos,), "sin")


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def absolute(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return Tensor._from_op(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    a_data = a.data
    return Tensor._from_op(a_data * a_data, (a,), lambda g: (2.0 * g * a_data,), "square")


def safe_sqrt(a: ArrayLike) -> Tensor:
    """Square root with a zero gradient at zero"""
    a = as_tensor(a)
    out = np.sqrt(np.maximum(a.data, 0.0))
    positive = out > 0

    def backward(grad: np.ndarray):
        return (np.divide(0.5 * grad, out, out=np.zeros_like(out), where=positive),)

    return Tensor._from_op(out, (a,), backward, "sqrt")


_ELEMENTWISE = {
    "relu": relu,
    "sin": sin,
    "add": add,
    "mul": mul,
    "sub": sub,
    "scale": scale,
}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch a registered pointwise op by name.

    Args:
        op: One of relu, sin, add, mul, sub, scale
        operands: Tensors (and the factor for ``scale``)

    Raises:
        ParameterError: If the op is unknown
    """
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ParameterError(f"unknown elementwise op {op!r}; supported: {sorted(_ELEMENTWISE)}") from None
    return fn(*operands)


# ----------------------------------------------------------------------
# Reductions and shape
# ----------------------------------------------------------------------
def tensor_sum(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(grad: np.ndarray):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape).copy(),)

    return Tensor._from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def tensor_mean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise DimensionError("mean over an empty axis")
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {original} to {shape}") from None
    return Tensor._from_op(data, (a,), lambda g: (g.reshape(original),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._from_op(data, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def take_rows(a: ArrayLike, rows: np.ndarray) -> Tensor:
    """Gather rows along the first axis"""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    shape = a.shape

    def backward(grad: np.ndarray):
        out = np.zeros(shape, dtype=np.float64)
        np.add.at(out, rows, grad)
        return (out,)

    return Tensor._from_op(a.data[rows], (a,), backward, "take_rows")


def place_rows(a: ArrayLike, rows: np.ndarray, n_rows: int) -> Tensor:
    """Scatter ``a``'s rows into a zero tensor with ``n_rows`` rows"""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    data = np.zeros((n_rows,) + a.shape[1:], dtype=np.float64)
    data[rows] = a.data
    return Tensor._from_op(data, (a,), lambda g: (g[rows],), "place_rows")


# ----------------------------------------------------------------------
# Normalisation and probability
# ----------------------------------------------------------------------
def layer_norm(x: ArrayLike, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then apply gain/bias.

    A constant row normalises to the zero vector (then ``bias``).

    Raises:
        DimensionError: If the last axis has fewer than 2 entries
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise DimensionError(f"layer_norm needs at least 2 features, got shape {x.shape}")
    d = x.shape[-1]
    for label, param in (("gain", gain), ("bias", bias)):
        if param is not None and param.shape != (d,):
            raise DimensionError(f"layer_norm {label} shape {param.shape} does not match ({d},)")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    out = x_hat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    parents = [x] + [p for p in (gain, bias) if p is not None]
    lead = tuple(range(x.ndim - 1))

    def backward(grad: np.ndarray):
        d_hat = grad * gain.data if gain is not None else grad
        dx = inv_std * (d_hat - d_hat.mean(axis=-1, keepdims=True)
                        - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append((grad * x_hat).sum(axis=lead))
        if bias is not None:
            grads.append(grad.sum(axis=lead))
        return grads

    return Tensor._from_op(out, parents, backward, "layer_norm")


def softmax(x: ArrayLike, temperature: float = 1.0) -> Tensor:
    """Temperature softmax over the last axis (max-shifted).

    Raises:
        ParameterError: If ``temperature`` is not a positive finite number
    """
    if not np.isfinite(temperature) or temperature <= 0:
        raise ParameterError(f"softmax temperature must be > 0, got {temperature}")
    x = as_tensor(x)
    shifted = (x.data - x.data.max(axis=-1, keepdims=True)) / temperature
    expo = np.exp(shifted)
    out = expo / expo.sum(axis=-1, keepdims=True)

    def backward(grad: np.ndarray):
        return (out * (grad - (grad * out).sum(axis=-1, keepdims=True)) / temperature,)

    return Tensor._from_op(out, (x,), backward, "softmax")


def cross_entropy(logits: ArrayLike, labels: np.ndarray, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy of (B, C) logits against integer labels.

    Args:
        logits: Unnormalised class scores
        labels: Integer class per row
        reduction: ``mean``, ``sum`` or ``none`` (per-sample vector)

    Raises:
        DataError: If a label is outside ``[0, C)``
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy expects (B, C) logits and (B,) labels, got {logits.shape}, {labels.shape}")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    if reduction not in ("mean", "sum", "none"):
        raise ParameterError(f"unknown reduction {reduction!r}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(labels.size)
    per_sample = -log_probs[rows, labels]
    residual = np.exp(log_probs)
    residual[rows, labels] -= 1.0
    batch = max(labels.size, 1)

    if reduction == "mean":
        return Tensor._from_op(per_sample.mean() if labels.size else 0.0, (logits,),
                               lambda g: (g * residual / batch,), "cross_entropy")
    if reduction == "sum":
        return Tensor._from_op(per_sample.sum(), (logits,), lambda g: (g * residual,), "cross_entropy")
    return Tensor._from_op(per_sample, (logits,), lambda g: (g[:, None] * residual,), "cross_entropy")


# ----------------------------------------------------------------------
# Selections and geometry
# ----------------------------------------------------------------------
def topk_mask(x: ArrayLike, k: int) -> Tuple[Tensor, np.ndarray]:
    """Keep the ``k`` largest entries of each row, zero the rest.

    Ties go to the lowest index. The gradient passes through kept entries
    only.

    Returns:
        Tuple of (masked tensor, ascending kept indices of shape (..., k))
    """
    x = as_tensor(x)
    d = x.shape[-1]
    if not 1 <= k <= d:
        raise ParameterError(f"top-k needs 1 <= k <= {d}, got k={k}")
    kept = np.argsort(-x.data, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(x.shape, dtype=bool)
    np.put_along_axis(mask, kept, True, axis=-1)
    out = np.where(mask, x.data, 0.0)
    return Tensor._from_op(out, (x,), lambda g: (g * mask,), "topk"), np.sort(kept, axis=-1)


def cosine_rows(a: ArrayLike, b: ArrayLike, eps: float = COSINE_EPS) -> Tensor:
    """Row-wise cosine similarity of (B, d) against (B, d) or a shared (d,) vector.

    Rows where either norm is below ``eps`` score 0 with zero gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or a.shape[-1] != b.shape[-1] or b.ndim > 2 or (b.ndim == 2 and b.shape != a.shape):
        raise DimensionError(f"cosine_rows shape mismatch: {a.shape} vs {b.shape}")
    b_full = np.broadcast_to(b.data, a.shape)
    norm_a = np.linalg.norm(a.data, axis=1)
    norm_b = np.linalg.norm(b_full, axis=1)
    valid = (norm_a >= eps) & (norm_b >= eps)
    denom = np.where(valid, norm_a * norm_b, 1.0)
    cos = np.where(valid, (a.data * b_full).sum(axis=1) / denom, 0.0)
    safe_a = np.where(valid, norm_a, 1.0)[:, None]
    safe_b = np.where(valid, norm_b, 1.0)[:, None]
    b_shape = b.shape

    def backward(grad: np.ndarray):
        g = (grad * valid)[:, None]
        da = g * (b_full / (safe_a * safe_b) - cos[:, None] * a.data / safe_a ** 2)
        db = g * (a.data / (safe_a * safe_b) - cos[:, None] * b_full / safe_b ** 2)
        return da, _unbroadcast(db, b_shape)

    return Tensor._from_op(np.clip(cos, -1.0, 1.0), (a, b), backward, "cosine")


def pairwise_sq_dist(p: ArrayLike) -> Tensor:
    """Squared Euclidean distances between all rows of a (B, d) tensor"""
    p = as_tensor(p)
    if p.ndim != 2:
        raise DimensionError(f"pairwise_sq_dist expects (B, d), got {p.shape}")
    diff = p.data[:, None, :] - p.data[None, :, :]

    def backward(grad: np.ndarray):
        return (2.0 * np.einsum("ij,ijd->id", grad + grad.T, diff),)

    return Tensor._from_op((diff * diff).sum(axis=-1), (p,), backward, "pairwise_sq_dist")


# ----------------------------------------------------------------------
# Finite-difference oracle
# ----------------------------------------------------------------------
def numerical_gradient(fn: Callable[[], Tensor], target: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn()`` with respect to ``target``"""
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            upper = fn().item()
            flat[index] = original - step
            lower = fn().item()
            flat[index] = original
            out[index] = (upper - lower) / (2.0 * step)
    return grad


def gradcheck(fn: Callable[[], Tensor], targets: Sequence[Tensor], step: float = 1e-5,
              floor: float = 1e-6) -> float:
    """Compare backward gradients with central differences.

    Args:
        fn: Builds the scalar loss from the current values of ``targets``
        targets: Leaf tensors with ``requires_grad`` set
        step: Finite-difference step
        floor: Lower bound on the relative-error denominator

    Returns:
        Largest relative error ``|a - n| / max(|a|, |n|, floor)`` over all entries
    """
    for target in targets:
        target.zero_grad()
    fn().backward()
    analytic = [target.grad.copy() for target in targets]
    worst = 0.0
    for target, expected in zip(targets, analytic):
        numeric = numerical_gradient(fn, target, step)
        denom = np.maximum(np.maximum(np.abs(expected), np.abs(numeric)), floor)
        if expected.size:
            worst = max(worst, float(np.max(np.abs(expected - numeric) / denom)))
    for target in targets:
        target.zero_grad()
    return worst
