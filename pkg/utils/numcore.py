import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

# --- ERRORS ---


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericalError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


class ContractError(RuntimeError):
    """Raised when a caller violates an operation's preconditions."""


class GradCheckError(NumericalError):
    """Raised when the checked function is not finite at a perturbed point."""


# Creation ids give every node a position in a topological order.
_node_ids = itertools.count()

_SQRT_2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    """
    A dense float64 array that remembers how it was computed.

    Values are read-only after construction. Only the optimizer replaces
    them, through `assign`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "node_id")
    __array_priority__ = 100.0

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[Callable] = None,
        op: str = "leaf",
    ):
        self.data = np.array(data, dtype=np.float64)
        self.data.flags.writeable = False
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.node_id = next(_node_ids)

    # --- properties ---

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def assign(self, new_data: np.ndarray):
        """Replaces the values of a leaf in place (optimizer updates)."""
        if not self.is_leaf:
            raise ContractError(f"Cannot assign to non-leaf node '{self.op}'")
        new_data = np.array(new_data, dtype=np.float64)
        if new_data.shape != self.data.shape:
            raise DimensionError(f"assign shape {new_data.shape} does not match {self.data.shape}")
        _check_finite(new_data, "assign")
        new_data.flags.writeable = False
        self.data = new_data

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # --- operators ---

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Creates a leaf tensor from array-like data."""
    data = np.array(data, dtype=np.float64)
    _check_finite(data, "tensor")
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return tensor(value)


# --- INTERNAL HELPERS ---


def _check_finite(data: np.ndarray, op: str):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"Operation '{op}' produced non-finite values")


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _logsumexp_np(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))).squeeze(axis)


def _softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


# --- ELEMENTWISE ---


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add shape mismatch: {a.shape} and {b.shape}")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub shape mismatch: {a.shape} and {b.shape}")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(out, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul shape mismatch: {a.shape} and {b.shape}")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data / b.data
    except ValueError:
        raise DimensionError(f"div shape mismatch: {a.shape} and {b.shape}")

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _node(out, (a, b), backward, "div")


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _node(out, (a,), lambda g: (g / a.data,), "log")


def gelu(x: ArrayLike, approximate: bool = False) -> Tensor:
    """
    Gaussian error linear unit.

    The exact form x * Phi(x) is the default; `approximate=True` selects the
    tanh approximation.
    """
    x = as_tensor(x)
    v = x.data
    if approximate:
        inner = _SQRT_2_OVER_PI * (v + 0.044715 * v**3)
        t = np.tanh(inner)
        out = 0.5 * v * (1.0 + t)

        def backward(g):
            d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * v * v)
            return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner),)

        return _node(out, (x,), backward, "gelu_tanh")

    cdf = 0.5 * (1.0 + erf(v / _SQRT_2))
    out = v * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        return (g * (cdf + v * pdf),)

    return _node(out, (x,), backward, "gelu")


# --- SHAPE ---


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"Cannot reshape {a.shape} into {shape}")
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D array, got shape {a.shape}")
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def index(a: ArrayLike, key) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)
    try:
        out = a.data[key]
    except IndexError as e:
        raise IndexError(f"Index {key!r} out of range for shape {a.shape}: {e}")

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return _node(out, (a,), backward, "index")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one array")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat shape mismatch along axis {axis}: {shapes}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tensors, backward, "concat")


# --- REDUCTIONS ---


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def reduce_sum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _node(
        out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),), "sum"
    )


def reduce_mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise DimensionError("mean of an empty array")
    count = a.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    return _node(
        out,
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,),
        "mean",
    )


def logsumexp(a: ArrayLike, axis: int) -> Tensor:
    """log(sum(exp(a))) along `axis`, computed with max subtraction."""
    a = as_tensor(a)
    out = _logsumexp_np(a.data, axis)

    def backward(g):
        weights = np.exp(a.data - np.expand_dims(out, axis))
        return (np.expand_dims(g, axis) * weights,)

    return _node(out, (a,), backward, "logsumexp")


# --- LINEAR ALGEBRA ---


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of a (m x k) or (k,) with b (k x n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        grad_a = g @ b.data.T if a.requires_grad else None
        if not b.requires_grad:
            grad_b = None
        elif a.ndim == 1:
            grad_b = np.outer(a.data, g)
        else:
            grad_b = a.data.T @ g
        return grad_a, grad_b

    return _node(out, (a, b), backward, "matmul")


def conv1d(x: ArrayLike, weight: ArrayLike, bias: ArrayLike, stride: int) -> Tensor:
    """
    Strided 1-D convolution over a time-major signal.

    x: (L, C_in), weight: (K, C_in, C_out), bias: (C_out,) -> (T, C_out)
    with T = (L - K) // stride + 1.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 3 or weight.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1d shape mismatch: input {x.shape}, kernel {weight.shape}")
    if stride < 1:
        raise ContractError(f"conv1d stride must be >= 1, got {stride}")
    length, c_in = x.shape
    k, _, c_out = weight.shape
    frames = (length - k) // stride + 1
    if frames < 1:
        raise DimensionError(f"conv1d input length {length} shorter than kernel {k}")

    idx = stride * np.arange(frames)[:, None] + np.arange(k)[None, :]
    patches = x.data[idx].reshape(frames, k * c_in)
    w2 = weight.data.reshape(k * c_in, c_out)
    out = patches @ w2 + bias.data

    def backward(g):
        grad_w = (patches.T @ g).reshape(weight.shape) if weight.requires_grad else None
        grad_b = g.sum(axis=0) if bias.requires_grad else None
        grad_x = None
        if x.requires_grad:
            d_patches = (g @ w2.T).reshape(frames, k, c_in)
            grad_x = np.zeros_like(x.data)
            last = stride * (frames - 1) + 1
            for offset in range(k):
                grad_x[offset : offset + last : stride] += d_patches[:, offset, :]
        return grad_x, grad_w, grad_b

    return _node(out, (x, weight, bias), backward, "conv1d")


# --- NORMALISATION AND PROBABILITIES ---


def softmax_rows(m: ArrayLike) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    m = as_tensor(m)
    if m.size == 0 or m.ndim == 0:
        raise DimensionError(f"softmax_rows needs a non-empty array, got shape {m.shape}")
    out = _softmax_np(m.data)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _node(out, (m,), backward, "softmax")


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5) -> Tensor:
    """Per-row standardisation followed by an affine transform."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm shape mismatch: input {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        grad_x = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        grad_gain = (flat_g * xhat.reshape(-1, d)).sum(axis=0)
        grad_bias = flat_g.sum(axis=0)
        return grad_x, grad_gain, grad_bias

    return _node(out, (x, gain, bias), backward, "layer_norm")


def cross_entropy(logits: ArrayLike, label: int) -> Tensor:
    """Categorical cross-entropy -log softmax(logits)[label] as a scalar."""
    logits = as_tensor(logits)
    if logits.ndim != 1 or logits.size == 0:
        raise DimensionError(f"cross_entropy expects a non-empty vector, got shape {logits.shape}")
    n_classes = logits.shape[0]
    if not 0 <= int(label) < n_classes:
        raise IndexError(f"label {label} out of range for {n_classes} classes")
    label = int(label)
    lse = _logsumexp_np(logits.data, 0)
    out = np.asarray(lse - logits.data[label])

    def backward(g):
        grad = np.exp(logits.data - lse)
        grad[label] -= 1.0
        return (g * grad,)

    return _node(out, (logits,), backward, "cross_entropy")


def dropout(x: ArrayLike, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout. A rate of 0 or a missing rng is the identity."""
    x = as_tensor(x)
    if rate <= 0.0 or rng is None:
        return x
    if rate >= 1.0:
        raise ContractError(f"dropout rate must be < 1, got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# --- REVERSE PASS ---


@dataclass
class ComputationRecord:
    """Every gradient-carrying node reachable from a root, in creation order."""

    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> "ComputationRecord":
        seen: Dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if node.node_id in seen or not node.requires_grad:
                continue
            seen[node.node_id] = node
            stack.extend(node._parents)
        return cls(nodes=[seen[k] for k in sorted(seen)])

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, record: Optional[ComputationRecord] = None) -> ComputationRecord:
    """
    Reverse pass from a scalar loss. Gradients accumulate into the `grad`
    attribute of every requires_grad leaf; the record is returned so callers
    can inspect or replay it.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if record is None:
        record = ComputationRecord.trace(loss)
    if not loss.requires_grad:
        return record

    pending: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(record.nodes):
        g = pending.pop(node.node_id, None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent.node_id in pending:
                pending[parent.node_id] = pending[parent.node_id] + parent_grad
            else:
                pending[parent.node_id] = parent_grad
    return record


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-4,
    max_elements: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compares analytic gradients with central differences.

    `f` receives the input tensors positionally and must return a scalar.
    Returns the worst relative error |a - n| / max(|a|, |n|, 1e-8). When
    `max_elements` is set, that many randomly chosen entries of each input
    are checked instead of all of them.
    """
    if h <= 0:
        raise ContractError(f"grad_check step must be > 0, got {h}")

    leaves = [tensor(t.data, requires_grad=True) for t in inputs]
    loss = f(*leaves)
    backward(loss)
    rng = np.random.default_rng(seed)

    def evaluate(position: int, flat_index: int, delta: float) -> float:
        perturbed = []
        for i, t in enumerate(inputs):
            values = t.data.copy()
            if i == position:
                values.reshape(-1)[flat_index] += delta
            perturbed.append(tensor(values))
        try:
            value = f(*perturbed).item()
        except NumericalError as e:
            raise GradCheckError(
                f"f is not finite at input {position}, element {flat_index}, step {delta:+g}: {e}"
            )
        if not math.isfinite(value):
            raise GradCheckError(
                f"f is not finite at input {position}, element {flat_index}, step {delta:+g}"
            )
        return value

    worst = 0.0
    for position, leaf in enumerate(leaves):
        analytic = np.zeros(leaf.size) if leaf.grad is None else leaf.grad.reshape(-1)
        indices = np.arange(leaf.size)
        if max_elements is not None and leaf.size > max_elements:
            indices = np.sort(rng.choice(leaf.size, size=max_elements, replace=False))
        for flat_index in indices:
            numeric = (evaluate(position, flat_index, h) - evaluate(position, flat_index, -h)) / (
                2.0 * h
            )
            a = analytic[flat_index]
            denominator = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denominator)
    logging.debug(f"grad_check: {len(leaves)} inputs, worst relative error {worst:.3e}")
    return worst
