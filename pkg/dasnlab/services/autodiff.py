"""
Reverse-mode automatic differentiation over dense float64 tensors.

A `Tape` is built fresh for every forward pass. Parameters enter the tape
through `Tape.watch`, every op appends one record holding its input node ids
and a local backward rule, and `backward` walks the records in reverse to
produce a gradient map keyed by parameter name.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dasnlab.errors.exceptions import (
    ArityError,
    ContractError,
    DimensionError,
    NonFiniteError,
)

BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
Operand = Union["Tensor", float, int]


def _check_finite(data: np.ndarray, op: str) -> None:
    """Raise NonFiniteError naming `op` if `data` holds NaN or Inf."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value", op=op)


class Tensor:
    """
    Shape-carrying float64 array, optionally bound to a tape node.
    """

    __slots__ = ("data", "node_id", "tape")

    def __init__(self, data, node_id: Optional[int] = None, tape: Optional["Tape"] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node_id = node_id
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.node_id})"


def constant(data) -> Tensor:
    """Wrap an array as a tensor that records nothing."""
    array = np.array(data, dtype=np.float64)
    _check_finite(array, "constant")
    return Tensor(array)


class Tape:
    """
    Ordered record of operations for one forward pass.
    """

    def __init__(self):
        self._parents: List[Tuple[Optional[int], ...]] = []
        self._rules: List[Optional[BackwardRule]] = []
        self._shapes: List[Tuple[int, ...]] = []
        self._ops: List[str] = []
        self._leaf_names: Dict[int, str] = {}
        self._leaves: Dict[str, Tensor] = {}

    def __len__(self):
        return len(self._rules)

    def watch(self, name: str, array: np.ndarray) -> Tensor:
        """
        Register a parameter as a leaf node.

        Watching the same name twice returns the same node, so a parameter
        shared by several paths accumulates one gradient.
        """
        if name in self._leaves:
            return self._leaves[name]
        data = np.array(array, dtype=np.float64)
        _check_finite(data, f"watch({name})")
        node_id = len(self._rules)
        self._parents.append(())
        self._rules.append(None)
        self._shapes.append(data.shape)
        self._ops.append(name)
        self._leaf_names[node_id] = name
        tensor = Tensor(data, node_id, self)
        self._leaves[name] = tensor
        return tensor

    def record(
        self,
        data: np.ndarray,
        inputs: Sequence[Tensor],
        rule: BackwardRule,
        op: str = "op",
    ) -> Tensor:
        node_id = len(self._rules)
        self._parents.append(tuple(t.node_id for t in inputs))
        self._rules.append(rule)
        self._shapes.append(data.shape)
        self._ops.append(op)
        return Tensor(data, node_id, self)

    def backward(self, root: Tensor) -> Dict[str, np.ndarray]:
        """
        Propagate d(root)/d(node) back to every watched parameter.

        Returns:
            Gradient map with one entry per watched parameter; parameters the
            root does not depend on receive exact zeros.

        Raises:
            ContractError: If root is not a single-element tensor on this tape.
            NonFiniteError: If a gradient reaching some node is NaN or Inf.
        """
        if root.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        if root.tape is not self or root.node_id is None:
            raise ContractError("backward root is not recorded on this tape")

        pending: Dict[int, np.ndarray] = {root.node_id: np.ones(root.shape)}
        grads: Dict[str, np.ndarray] = {}
        for node in range(root.node_id, -1, -1):
            g = pending.pop(node, None)
            if g is None:
                continue
            _check_finite(g, f"{self._ops[node]} gradient")
            rule = self._rules[node]
            if rule is None:
                grads[self._leaf_names[node]] = g
                continue
            for parent, pg in zip(self._parents[node], rule(g)):
                if parent is None or pg is None:
                    continue
                if parent in pending:
                    pending[parent] = pending[parent] + pg
                else:
                    pending[parent] = pg

        result = {}
        for name, leaf in self._leaves.items():
            result[name] = grads.get(name, np.zeros(leaf.shape))
        return result


def backward(root: Tensor, tape: Optional[Tape] = None) -> Dict[str, np.ndarray]:
    """Gradient map of a scalar root; see `Tape.backward`."""
    tape = tape if tape is not None else root.tape
    if tape is None:
        raise ContractError("backward root is a constant; nothing was recorded")
    return tape.backward(root)


def _as_tensor(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return constant(value)


def _tape_of(*tensors: Tensor) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is not None and t.tape is not tape:
            raise ContractError("operands are recorded on different tapes")
        tape = t.tape
    return tape


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], rule: BackwardRule) -> Tensor:
    _check_finite(data, op)
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(data)
    return tape.record(data, inputs, rule, op)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m x k] and b [k x n]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def rule(g):
        return g @ b_data.T, a_data.T @ g

    return _emit("matmul", a_data @ b_data, (a, b), rule)


def add(a: Operand, b: Operand) -> Tensor:
    """Elementwise sum with numpy broadcasting (bias rows, scalars)."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}") from None
    a_shape, b_shape = a.shape, b.shape

    def rule(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _emit("add", a.data + b.data, (a, b), rule)


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}") from None
    a_data, b_data = a.data, b.data

    def rule(g):
        return _unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)

    return _emit("mul", a_data * b_data, (a, b), rule)


def relu(a: Tensor) -> Tensor:
    """max(0, a); the gradient at exactly 0 is 0."""
    mask = a.data > 0

    def rule(g):
        return (np.where(mask, g, 0.0),)

    return _emit("relu", np.where(mask, a.data, 0.0), (a,), rule)


def grl(a: Tensor) -> Tensor:
    """Gradient reversal: identity forward, gradient times -1 backward."""

    def rule(g):
        return (np.negative(g),)

    return _emit("grl", a.data.copy(), (a,), rule)


def _check_classes(a: Tensor, op: str) -> None:
    if a.data.ndim == 0 or a.shape[-1] < 2:
        raise ArityError(f"{op} needs at least 2 entries on the last axis, got shape {a.shape}")


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max subtraction."""
    _check_classes(a, "softmax")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", s, (a,), rule)


def log_softmax(a: Tensor) -> Tensor:
    """Log of the softmax along the last axis."""
    _check_classes(a, "log_softmax")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    s = np.exp(out)

    def rule(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", out, (a,), rule)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick a[i, index[i]] for every row i of a 2-D tensor."""
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.shape != (a.shape[0],):
        raise DimensionError(f"gather_rows shape mismatch: {a.shape} with index {index.shape}")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def rule(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return (out,)

    return _emit("gather_rows", a.data[rows, index], (a,), rule)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient flows only where a > floor."""
    mask = a.data > floor

    def rule(g):
        return (np.where(mask, g, 0.0),)

    return _emit("clamp_min", np.where(mask, a.data, floor), (a,), rule)


def reduce_mean(a: Tensor) -> Tensor:
    """Arithmetic mean of all elements as a 0-d tensor."""
    n = a.size
    if n == 0:
        raise ArityError("reduce_mean of an empty tensor")
    shape = a.shape

    def rule(g):
        return (np.full(shape, float(g) / n),)

    return _emit("reduce_mean", np.asarray(a.data.mean()), (a,), rule)


def numerical_gradient(
    fn: Callable[[np.ndarray], float], point: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """
    Central finite-difference gradient of a scalar function.

    Args:
        fn: Function of one float64 array returning a float.
        point: Where to differentiate; not modified.
        h: Step size.

    Returns:
        Array shaped like point.
    """
    point = np.array(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        plus = fn(point)
        flat[i] = saved - h
        minus = fn(point)
        flat[i] = saved
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad
