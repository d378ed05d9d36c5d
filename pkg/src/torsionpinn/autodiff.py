"""Second-order forward jets and reverse-mode parameter gradients.

Two small mechanisms live here:

* ``Jet2`` carries a field value together with its first derivatives and its
  *pure* second derivatives with respect to a set of seeded inputs.  The jet
  rules are written once and work whether the fields hold Python floats,
  numpy arrays (batched evaluation) or :class:`Var` nodes (training).
* ``Var`` is a reverse-mode node over numpy arrays supporting a closed set of
  operations (affine maps, tanh, products, exp, reciprocal, sums).  Anything
  outside that set is not differentiable here on purpose.

Batched jets use the layout ``value: (B, n)``, ``d1, d2: (d, B, n)`` so that a
value broadcasts against the derivative stacks along the leading axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import StructuralError, TrainingDivergenceError


# ---------------------------------------------------------------------------
# reverse mode
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _value(x: Any) -> Any:
    return x.value if isinstance(x, Var) else x


class Var:
    """A node in a reverse-mode graph holding a float64 array."""

    __slots__ = ("value", "grad", "_parents", "_backward")
    __array_ufunc__ = None  # ndarray (op) Var defers to Var's reflected op

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        ov = _value(other)
        out_value = self.value + ov

        def backward(g):
            grads = [_unbroadcast(g, self.value.shape)]
            if isinstance(other, Var):
                grads.append(_unbroadcast(g, other.value.shape))
            return grads

        return Var(out_value, _parents(self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: [-g])

    def __sub__(self, other):
        return self + (-other if isinstance(other, Var) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        ov = _value(other)
        sv = self.value
        out_value = sv * ov

        def backward(g):
            grads = [_unbroadcast(g * ov, sv.shape)]
            if isinstance(other, Var):
                grads.append(_unbroadcast(g * sv, other.value.shape))
            return grads

        return Var(out_value, _parents(self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self * reciprocal(other)
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    # -- reductions / reshaping ------------------------------------------
    def sum(self):
        shape = self.value.shape
        return Var(self.value.sum(), (self,), lambda g: [np.broadcast_to(g, shape)])

    def mean(self):
        return self.sum() * (1.0 / max(self.value.size, 1))

    def __getitem__(self, index):
        shape = self.value.shape

        def backward(g):
            full = np.zeros(shape)
            if _is_basic(index):
                full[index] = g
            else:
                np.add.at(full, index, g)
            return [full]

        return Var(self.value[index], (self,), backward)

    def segment(self, start: int, shape: tuple):
        """View of a flat vector slice reshaped to ``shape``."""
        size = int(np.prod(shape))
        total = self.value.shape

        def backward(g):
            full = np.zeros(total)
            full[start:start + size] = g.reshape(-1)
            return [full]

        return Var(self.value[start:start + size].reshape(shape), (self,), backward)

    # -- backprop ---------------------------------------------------------
    def backward(self) -> None:
        if self.value.size != 1:
            raise StructuralError("backward() needs a scalar output")
        order = _topological(self)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if parent.grad is None:
                    parent.grad = g  # never mutated in place below
                else:
                    parent.grad = parent.grad + g
            if node is not self:
                node.grad = None  # release intermediate adjoints early


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis for i in items)


def _parents(a: Var, b: Any) -> tuple:
    return (a, b) if isinstance(b, Var) else (a,)


def _topological(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(x)
    t = np.tanh(x.value)
    return Var(t, (x,), lambda g: [g * (1.0 - t * t)])


def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    e = np.exp(x.value)
    return Var(e, (x,), lambda g: [g * e])


def reciprocal(x):
    if not isinstance(x, Var):
        return 1.0 / np.asarray(x, dtype=np.float64) if np.ndim(x) else 1.0 / x
    r = 1.0 / x.value
    return Var(r, (x,), lambda g: [-g * r * r])


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis; any operand may be a Var."""
    xv, wv = _value(x), _value(weight)
    out = np.matmul(xv, wv.T)
    if bias is not None:
        out = out + _value(bias)
    parents = tuple(p for p in (x, weight, bias) if isinstance(p, Var))
    if not parents:
        return out

    def backward(g):
        grads = []
        g2 = g.reshape(-1, g.shape[-1])
        if isinstance(x, Var):
            grads.append(np.matmul(g, wv))
        if isinstance(weight, Var):
            grads.append(g2.T @ np.reshape(xv, (-1, xv.shape[-1])))
        if isinstance(bias, Var):
            grads.append(g2.sum(axis=0))
        return grads

    return Var(out, parents, backward)


# ---------------------------------------------------------------------------
# jets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Jet2:
    """Value, gradient and Hessian diagonal of a field w.r.t. seeded inputs."""

    value: Any
    d1: Any
    d2: Any

    def __post_init__(self):
        n1, n2 = _lead(self.d1), _lead(self.d2)
        if n1 != n2:
            raise StructuralError(f"jet d1/d2 lengths differ: {n1} != {n2}")

    @property
    def dim(self) -> int:
        return _lead(self.d1)

    def __add__(self, other):
        if isinstance(other, Jet2):
            _check_dims(self, other)
            return Jet2(self.value + other.value, self.d1 + other.d1, self.d2 + other.d2)
        return Jet2(self.value + other, self.d1, self.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.value, -self.d1, -self.d2)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return jet_mul(self, other)
        return Jet2(self.value * other, self.d1 * other, self.d2 * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return jet_mul(self, jet_reciprocal(other))
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return jet_reciprocal(self) * other

    def numpy(self) -> "Jet2":
        """Drop graph information, keeping plain arrays."""
        return Jet2(_value(self.value), _value(self.d1), _value(self.d2))


def _lead(a) -> int:
    shape = np.shape(_value(a))
    if len(shape) == 0:
        raise StructuralError("jet derivative stacks must have a leading seed axis")
    return shape[0]


def _check_dims(*jets: Jet2) -> None:
    dims = {j.dim for j in jets}
    if len(dims) > 1:
        raise StructuralError(f"jets seeded with different dimensions: {sorted(dims)}")


def jet_constant(value, dim: int) -> Jet2:
    z = np.zeros((dim,) + np.shape(value))
    return Jet2(value, z, z.copy())


def jet_seed(x: Sequence[float] | np.ndarray) -> list[Jet2]:
    """One scalar jet per coordinate of ``x``, coordinate i seeded with e_i."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    eye = np.eye(d)
    return [Jet2(float(x[i]), eye[i].copy(), np.zeros(d)) for i in range(d)]


def jet_affine(w_row: Sequence[float], b: float, inputs: Sequence[Jet2]) -> Jet2:
    """Scalar affine combination ``sum_i w_i * a_i + b`` of jets."""
    if len(w_row) != len(inputs):
        raise StructuralError(f"{len(w_row)} weights for {len(inputs)} inputs")
    if not inputs:
        raise StructuralError("affine map needs at least one input jet")
    _check_dims(*inputs)
    value = b
    d1 = np.zeros_like(np.asarray(_value(inputs[0].d1), dtype=np.float64))
    d2 = np.zeros_like(d1)
    for w, a in zip(w_row, inputs):
        value = value + w * a.value
        d1 = d1 + w * a.d1
        d2 = d2 + w * a.d2
    return Jet2(value, d1, d2)


def jet_linear(a: Jet2, weight, bias=None) -> Jet2:
    """Batched affine layer: each of value/d1/d2 goes through ``x @ W.T``."""
    return Jet2(linear(a.value, weight, bias), linear(a.d1, weight), linear(a.d2, weight))


def jet_tanh(a: Jet2) -> Jet2:
    t = tanh(a.value)
    s = 1.0 - t * t
    sd1 = s * a.d1
    return Jet2(t, sd1, s * a.d2 - 2.0 * t * sd1 * a.d1)


def jet_exp(a: Jet2) -> Jet2:
    e = exp(a.value)
    return Jet2(e, e * a.d1, e * (a.d2 + a.d1 * a.d1))


def jet_mul(a: Jet2, b: Jet2) -> Jet2:
    _check_dims(a, b)
    return Jet2(
        a.value * b.value,
        a.d1 * b.value + a.value * b.d1,
        a.d2 * b.value + 2.0 * a.d1 * b.d1 + a.value * b.d2,
    )


def jet_reciprocal(a: Jet2) -> Jet2:
    r = reciprocal(a.value)
    r2 = r * r
    return Jet2(r, -r2 * a.d1, 2.0 * r2 * r * a.d1 * a.d1 - r2 * a.d2)


def jet_sigmoid(a: Jet2) -> Jet2:
    """Logistic function as ``(1 + tanh(z/2)) / 2``; never overflows."""
    return 0.5 * jet_tanh(0.5 * a) + 0.5


# ---------------------------------------------------------------------------
# parameter gradients
# ---------------------------------------------------------------------------

def param_gradient(loss_evaluator: Callable[[Var], Var], params, *, epoch: int | None = None):
    """Loss value and its gradient with respect to a flat parameter vector.

    ``loss_evaluator`` receives the parameters as a :class:`Var` and must
    return a scalar built from the supported operations.
    """
    theta = Var(np.array(params, dtype=np.float64, copy=True))
    loss = loss_evaluator(theta)
    if not isinstance(loss, Var):
        # constant in theta
        value = float(np.asarray(loss))
        if not np.isfinite(value):
            raise TrainingDivergenceError("non-finite loss", epoch=epoch)
        return value, np.zeros_like(theta.value)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingDivergenceError("non-finite loss", epoch=epoch)
    loss.backward()
    grad = theta.grad if theta.grad is not None else np.zeros_like(theta.value)
    return value, grad
