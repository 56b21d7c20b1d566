"""Array-valued reverse-mode autodiff plus second-order forward jets.

Two layers live here:

* :class:`Tensor` is a node in a reverse-mode graph over float64 numpy
  arrays. It gives gradients of a scalar loss with respect to leaf tensors
  (the network parameters).
* :class:`Jet` carries a value together with its first and pure second
  derivatives with respect to a small set of seeded inputs (x, y, z, t).
  Jet components are Tensors, so a loss built from derivatives of the
  network output is itself differentiable with respect to the parameters.

Mixed partials are never formed; the heat equation only needs the diagonal
of the Hessian.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numba
import numpy as np

INPUT_NAMES = ("x", "y", "z", "t")


class DomainError(ValueError):
    """Input outside the domain an operation accepts."""


class NonFiniteError(FloatingPointError):
    """A NaN or inf appeared in a computation that must stay finite."""

    def __init__(self, message: str, op: str | None = None, value=None):
        super().__init__(message)
        self.op = op
        self.value = value


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array recorded on the reverse-mode graph."""

    __slots__ = ("value", "requires_grad", "parents", "vjp", "op")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, parents=(), vjp=None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.op = op

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(value, parents: tuple, vjp: Callable, op: str) -> "Tensor":
        if any(p.requires_grad for p in parents):
            return Tensor(value, True, parents, vjp, op)
        return Tensor(value, False, (), None, op)

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.value + other.value,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.value - other.value,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)),
            "sub",
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return Tensor._make(-self.value, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.value, other.value
        return Tensor._make(
            x * y,
            (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.value, other.value
        out = x / y
        return Tensor._make(
            out,
            (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)),
            "div",
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        p = float(exponent)
        x = self.value
        return Tensor._make(x**p, (self,), lambda g: (g * p * x ** (p - 1.0),), "pow")

    # -- linear algebra and shaping -----------------------------------------

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.value, other.value
        if x.ndim < 2 or y.ndim < 2:
            raise ValueError("matmul expects operands with at least two dimensions")

        def vjp(g):
            gx = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
            gy = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
            return gx, gy

        return Tensor._make(x @ y, (self, other), vjp, "matmul")

    @property
    def T(self) -> "Tensor":
        return Tensor._make(
            np.swapaxes(self.value, -1, -2), (self,), lambda g: (np.swapaxes(g, -1, -2),), "transpose"
        )

    def __getitem__(self, index):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            out[index] = g
            return (out,)

        return Tensor._make(self.value[index], (self,), vjp, "getitem")

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor._make(self.value.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def sum(self, axis=None) -> "Tensor":
        shape = self.shape

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.value.sum(axis=axis), (self,), vjp, "sum")

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.value.size)

    # -- unary functions -----------------------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.value)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        x = self.value
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,), "log")

    def sin(self) -> "Tensor":
        x = self.value
        return Tensor._make(np.sin(x), (self,), lambda g: (g * np.cos(x),), "sin")

    def cos(self) -> "Tensor":
        x = self.value
        return Tensor._make(np.cos(x), (self,), lambda g: (-g * np.sin(x),), "cos")

    def tanh(self) -> "Tensor":
        out = np.tanh(self.value)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    def sigmoid(self) -> "Tensor":
        out = sigmoid(self.value)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def sigmoid(u):
    """Logistic function, evaluated without overflow for any finite input."""
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(-np.abs(u))
    return np.where(u >= 0.0, 1.0, e) / (1.0 + e)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.value for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(out, tuple(tensors), vjp, "stack")


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, tuple(tensors), vjp, "concatenate")


def packed_linear(packed: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine layer on a packed jet of shape (C, N, fan_in).

    Channel 0 is the value and receives the bias; the derivative channels are
    mapped linearly. The weight gradient is a single (C*N)-row product.
    """
    weight, bias = as_tensor(weight), as_tensor(bias)
    p, w = packed.value, weight.value
    c, n, fan_in = p.shape
    rows = p.reshape(c * n, fan_in)
    out = (rows @ w.T).reshape(c, n, w.shape[0])
    out[0] += bias.value

    def vjp(g):
        g_rows = g.reshape(c * n, -1)
        g_p = (g_rows @ w).reshape(p.shape)
        g_w = g_rows.T @ rows
        g_b = g[0].sum(axis=0)
        return g_p, g_w, g_b

    return Tensor._make(out, (packed, weight, bias), vjp, "packed_linear")


@numba.njit(cache=True)
def _swish_jet_forward(p, sig, k, out, coef):
    # p, out: (1 + 2k, m); coef: (3, m) receives the first three derivatives of swish
    m = p.shape[1]
    for q in range(m):
        u = p[0, q]
        s = sig[q]
        ds = s * (1.0 - s)
        a = 1.0 - 2.0 * s
        coef[0, q] = s + u * ds
        coef[1, q] = ds * (2.0 + u * a)
        coef[2, q] = ds * (a * (3.0 + u * a) - 2.0 * u * ds)
        out[0, q] = u * s
    for c in range(k):
        for q in range(m):
            d = p[1 + c, q]
            f1 = coef[0, q]
            out[1 + c, q] = f1 * d
            out[1 + k + c, q] = coef[1, q] * d * d + f1 * p[1 + k + c, q]


@numba.njit(cache=True)
def _swish_jet_backward(p, k, coef, g, grad):
    m = p.shape[1]
    for q in range(m):
        grad[0, q] = g[0, q] * coef[0, q]
    for c in range(k):
        for q in range(m):
            f1 = coef[0, q]
            f2 = coef[1, q]
            d = p[1 + c, q]
            gf = g[1 + c, q]
            gs = g[1 + k + c, q]
            grad[0, q] += f2 * gf * d + coef[2, q] * gs * d * d + f2 * gs * p[1 + k + c, q]
            grad[1 + c, q] = f1 * gf + 2.0 * f2 * gs * d
            grad[1 + k + c, q] = f1 * gs


def packed_swish(packed: Tensor, k: int) -> Tensor:
    """Swish applied to a packed jet [value, k first, k second derivatives].

    With f = swish(u): first' = f'(u) du, second' = f''(u) du^2 + f'(u) d2u.
    The backward pass also needs the third derivative; all three are cached.
    """
    p = np.ascontiguousarray(packed.value)
    if p.ndim != 3 or p.shape[0] != 1 + 2 * k:
        raise ValueError(f"packed jet must have shape (1 + 2k, N, width), got {p.shape}")
    flat = p.reshape(p.shape[0], -1)
    out = np.empty_like(flat)
    coef = np.empty((3, flat.shape[1]))
    # numpy's vectorized exp is much faster than the scalar one inside numba
    _swish_jet_forward(flat, sigmoid(flat[0]), k, out, coef)

    def vjp(g):
        grad = np.empty_like(flat)
        _swish_jet_backward(flat, k, coef, np.ascontiguousarray(g).reshape(flat.shape), grad)
        return (grad.reshape(p.shape),)

    return Tensor._make(out.reshape(p.shape), (packed,), vjp, "packed_swish")


def pack(jet: "Jet") -> Tensor:
    return concatenate([jet.value.reshape((1,) + jet.value.shape), jet.first, jet.second], axis=0)


def unpack(packed: Tensor, names: tuple[str, ...] = INPUT_NAMES) -> "Jet":
    k = len(names)
    return Jet(packed[0], packed[1 : 1 + k], packed[1 + k :], names)


class GradientTape:
    """Topologically ordered record of every node feeding a scalar output.

    The tape is read-only once built, so calling :meth:`gradient` twice gives
    identical adjoints.
    """

    def __init__(self, output: Tensor):
        if output.value.size != 1:
            raise ValueError(f"gradient needs a scalar output, got shape {output.shape}")
        self.output = output
        self.nodes = self._toposort(output)
        if not np.isfinite(output.value).all():
            raise self._nonfinite_error()

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def _nonfinite_error(self) -> NonFiniteError:
        for node in self.nodes:
            if not np.isfinite(node.value).all():
                bad = node.value[~np.isfinite(node.value)].ravel()[0]
                return NonFiniteError(
                    f"non-finite value {bad} first produced by op '{node.op}' with shape {node.shape}",
                    op=node.op,
                    value=node.value,
                )
        return NonFiniteError(f"non-finite output {self.output.value}", op=self.output.op)

    def gradient(self, wrt: Iterable[Tensor]) -> list[np.ndarray]:
        adjoint: dict[int, np.ndarray] = {id(self.output): np.ones_like(self.output.value)}
        for node in reversed(self.nodes):
            g = adjoint.get(id(node))
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg
        return [np.array(adjoint.get(id(w), np.zeros_like(w.value)), dtype=np.float64) for w in wrt]


def backward(loss: Tensor, params: Sequence[Tensor]) -> np.ndarray:
    """Flat gradient of ``loss`` in the order of ``params`` (each raveled)."""
    grads = GradientTape(loss).gradient(params)
    if not grads:
        return np.zeros(0)
    return np.concatenate([g.ravel() for g in grads])


# -- forward-mode jets ------------------------------------------------------


class Jet:
    """Value with first and pure second derivatives w.r.t. seeded inputs.

    ``first[k]`` and ``second[k]`` hold d/du_k and d^2/du_k^2 for the k-th
    seeded input; both have the value's shape with a leading axis of size k.
    """

    __slots__ = ("value", "first", "second", "names")
    __array_priority__ = 200.0

    def __init__(self, value, first, second, names: tuple[str, ...] = INPUT_NAMES):
        self.value = as_tensor(value)
        self.first = as_tensor(first)
        self.second = as_tensor(second)
        self.names = names

    def __repr__(self):
        return f"Jet(value={self.value.value!r}, names={self.names})"

    @classmethod
    def constant(cls, value, names: tuple[str, ...] = INPUT_NAMES) -> "Jet":
        value = as_tensor(value)
        zeros = np.zeros((len(names),) + value.shape)
        return cls(value, zeros, zeros, names)

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.names != self.names:
                raise ValueError(f"jets seeded on different inputs: {self.names} vs {other.names}")
            return other
        return Jet.constant(other, self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"'{name}' was not seeded; seeded inputs are {self.names}") from None

    # arithmetic

    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value + other, self.first, self.second, self.names)
        other = self._lift(other)
        return Jet(self.value + other.value, self.first + other.first, self.second + other.second, self.names)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.value, -self.first, -self.second, self.names)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = as_tensor(other)
            return Jet(self.value * other, self.first * other, self.second * other, self.names)
        other = self._lift(other)
        u, v = self.value, other.value
        first = self.first * v + other.first * u
        second = self.second * v + 2.0 * (self.first * other.first) + other.second * u
        return Jet(u * v, first, second, self.names)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / as_tensor(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, exponent):
        p = float(exponent)
        u = self.value
        zeros = Tensor(np.zeros(u.shape))
        # small non-negative integer powers must not form 0 * inf at u = 0
        d1 = p * u ** (p - 1.0) if p != 0.0 else zeros
        d2 = p * (p - 1.0) * u ** (p - 2.0) if p not in (0.0, 1.0) else zeros
        return self.apply(u**p, d1, d2)

    def apply(self, f: Tensor, df: Tensor, d2f: Tensor) -> "Jet":
        """Chain rule for an elementwise function given f, f', f'' at the value."""
        first = df * self.first
        second = d2f * (self.first * self.first) + df * self.second
        return Jet(f, first, second, self.names)

    def reciprocal(self) -> "Jet":
        inv = 1.0 / self.value
        inv2 = inv * inv
        return self.apply(inv, -inv2, 2.0 * inv2 * inv)

    def exp(self) -> "Jet":
        e = self.value.exp()
        return self.apply(e, e, e)

    def sin(self) -> "Jet":
        s, c = self.value.sin(), self.value.cos()
        return self.apply(s, c, -s)

    def cos(self) -> "Jet":
        s, c = self.value.sin(), self.value.cos()
        return self.apply(c, -s, -c)

    def tanh(self) -> "Jet":
        th = self.value.tanh()
        d1 = 1.0 - th * th
        return self.apply(th, d1, -2.0 * th * d1)

    def sigmoid(self) -> "Jet":
        s = self.value.sigmoid()
        d1 = s * (1.0 - s)
        return self.apply(s, d1, d1 * (1.0 - 2.0 * s))

    def swish(self) -> "Jet":
        u = self.value
        s = u.sigmoid()
        ds = s * (1.0 - s)
        d1 = s + u * ds
        d2 = ds * (2.0 + u * (1.0 - 2.0 * s))
        return self.apply(u * s, d1, d2)

    # structure

    def linear(self, weight: Tensor, bias: Tensor) -> "Jet":
        """Affine map ``value @ weight.T + bias`` applied to every component."""
        wt = as_tensor(weight).T
        return Jet(self.value @ wt + bias, self.first @ wt, self.second @ wt, self.names)

    def __getitem__(self, index) -> "Jet":
        idx = index if isinstance(index, tuple) else (index,)
        lead = (slice(None),) + idx
        return Jet(self.value[index], self.first[lead], self.second[lead], self.names)

    @staticmethod
    def stack(jets: Sequence["Jet"], axis: int = -1) -> "Jet":
        names = jets[0].names
        if axis < 0:
            axis_d = axis
        else:
            axis_d = axis + 1
        return Jet(
            stack([j.value for j in jets], axis=axis),
            stack([j.first for j in jets], axis=axis_d),
            stack([j.second for j in jets], axis=axis_d),
            names,
        )

    def d(self, name: str) -> Tensor:
        return self.first[self.index(name)]

    def d2(self, name: str) -> Tensor:
        return self.second[self.index(name)]


DiffScalar = Jet


def _check_finite(name: str, v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DomainError(f"input {name} must be finite, got {v!r}")
    return arr


def seed_inputs(x, y, z, t) -> tuple[Jet, Jet, Jet, Jet]:
    """Independent jets for the spatiotemporal coordinates.

    Accepts scalars or equally shaped arrays (a batch of points).
    """
    values = [_check_finite(n, v) for n, v in zip(INPUT_NAMES, (x, y, z, t))]
    shape = np.broadcast_shapes(*(v.shape for v in values))
    k = len(INPUT_NAMES)
    jets = []
    for i, v in enumerate(values):
        first = np.zeros((k,) + shape)
        first[i] = 1.0
        jets.append(Jet(np.broadcast_to(v, shape).copy(), first, np.zeros((k,) + shape)))
    return tuple(jets)


def _as_jet(output) -> Jet:
    if isinstance(output, Jet):
        return output
    return Jet.constant(output)


def _scalar_or_array(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr.copy()


def first_derivative(output, wrt: str):
    """d(output)/d(wrt) for a seeded input name ('x', 'y', 'z' or 't')."""
    jet = _as_jet(output)
    return _scalar_or_array(jet.first.value[jet.index(wrt)])


def second_derivative(output, wrt: str):
    """d^2(output)/d(wrt)^2 for a seeded input name."""
    jet = _as_jet(output)
    return _scalar_or_array(jet.second.value[jet.index(wrt)])


def is_finite(t: Tensor | Jet) -> bool:
    if isinstance(t, Jet):
        return bool(
            np.isfinite(t.value.value).all() and np.isfinite(t.first.value).all() and np.isfinite(t.second.value).all()
        )
    return bool(np.isfinite(t.value).all())


__all__ = [
    "INPUT_NAMES",
    "DiffScalar",
    "DomainError",
    "GradientTape",
    "Jet",
    "NonFiniteError",
    "Tensor",
    "as_tensor",
    "backward",
    "concatenate",
    "first_derivative",
    "is_finite",
    "pack",
    "packed_linear",
    "packed_swish",
    "second_derivative",
    "seed_inputs",
    "sigmoid",
    "stack",
    "unpack",
]
