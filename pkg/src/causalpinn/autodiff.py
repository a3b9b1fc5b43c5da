"""Reverse-mode autodiff on float64 arrays, plus truncated Taylor-jet rules.

Every differentiable quantity is a :class:`Var` registered on a :class:`Graph`
(a Wengert tape).  Values are numpy float64 arrays of any shape; a scalar is a
0-d array.  Input derivatives along one direction are carried by :class:`Jet3`
whose coefficients are themselves Vars, so they stay differentiable with
respect to the registered parameters.
"""

from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

_log = logging.getLogger(__name__)

SECH_CLAMP = 350.0  # |z| beyond this overflows cosh(z)**2 in float64


class GraphMixError(ValueError):
    """Raised when Vars from two different graphs are combined."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN/Inf value is produced where finiteness is required."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Graph:
    """A single-use tape. Nodes are stored in creation order; backward walks
    them in reverse. Construction and backward are single-threaded."""

    __slots__ = ("nodes", "params", "check_finite")

    def __init__(self, check_finite: bool = False):
        self.nodes: list[Var] = []
        self.params: list[Var] = []
        self.check_finite = check_finite

    def _register(self, v: "Var") -> "Var":
        if self.check_finite and not np.all(np.isfinite(v.value)):
            raise NonFiniteError("non-finite value produced on graph")
        self.nodes.append(v)
        return v

    def leaf(self, value) -> "Var":
        """A non-trainable input node."""
        return self._register(Var(_as_array(value), self, (), None))

    def param(self, value) -> "Var":
        """A trainable leaf; its gradient is part of the gradient vector."""
        v = self.leaf(value)
        self.params.append(v)
        return v

    def n_param_values(self) -> int:
        return int(sum(p.value.size for p in self.params))


class Var:
    """One node of the tape: a float64 array plus the bookkeeping needed to
    propagate adjoints to its parents."""

    __slots__ = ("value", "graph", "parents", "vjp", "grad", "_grad_owned")

    def __init__(self, value: np.ndarray, graph: Graph, parents: tuple,
                 vjp: Callable | None):
        self.value = value
        self.graph = graph
        self.parents = parents
        self.vjp = vjp
        self.grad: np.ndarray | None = None
        self._grad_owned = False

    # -- graph plumbing ----------------------------------------------------

    def _merge_graph(self, other) -> Graph:
        if isinstance(other, Var):
            if other.graph is not self.graph:
                raise GraphMixError("cannot combine Vars from different graphs")
        return self.graph

    def _node(self, value, parents, vjp) -> "Var":
        return self.graph._register(Var(_as_array(value), self.graph, parents, vjp))

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            self._merge_graph(other)
            return self._node(self.value + other.value, (self, other),
                              lambda g: (_unbroadcast(g, self.value.shape),
                                         _unbroadcast(g, other.value.shape)))
        c = _as_array(other)
        return self._node(self.value + c, (self,),
                          lambda g: (_unbroadcast(g, self.value.shape),))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            self._merge_graph(other)
            return self._node(self.value - other.value, (self, other),
                              lambda g: (_unbroadcast(g, self.value.shape),
                                         _unbroadcast(-g, other.value.shape)))
        c = _as_array(other)
        return self._node(self.value - c, (self,),
                          lambda g: (_unbroadcast(g, self.value.shape),))

    def __rsub__(self, other):
        c = _as_array(other)
        return self._node(c - self.value, (self,),
                          lambda g: (_unbroadcast(-g, self.value.shape),))

    def __neg__(self):
        return self._node(-self.value, (self,), lambda g: (-g,))

    def __mul__(self, other):
        if isinstance(other, Var):
            self._merge_graph(other)
            return self._node(self.value * other.value, (self, other),
                              lambda g: (_unbroadcast(g * other.value, self.value.shape),
                                         _unbroadcast(g * self.value, other.value.shape)))
        c = _as_array(other)
        return self._node(self.value * c, (self,),
                          lambda g: (_unbroadcast(g * c, self.value.shape),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise NotImplementedError("Var/Var division is not used; multiply by a reciprocal")
        return self.__mul__(1.0 / _as_array(other))

    def __pow__(self, n):
        if not isinstance(n, int) or n < 2:
            raise ValueError("only integer powers >= 2 are supported")
        return self._node(self.value ** n, (self,),
                          lambda g: (g * n * self.value ** (n - 1),))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementary functions ----------------------------------------------------

def exp(x: Var) -> Var:
    e = np.exp(x.value)
    return x._node(e, (x,), lambda g: (g * e,))


def log(x: Var) -> Var:
    return x._node(np.log(x.value), (x,), lambda g: (g / x.value,))


def sin(x: Var) -> Var:
    return x._node(np.sin(x.value), (x,), lambda g: (g * np.cos(x.value),))


def cos(x: Var) -> Var:
    return x._node(np.cos(x.value), (x,), lambda g: (-g * np.sin(x.value),))


def tanh(x: Var) -> Var:
    t = np.tanh(x.value)
    return x._node(t, (x,), lambda g: (g * (1.0 - t * t),))


def sech2(x: Var) -> Var:
    """1/cosh(x)^2, with the argument clamped so cosh never overflows."""
    s = _sech2_value(x.value)
    t = np.tanh(x.value)
    return x._node(s, (x,), lambda g: (g * (-2.0 * t * s),))


def _sech2_value(z: np.ndarray) -> np.ndarray:
    c = np.cosh(np.clip(z, -SECH_CLAMP, SECH_CLAMP))
    return 1.0 / (c * c)


def absval(x: Var) -> Var:
    """|x| with subgradient 0 at x == 0."""
    return x._node(np.abs(x.value), (x,), lambda g: (g * np.sign(x.value),))


def vsum(x: Var, axis=None) -> Var:
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.value.shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.value.shape),)
    return x._node(np.sum(x.value, axis=axis), (x,), vjp)


def reshape(x: Var, shape) -> Var:
    return x._node(x.value.reshape(shape), (x,),
                   lambda g: (g.reshape(x.value.shape),))


def take_index(x: Var, idx, axis: int = 0) -> Var:
    """Select one index along `axis` (the inverse scatters into zeros)."""
    val = np.take(x.value, idx, axis=axis)

    def vjp(g):
        out = np.zeros_like(x.value)
        sl = [slice(None)] * x.value.ndim
        sl[axis] = idx
        out[tuple(sl)] = g
        return (out,)

    return x._node(val, (x,), vjp)


def matmul(a, w: Var) -> Var:
    """a @ w where `a` is a constant array or a Var and `w` is a Var (2-D)."""
    if isinstance(a, Var):
        a._merge_graph(w)
        val = a.value @ w.value
        return w._node(val, (a, w),
                       lambda g: (g @ w.value.T, a.value.T @ g))
    a = _as_array(a)
    return w._node(a @ w.value, (w,), lambda g: (a.T @ g,))


def add_rows_bias(x: Var, b: Var, row_block) -> Var:
    """Add bias vector b to x[row_block] only (broadcast over leading axes)."""
    x._merge_graph(b)
    val = x.value.copy()
    val[row_block] += b.value

    def vjp(g):
        return (g, _unbroadcast(g[row_block], b.value.shape))

    return x._node(val, (x, b), vjp)


# -- backward ------------------------------------------------------------------

def backward(loss: Var) -> np.ndarray:
    """Reverse sweep from `loss`; returns d(loss)/d(params) as one flat array,
    ordered by parameter registration. Repeated calls give identical results.

    Adjoint buffers may alias each other until a node accumulates a second
    contribution; `_grad_owned` tracks when in-place accumulation is safe.
    """
    if loss.value.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    graph = loss.graph
    for n in graph.nodes:
        n.grad = None
        n._grad_owned = False
    loss.grad = np.ones_like(loss.value)
    for node in reversed(graph.nodes):
        g = node.grad
        if g is None or node.vjp is None:
            continue
        for parent, contrib in zip(node.parents, node.vjp(g)):
            if parent.grad is None:
                parent.grad = contrib
            elif parent._grad_owned:
                parent.grad += contrib
            else:
                parent.grad = parent.grad + contrib
                parent._grad_owned = True
    pieces = []
    connected = False
    for p in graph.params:
        if p.grad is None:
            pieces.append(np.zeros(p.value.size))
        else:
            connected = True
            pieces.append(np.asarray(p.grad).reshape(-1))
    out = np.concatenate(pieces) if pieces else np.zeros(0)
    for n in graph.nodes:
        n.grad = None
        n._grad_owned = False
    if graph.params and not connected:
        _log.warning("loss is not connected to any parameter; gradient is all zero")
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite gradient")
    return out


# -- Taylor jets ----------------------------------------------------------------

class Jet3:
    """Value plus directional Taylor coefficients up to order 3 along one
    seeded input direction. Coefficient k holds (1/k!) d^k/ds^k, each a Var.
    Order is 1 or 3; order-1 jets carry identically-zero c2 and c3."""

    __slots__ = ("coeffs", "order")

    def __init__(self, coeffs: Sequence[Var], order: int):
        if order not in (1, 3):
            raise ValueError("jet order must be 1 or 3")
        self.order = order
        self.coeffs = tuple(coeffs)
        if len(self.coeffs) != order + 1:
            raise ValueError("coefficient count does not match order")

    @property
    def c0(self) -> Var:
        return self.coeffs[0]

    @property
    def c1(self) -> Var:
        return self.coeffs[1]

    @property
    def c2(self) -> Var:
        return self.coeffs[2] if self.order >= 2 else self._zero()

    @property
    def c3(self) -> Var:
        return self.coeffs[3] if self.order >= 3 else self._zero()

    def _zero(self) -> Var:
        return self.c0.graph.leaf(np.zeros_like(self.c0.value))

    def _check(self, other: "Jet3"):
        if self.order != other.order:
            raise ValueError("jet order mismatch")


def seed_input(graph: Graph, t, x, direction: str, order: int) -> tuple[Jet3, Jet3]:
    """Return (t, x) as jets with `direction` seeded (c1 = 1), the other held
    constant. Order 3 is only meaningful for the space direction."""
    if direction not in ("time", "space"):
        raise ValueError("direction must be 'time' or 'space'")
    if order == 3 and direction == "time":
        raise ValueError("third-order jets are only supported along space")
    t = _as_array(t)
    x = _as_array(x)

    def const_jet(v):
        cs = [graph.leaf(v)] + [graph.leaf(np.zeros_like(v)) for _ in range(order)]
        return Jet3(cs, order)

    def seeded_jet(v):
        cs = [graph.leaf(v), graph.leaf(np.ones_like(v))]
        cs += [graph.leaf(np.zeros_like(v)) for _ in range(order - 1)]
        return Jet3(cs, order)

    if direction == "time":
        return seeded_jet(t), const_jet(x)
    return const_jet(t), seeded_jet(x)


def _jet_compose(x: Jet3, f0: Var, f1: Var, a2: Var | None, a3: Var | None) -> Jet3:
    """Chain rule for a univariate f given normalized derivative Vars at c0."""
    u = x.coeffs
    out = [f0, f1 * u[1]]
    if x.order >= 3:
        out.append(f1 * u[2] + a2 * (u[1] * u[1]))
        out.append(f1 * u[3] + (2.0 * (a2 * (u[1] * u[2]))) + a3 * (u[1] ** 3))
    return Jet3(out, x.order)


def jet_add(x: Jet3, y: Jet3) -> Jet3:
    x._check(y)
    return Jet3([a + b for a, b in zip(x.coeffs, y.coeffs)], x.order)


def jet_mul(x: Jet3, y: Jet3) -> Jet3:
    x._check(y)
    u, v = x.coeffs, y.coeffs
    out = [u[0] * v[0], u[0] * v[1] + u[1] * v[0]]
    if x.order >= 3:
        out.append(u[0] * v[2] + u[1] * v[1] + u[2] * v[0])
        out.append(u[0] * v[3] + u[1] * v[2] + u[2] * v[1] + u[3] * v[0])
    return Jet3(out, x.order)


def jet_scale(x: Jet3, c: float) -> Jet3:
    return Jet3([v * c for v in x.coeffs], x.order)


def jet_apply(f: str, x: Jet3, y: Jet3 | None = None) -> Jet3:
    """Propagate the jet `x` through an elementary function tag.

    Unary tags: identity, tanh, sech2, exp, sin, cos.
    Binary tags (require `y` of equal order): add, mul.
    Integer powers use tags like 'pow3'.
    """
    if f == "add":
        if y is None:
            raise ValueError("binary tag needs two jets")
        return jet_add(x, y)
    if f == "mul":
        if y is None:
            raise ValueError("binary tag needs two jets")
        return jet_mul(x, y)
    if f.startswith("pow"):
        n = int(f[3:])
        if n < 2:
            raise ValueError("powers below 2 are not jet tags")
        out = x
        for _ in range(n - 1):
            out = jet_mul(out, x)
        return out
    if y is not None:
        raise ValueError(f"{f!r} is a unary tag")
    c0 = x.c0
    if f == "identity":
        return Jet3(list(x.coeffs), x.order)
    if f == "exp":
        e = exp(c0)
        return _jet_compose(x, e, e, e * 0.5, e * (1.0 / 6.0))
    if f == "sin":
        s, c = sin(c0), cos(c0)
        return _jet_compose(x, s, c, s * (-0.5), c * (-1.0 / 6.0))
    if f == "cos":
        s, c = sin(c0), cos(c0)
        return _jet_compose(x, c, -s, c * (-0.5), s * (1.0 / 6.0))
    if f == "tanh":
        t = tanh(c0)
        p = 1.0 - t * t
        a2 = -(t * p)
        a3 = p * ((t * t) * 3.0 - 1.0) * (1.0 / 3.0)
        return _jet_compose(x, t, p, a2, a3)
    if f == "sech2":
        s = sech2(c0)
        t = tanh(c0)
        f1 = (t * s) * (-2.0)
        a2 = s * ((t * t) * 2.0 - s)
        a3 = (t * s) * (s * 2.0 - t * t) * (4.0 / 3.0)
        return _jet_compose(x, s, f1, a2, a3)
    raise ValueError(f"unsupported elementary tag {f!r}")
