"""Reverse-mode differentiation on a flat tape of numpy-valued nodes.

Every primitive accepts plain arrays as well as :class:`Var` objects.  With no
``Var`` among the arguments the primitive simply evaluates with numpy, so the
same model code serves for plain evaluation and for differentiation.

Values may carry leading batch axes; gradients flowing back into a broadcast
operand are summed over the broadcast axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg


class NonFiniteError(FloatingPointError):
    """A forward value became inf/nan (usually a step size that is too large)."""


class UnknownPrimitiveError(KeyError):
    pass


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable
    vjp: Callable


PRIMITIVES: dict[str, Primitive] = {}


def register(name, forward, vjp):
    """Register a primitive.  ``vjp(g, out, *inputs, **kw)`` returns one
    cotangent per positional input (``None`` for non-differentiable ones)."""
    PRIMITIVES[name] = Primitive(name, forward, vjp)
    return PRIMITIVES[name]


class Var:
    __slots__ = ("tape", "index", "value")
    # keep numpy from swallowing Var operands in mixed expressions
    __array_ufunc__ = None

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        if isinstance(o, Var):
            return mul(self, reciprocal(o))
        return mul(self, 1.0 / np.asarray(o, dtype=float))

    def __rtruediv__(self, o):
        return mul(o, reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)


@dataclass
class _Node:
    prim: Primitive | None
    args: tuple
    kw: dict
    value: np.ndarray


@dataclass
class Tape:
    """Append-only record of primitive applications.

    Nodes are appended in evaluation order, so inputs always precede their
    consumers.  A tape belongs to a single forward pass; do not share one
    between threads.
    """

    nodes: list = field(default_factory=list)

    def var(self, value) -> Var:
        value = np.array(value, dtype=float)
        self.nodes.append(_Node(None, (), {}, value))
        return Var(self, len(self.nodes) - 1, value)

    def apply(self, prim: Primitive, args, kw) -> Var:
        vals = [a.value if isinstance(a, Var) else a for a in args]
        out = np.asarray(prim.forward(*vals, **kw), dtype=float)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite output from primitive {prim.name!r} (node {len(self.nodes)})")
        self.nodes.append(_Node(prim, tuple(args), kw, out))
        return Var(self, len(self.nodes) - 1, out)

    def gradients(self, out: Var, wrt) -> list[np.ndarray]:
        """Reverse sweep from scalar ``out``; returns d out / d v for each v in ``wrt``."""
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        if out.value.size != 1:
            raise ValueError(f"gradients() needs a scalar output, got shape {out.value.shape}")
        grads: list = [None] * (out.index + 1)
        grads[out.index] = np.ones_like(out.value)
        for i in range(out.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.prim is None:
                continue
            vals = [a.value if isinstance(a, Var) else a for a in node.args]
            cots = node.prim.vjp(g, node.value, *vals, **node.kw)
            for a, c in zip(node.args, cots):
                if c is None or not isinstance(a, Var):
                    continue
                c = _unbroadcast(np.asarray(c, dtype=float), a.value.shape)
                if grads[a.index] is None:
                    grads[a.index] = c
                else:
                    grads[a.index] = grads[a.index] + c
        res = []
        for v in wrt:
            g = grads[v.index] if v.index < len(grads) else None
            res.append(np.zeros_like(v.value) if g is None else g)
        return res


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def apply(name: str, *args, **kw):
    """Apply a registered primitive; records on a tape iff some argument is a Var."""
    try:
        prim = PRIMITIVES[name]
    except KeyError:
        raise UnknownPrimitiveError(name) from None
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise ValueError("mixing variables from different tapes")
            tape = a.tape
    if tape is None:
        vals = [np.asarray(a, dtype=float) if isinstance(a, (int, float)) else a for a in args]
        return np.asarray(prim.forward(*vals, **kw), dtype=float)
    return tape.apply(prim, args, kw)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


# ---------------------------------------------------------------- primitives


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _sigmoid(a):
    out = np.empty_like(a, dtype=float)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


register("add", lambda a, b: np.add(a, b), lambda g, o, a, b: (g, g))
register("sub", lambda a, b: np.subtract(a, b), lambda g, o, a, b: (g, -g))
register("neg", lambda a: np.negative(a), lambda g, o, a: (-g,))
register("mul", lambda a, b: np.multiply(a, b), lambda g, o, a, b: (g * b, g * a))
register("reciprocal", lambda a: 1.0 / a, lambda g, o, a: (-g * o * o,))
register("square", lambda a: a * a, lambda g, o, a: (2.0 * g * a,))
# max(x, 0) has derivative 0 at exactly 0
register("relu", lambda a: np.maximum(a, 0.0), lambda g, o, a: (g * (a > 0),))
register("sigmoid", _sigmoid, lambda g, o, a: (g * o * (1.0 - o),))
register("softplus", lambda a: np.logaddexp(0.0, a), lambda g, o, a: (g * _sigmoid(np.asarray(a, dtype=float)),))
register("exp", lambda a: np.exp(a), lambda g, o, a: (g * o,))
register("log", lambda a: np.log(a), lambda g, o, a: (g / a,))
register("sqrt", lambda a: np.sqrt(a), lambda g, o, a: (g * 0.5 / o,))
register(
    "matvec",
    lambda m, v: (m @ v[..., None])[..., 0],
    lambda g, o, m, v: (g[..., :, None] * v[..., None, :], (_swap(m) @ g[..., None])[..., 0]),
)
def _matmul_vjp(g, o, a, b):
    # 1-D operands are promoted the way numpy's matmul promotes them
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga, gb = g2 @ _swap(b2), _swap(a2) @ g2
    if a.ndim == 1:
        ga = ga[..., 0, :]
    if b.ndim == 1:
        gb = gb[..., :, 0]
    return ga, gb


register("matmul", lambda a, b: a @ b, _matmul_vjp)
register(
    "dot",
    lambda a, b: np.sum(a * b, axis=-1),
    lambda g, o, a, b: (g[..., None] * b, g[..., None] * a),
)


def _sum_vjp(g, o, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, np.shape(a)),)


register("sum", lambda a, axis=None, keepdims=False: np.sum(a, axis=axis, keepdims=keepdims), _sum_vjp)
register("reshape", lambda a, shape: np.reshape(a, shape), lambda g, o, a, shape: (np.reshape(g, np.shape(a)),))
register("transpose", lambda a: _swap(a), lambda g, o, a: (_swap(g),))


def _getitem_vjp(g, o, a, idx):
    z = np.zeros(np.shape(a))
    np.add.at(z, idx, g)
    return (z,)


register("getitem", lambda a, idx: a[idx], _getitem_vjp)


def _take_vjp(g, o, a, idx):
    z = np.zeros(np.shape(a))
    np.add.at(z, (Ellipsis, idx), g)
    return (z,)


register("take", lambda a, idx: np.take(a, idx, axis=-1), _take_vjp)


def _concat_fwd(*arrs, axis=-1):
    shape = np.broadcast_shapes(*[np.shape(a)[:-1] for a in arrs]) if axis == -1 else None
    if shape is not None:
        arrs = [np.broadcast_to(a, shape + np.shape(a)[-1:]) for a in arrs]
    return np.concatenate(arrs, axis=axis)


def _concat_vjp(g, o, *arrs, axis=-1):
    cuts = np.cumsum([np.shape(a)[axis] for a in arrs])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


register("concat", _concat_fwd, _concat_vjp)


def _softmax(a):
    e = np.exp(a - np.max(a, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


register("softmax", _softmax, lambda g, o, a: (o * (g - np.sum(g * o, axis=-1, keepdims=True)),))


def _solve_fwd(s, r):
    return np.linalg.solve(s, r[..., None])[..., 0]


def _solve_vjp(g, o, s, r):
    gr = np.linalg.solve(_swap(s), g[..., None])[..., 0]
    return (-gr[..., :, None] * o[..., None, :], gr)


register("solve", _solve_fwd, _solve_vjp)


def _trisolve_fwd(m, b, lower=False):
    if m.ndim == 2 and b.ndim == 2:
        return scipy.linalg.solve_triangular(m, b, lower=lower)
    return np.linalg.solve(m, b)


def _trisolve_vjp(g, o, m, b, lower=False):
    if b.ndim == m.ndim - 1:
        # vector right-hand side: treat as a single column
        gm, gb = _trisolve_vjp(g[..., None], o[..., None], m, b[..., None], lower)
        return gm, gb[..., 0]
    if m.ndim == 2 and g.ndim == 2:
        gb = scipy.linalg.solve_triangular(m, g, lower=lower, trans="T")
    else:
        gb = np.linalg.solve(_swap(m), g)
    gm = -(gb @ _swap(o))
    gm = np.tril(gm) if lower else np.triu(gm)
    return (gm, gb)


register("solve_triangular", _trisolve_fwd, _trisolve_vjp)


def _diag_fwd(v):
    d = v.shape[-1]
    out = np.zeros(v.shape + (d,))
    i = np.arange(d)
    out[..., i, i] = v
    return out


register("diag", _diag_fwd, lambda g, o, v: (np.diagonal(g, axis1=-2, axis2=-1),))


def _qr_fwd(a):
    q, r = np.linalg.qr(a)
    # sign convention: positive diagonal of R (the Gram-Schmidt factor)
    s = np.where(np.diagonal(r, axis1=-2, axis2=-1) < 0, -1.0, 1.0)
    return q * s[..., None, :]


def _qr_vjp(g, o, a):
    # square a = Q R, cotangent on Q only:
    # abar = (g + Q copyltu(-g^T Q)) R^{-T}
    r = _swap(o) @ a
    m = -(_swap(g) @ o)
    low = np.tril(m)
    b = g + o @ (low + _swap(np.tril(m, -1)))
    return (_swap(np.linalg.solve(r, _swap(b))),)


register("qr_q", _qr_fwd, _qr_vjp)


# thin wrappers so model code reads like numpy
def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def neg(a):
    return apply("neg", a)


def mul(a, b):
    return apply("mul", a, b)


def reciprocal(a):
    return apply("reciprocal", a)


def square(a):
    return apply("square", a)


def relu(a):
    return apply("relu", a)


def sigmoid(a):
    return apply("sigmoid", a)


def softplus(a):
    return apply("softplus", a)


def exp(a):
    return apply("exp", a)


def log(a):
    return apply("log", a)


def sqrt(a):
    return apply("sqrt", a)


def matvec(m, v):
    return apply("matvec", m, v)


def matmul(a, b):
    return apply("matmul", a, b)


def dot(a, b):
    return apply("dot", a, b)


def vsum(a, axis=None, keepdims=False):
    return apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None):
    n = value(a).size if axis is None else value(a).shape[axis]
    return mul(vsum(a, axis=axis), 1.0 / n)


def reshape(a, shape):
    return apply("reshape", a, shape=tuple(shape))


def transpose(a):
    return apply("transpose", a)


def getitem(a, idx):
    return apply("getitem", a, idx=idx)


def take(a, idx):
    return apply("take", a, idx=np.asarray(idx))


def concat(arrs, axis=-1):
    return apply("concat", *arrs, axis=axis)


def softmax(a):
    return apply("softmax", a)


def solve(s, r):
    return apply("solve", s, r)


def solve_triangular(m, b, lower=False):
    return apply("solve_triangular", m, b, lower=lower)


def qr_q(a):
    """Orthogonal factor of the QR factorization of square ``a`` (R with positive diagonal)."""
    return apply("qr_q", a)


def diag(v):
    return apply("diag", v)


def pos(a):
    """(a)^+ ."""
    return relu(a)


# ------------------------------------------------------------ entry points


def grad_eval(f: Callable, p) -> tuple[float, np.ndarray]:
    """Value and gradient of the scalar function ``f`` at the flat vector ``p``."""
    tape = Tape()
    x = tape.var(p)
    y = f(x)
    if not isinstance(y, Var):
        v = np.asarray(y, dtype=float)
        if v.size != 1:
            raise ValueError("f must return a scalar")
        return float(v.reshape(())), np.zeros_like(x.value)
    (g,) = tape.gradients(y, [x])
    return float(y.value.reshape(())), g


def finite_diff_check(f: Callable, p, step: float = 1e-5, kink_tol: float = 1e-3) -> float:
    """Max over components of |g_ad - g_fd| / (|g_fd| + step).

    Components where the one-sided differences disagree (a kink within
    ``step``) are excluded.  Returns 0.0 when every component is excluded.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.array(p, dtype=float)
    _, g = grad_eval(f, p)
    f0 = float(value(f(p)))
    worst = 0.0
    flat = p.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        fp = float(value(f((flat + e).reshape(p.shape))))
        fm = float(value(f((flat - e).reshape(p.shape))))
        fwd, bwd = (fp - f0) / step, (f0 - fm) / step
        if abs(fwd - bwd) > kink_tol * (1.0 + abs(fwd) + abs(bwd)):
            continue
        gfd = (fp - fm) / (2 * step)
        worst = max(worst, abs(gflat[i] - gfd) / (abs(gfd) + step))
    return worst


@dataclass
class ParamSlots:
    """Registry of named slices of a flat parameter vector."""

    slots: dict = field(default_factory=dict)
    size: int = 0

    def add(self, name: str, shape) -> slice:
        shape = tuple(int(s) for s in shape)
        n = int(math.prod(shape))
        self.slots[name] = (slice(self.size, self.size + n), shape)
        self.size += n
        return self.slots[name][0]

    def view(self, p, name):
        sl, shape = self.slots[name]
        return reshape(getitem(p, sl), shape)

    def slice(self, name) -> slice:
        return self.slots[name][0]

    def __contains__(self, name):
        return name in self.slots
