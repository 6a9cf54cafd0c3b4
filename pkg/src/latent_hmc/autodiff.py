"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records primitive operations as they execute (define-by-run).
Each recorded ``Node`` stores its primal value and a backward rule;
``Tape.gradient`` sweeps the tape in reverse creation order and accumulates
adjoints into the differentiable leaves.

Conventions:
    * tensors are C-ordered float64 ``numpy`` arrays; scalars are 0-d arrays
    * every primitive also accepts plain arrays/floats and then evaluates
      eagerly without recording, so density kernels written against this
      module work both on and off the tape
    * log(0) yields -inf silently (a legitimate log density); NaN discovered
      during a backward sweep raises :class:`NumericError` with the node id
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import ContractViolation, NumericError

__all__ = [
    "Tape", "Node", "add", "subtract", "multiply", "divide", "negate",
    "exp", "log", "loggamma", "logsumexp", "softmax", "sum", "matmul",
    "take", "broadcast_to", "concat", "reshape", "transpose", "sigmoid",
    "softplus", "square", "cumsum", "value",
]


def as_array(x):
    return np.asarray(x, dtype=np.float64)


def value(x):
    """Primal value of ``x`` whether it is a Node or a plain array."""
    return x.value if isinstance(x, Node) else as_array(x)


class Node:
    """One tape entry: an op kind, parent nodes, the primal, a backward rule.

    ``backward`` is None for leaves; otherwise it maps the node's adjoint to
    a tuple of adjoint contributions aligned with ``parents``.
    """

    __slots__ = ("tape", "idx", "op", "parents", "value", "backward")

    # make ndarray <op> Node defer to the reflected Node operators
    __array_ufunc__ = None

    def __init__(self, tape, idx, op, parents, val, backward):
        self.tape = tape
        self.idx = idx
        self.op = op
        self.parents = parents
        self.value = val
        self.backward = backward

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Node<{self.idx} {self.op} {self.value.shape}>"

    # arithmetic sugar; mixed operands are treated as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Tape:
    """An append-only record of primitives applied to differentiable leaves.

    One tape per chain; nothing is shared between tapes, so concurrent chains
    need no coordination.
    """

    def __init__(self):
        self.nodes = []
        self.leaf_ids = []

    def leaf(self, val):
        """Register a differentiable input."""
        node = self.record("leaf", (), as_array(val), None)
        self.leaf_ids.append(node.idx)
        return node

    def record(self, op, parents, val, backward):
        """Append one node; the tape grows by exactly one entry."""
        node = Node(self, len(self.nodes), op, parents, val, backward)
        self.nodes.append(node)
        return node

    def gradient(self, root):
        """Adjoint of ``root`` with respect to every leaf.

        ``root`` must be scalar-shaped with a finite primal.  Leaves the
        root does not depend on get zero adjoints.
        """
        if not isinstance(root, Node) or root.tape is not self:
            raise ContractViolation("gradient: root is not a node of this tape")
        if root.value.size != 1:
            raise ContractViolation(
                f"gradient: root must be scalar, got shape {root.value.shape}")
        if not np.isfinite(root.value):
            raise NumericError(
                f"gradient: root primal is {float(root.value)}", node_id=root.idx)

        adjoints = {root.idx: np.ones_like(root.value)}
        for node in reversed(self.nodes[: root.idx + 1]):
            if node.backward is None:
                continue
            g = adjoints.pop(node.idx, None)
            if g is None:
                continue
            for parent, contrib in zip(node.parents, node.backward(g)):
                if contrib is None:
                    continue
                acc = adjoints.get(parent.idx)
                adjoints[parent.idx] = contrib if acc is None else acc + contrib

        out = {}
        bad = None
        for idx in self.leaf_ids:
            leaf = self.nodes[idx]
            g = adjoints.get(idx)
            if g is None:
                g = np.zeros_like(leaf.value)
            else:
                g = np.broadcast_to(g, leaf.value.shape).astype(np.float64, copy=False)
            if bad is None and np.isnan(g).any():
                bad = idx
            out[leaf] = g
        if bad is not None:
            culprit = self._locate_nan(root)
            raise NumericError(
                f"gradient: NaN adjoint (first produced at node {culprit})",
                node_id=culprit)
        return out

    def _locate_nan(self, root):
        """Re-run the backward sweep checking every adjoint; slow path."""
        adjoints = {root.idx: np.ones_like(root.value)}
        for node in reversed(self.nodes[: root.idx + 1]):
            if node.backward is None:
                continue
            g = adjoints.pop(node.idx, None)
            if g is None:
                continue
            for parent, contrib in zip(node.parents, node.backward(g)):
                if contrib is None:
                    continue
                if np.isnan(contrib).any():
                    return node.idx
                acc = adjoints.get(parent.idx)
                adjoints[parent.idx] = contrib if acc is None else acc + contrib
        return root.idx


# --------------------------------------------------------------------------
# primitive helpers


def _tape_of(*args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return None


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _binary(op, a, b, fwd, bwd_a, bwd_b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    _check_broadcast(op, av, bv)
    out = fwd(av, bv)
    if tape is None:
        return out
    parents, rules = [], []
    if isinstance(a, Node):
        parents.append(a)
        rules.append(lambda g: _unbroadcast(bwd_a(g, av, bv, out), av.shape))
    if isinstance(b, Node):
        parents.append(b)
        rules.append(lambda g: _unbroadcast(bwd_b(g, av, bv, out), bv.shape))
    return tape.record(op, tuple(parents), out,
                       lambda g: tuple(rule(g) for rule in rules))


def _unary(op, x, fwd, bwd):
    tape = _tape_of(x)
    xv = value(x)
    out = fwd(xv)
    if tape is None:
        return out
    return tape.record(op, (x,), out, lambda g: (bwd(g, xv, out),))


# --------------------------------------------------------------------------
# primitives


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g)


def subtract(a, b):
    return _binary("subtract", a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g)


def multiply(a, b):
    return _binary("multiply", a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def divide(a, b):
    return _binary("divide", a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y, lambda g, x, y, o: -g * x / (y * y))


def negate(x):
    return _unary("negate", x, lambda v: -v, lambda g, v, o: -g)


def exp(x):
    return _unary("exp", x, np.exp, lambda g, v, o: g * o)


def log(x):
    return _unary("log", x, np.log, lambda g, v, o: g / v)


def loggamma(x):
    # scipy's gammaln is accurate to well below 1e-10 relative on [1e-3, 1e6]
    return _unary("log-gamma", x, special.gammaln,
                  lambda g, v, o: g * special.digamma(v))


def sigmoid(x):
    return _unary("sigmoid", x, special.expit, lambda g, v, o: g * o * (1.0 - o))


def softplus(x):
    # log(1 + e^x), stable at both tails
    return _unary("softplus", x, lambda v: np.logaddexp(0.0, v),
                  lambda g, v, o: g * special.expit(v))


def square(x):
    return _unary("square", x, np.square, lambda g, v, o: 2.0 * g * v)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - numpy-style name
    tape = _tape_of(x)
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def bwd(g, v=xv, o=out):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, v.shape),)

    if tape is None:
        return out
    return tape.record("sum", (x,), np.asarray(out), bwd)


def logsumexp(x, axis=None, keepdims=False):
    tape = _tape_of(x)
    xv = value(x)
    m = np.max(xv, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    red = m + np.log(np.sum(np.exp(xv - m), axis=axis, keepdims=True))
    out = red if keepdims else np.squeeze(red, axis=axis) if axis is not None \
        else red.reshape(())

    def bwd(g, v=xv, r=red):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(v - r),)

    if tape is None:
        return out
    return tape.record("log-sum-exp", (x,), np.asarray(out), bwd)


def softmax(x, axis=-1):
    tape = _tape_of(x)
    xv = value(x)
    m = np.max(xv, axis=axis, keepdims=True)
    e = np.exp(xv - m)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g, y=out):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    if tape is None:
        return out
    return tape.record("softmax", (x,), out, bwd)


def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ContractViolation(
            f"matrix-multiply: incompatible shapes {av.shape} @ {bv.shape}")
    out = av @ bv
    if tape is None:
        return out
    parents, rules = [], []
    if isinstance(a, Node):
        parents.append(a)
        rules.append(lambda g: g @ bv.T)
    if isinstance(b, Node):
        parents.append(b)
        rules.append(lambda g: av.T @ g)
    return tape.record("matrix-multiply", tuple(parents), out,
                       lambda g: tuple(rule(g) for rule in rules))


def _scatter_add(shape, idx, g, axis):
    """Adjoint of take: accumulate rows of ``g`` back at ``idx``."""
    out = np.zeros(shape)
    idx = idx % shape[axis]
    if axis == 0 and len(shape) == 1:
        out += np.bincount(idx, weights=g, minlength=shape[0])
    elif axis == 0 and len(shape) == 2 and shape[1] <= 64:
        for j in range(shape[1]):
            out[:, j] = np.bincount(idx, weights=g[:, j], minlength=shape[0])
    else:
        np.add.at(out, (slice(None),) * axis + (idx,), g)
    return out


def take(x, indices, axis=0):
    """Gather slices of ``x`` along ``axis`` by integer index."""
    tape = _tape_of(x)
    xv = value(x)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractViolation("gather: indices must be integers")
    try:
        out = np.take(xv, idx, axis=axis)
    except IndexError:
        raise ContractViolation(
            f"gather: index out of range for axis {axis} of shape {xv.shape}"
        ) from None
    if tape is None:
        return out
    return tape.record(
        "gather", (x,), out,
        lambda g: (_scatter_add(xv.shape, idx, g, axis),))


def broadcast_to(x, shape):
    tape = _tape_of(x)
    xv = value(x)
    try:
        out = np.broadcast_to(xv, shape).copy()
    except ValueError:
        raise ContractViolation(
            f"broadcast: cannot broadcast {xv.shape} to {tuple(shape)}") from None
    if tape is None:
        return out
    return tape.record("broadcast", (x,), out,
                       lambda g: (_unbroadcast(g, xv.shape),))


def cumsum(x, axis=-1):
    tape = _tape_of(x)
    xv = value(x)
    out = np.cumsum(xv, axis=axis)

    def bwd(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    if tape is None:
        return out
    return tape.record("cumsum", (x,), out, bwd)


def reshape(x, shape):
    tape = _tape_of(x)
    xv = value(x)
    out = xv.reshape(shape)
    if tape is None:
        return out
    return tape.record("reshape", (x,), out, lambda g: (g.reshape(xv.shape),))


def transpose(x):
    tape = _tape_of(x)
    xv = value(x)
    if xv.ndim != 2:
        raise ContractViolation(f"transpose: expected 2-d input, got {xv.shape}")
    out = np.ascontiguousarray(xv.T)
    if tape is None:
        return out
    return tape.record("transpose", (x,), out, lambda g: (g.T,))


def concat(parts, axis=0):
    """Concatenate Nodes and/or constant arrays along ``axis``."""
    tape = _tape_of(*parts)
    vals = [value(p) for p in parts]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError:
        raise ContractViolation(
            f"concat: incompatible shapes {[v.shape for v in vals]}") from None
    if tape is None:
        return out
    offsets = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bwd(g):
        pieces = np.split(g, offsets, axis=axis)
        return tuple(piece for part, piece in zip(parts, pieces)
                     if isinstance(part, Node))

    parents = tuple(p for p in parts if isinstance(p, Node))
    return tape.record("concat", parents, out, bwd)
