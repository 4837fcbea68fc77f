"""Minimal reverse-mode automatic differentiation on numpy arrays.

Values are 2-D float64 matrices; scalars are (1, 1). Each op builds a
Node whose closure knows how to push the output gradient to its parents.
`backward` walks the graph once in reverse topological order.

When no input of an op requires gradients the op returns a detached
constant computed by the same numpy calls, so inference runs the exact
arithmetic of training forwards while retaining no graph.

Gradient checks: every op here is covered by a central-difference oracle
in the test suite (h = 1e-5, relative error <= 1e-4 away from kinks).
"""

import numpy as np
from scipy.special import erf

from ..errors import NumericalError, ShapeError

LN_EPS = 1e-5  # layer norm variance floor
_NORM_FLOOR = 1e-12  # l2_normalize refuses rows shorter than this


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"node value must be 2-D, got shape {value.shape}")
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


def constant(value) -> Node:
    return Node(value)


def leaf(value) -> Node:
    """Trainable parameter: participates in backward, receives .grad."""
    return Node(value, requires_grad=True)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value, parents, backward_fn) -> Node:
    if any(p.requires_grad for p in parents):
        return Node(value, tuple(parents), backward_fn, requires_grad=True)
    return Node(value)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    for axis in range(2):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree ({a.shape} @ {b.shape})")
    out = a.value @ b.value

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g @ b.value.T)
        if b.requires_grad:
            b.accumulate(a.value.T @ g)

    return _make(out, (a, b), bwd)


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    out = a.value + b.value  # numpy broadcasting; backward sums back down

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(out, (a, b), bwd)


def scale(a, c: float) -> Node:
    a = _lift(a)
    c = float(c)
    out = a.value * c

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * c)

    return _make(out, (a,), bwd)


def sub(a, b) -> Node:
    return add(a, scale(b, -1.0))


def transpose(a) -> Node:
    a = _lift(a)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return _make(a.value.T.copy(), (a,), bwd)


def relu(a) -> Node:
    a = _lift(a)
    mask = a.value > 0.0

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return _make(a.value * mask, (a,), bwd)


def hinge(a) -> Node:
    """max(0, x) for a scalar node; the clamp used by margin losses."""
    a = _lift(a)
    if a.shape != (1, 1):
        raise ShapeError(f"hinge expects a (1, 1) scalar, got {a.shape}")
    return relu(a)


def gelu(a) -> Node:
    a = _lift(a)
    x = a.value
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    out = x * cdf

    def bwd(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
            a.accumulate(g * (cdf + x * pdf))

    return _make(out, (a,), bwd)


def layer_norm(x, gain, bias) -> Node:
    """Row-wise normalization with per-column gain and bias (both (1, D))."""
    x, gain, bias = _lift(x), _lift(gain), _lift(bias)
    d = x.shape[1]
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError("layer_norm: gain/bias must be (1, D)")
    mu = x.value.mean(axis=1, keepdims=True)
    var = x.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x.value - mu) * inv
    out = xhat * gain.value + bias.value

    def bwd(g):
        if gain.requires_grad:
            gain.accumulate((g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0, keepdims=True))
        if x.requires_grad:
            gh = g * gain.value
            term = gh - gh.mean(axis=1, keepdims=True) \
                - xhat * (gh * xhat).mean(axis=1, keepdims=True)
            x.accumulate(term * inv)

    return _make(out, (x, gain, bias), bwd)


def softmax_rows(a) -> Node:
    a = _lift(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            a.accumulate(out * (g - dot))

    return _make(out, (a,), bwd)


def mean_rows(a) -> Node:
    """Mean over rows: (N, D) -> (1, D)."""
    a = _lift(a)
    n = a.shape[0]
    out = a.value.mean(axis=0, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g / n, a.shape).copy())

    return _make(out, (a,), bwd)


def select_rows(a, idx) -> Node:
    """Pick rows by index: (N, D) -> (len(idx), D). Backward scatter-adds."""
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("select_rows: index out of range")
    out = a.value[idx, :].copy()

    def bwd(g):
        if a.requires_grad:
            buf = np.zeros_like(a.value)
            np.add.at(buf, idx, g)
            a.accumulate(buf)

    return _make(out, (a,), bwd)


def sum_all(a) -> Node:
    a = _lift(a)
    out = np.array([[a.value.sum()]])

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.full(a.shape, g[0, 0]))

    return _make(out, (a,), bwd)


def cross_entropy_logits(logits, labels) -> Node:
    """Mean cross-entropy of (N, C) logits against integer labels (len N)."""
    logits = _lift(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for {n} rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ShapeError("cross_entropy: label outside [0, C)")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.value.max(axis=1)
    picked = logits.value[np.arange(n), labels]
    out = np.array([[float(np.mean(lse - picked))]])

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), labels] -= 1.0
            logits.accumulate(g[0, 0] * p / n)

    return _make(out, (logits,), bwd)


def squared_distance(a, b) -> Node:
    """Scalar squared L2 distance between same-shape matrices."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ShapeError(f"squared_distance: shapes differ {a.shape} vs {b.shape}")
    diff = a.value - b.value
    out = np.array([[float((diff * diff).sum())]])

    def bwd(g):
        if a.requires_grad:
            a.accumulate(2.0 * g[0, 0] * diff)
        if b.requires_grad:
            b.accumulate(-2.0 * g[0, 0] * diff)

    return _make(out, (a, b), bwd)


def l2_normalize(a) -> Node:
    """Row-wise x / ||x||_2. Rows with near-zero norm are a hard error."""
    a = _lift(a)
    norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    if np.any(norms < _NORM_FLOOR):
        raise NumericalError("l2_normalize: row norm below 1e-12")
    out = a.value / norms

    def bwd(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            a.accumulate((g - out * dot) / norms)

    return _make(out, (a,), bwd)


def backward(loss: Node) -> None:
    """Populate .grad on every requires_grad node reachable from loss."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a (1, 1) scalar loss, got {loss.shape}")
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.accumulate(np.ones((1, 1)))
    for node in reversed(order):
        if node.backward_fn is not None:
            node.backward_fn(node.grad)
