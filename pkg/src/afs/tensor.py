"""Dense float64 tensors with reverse-mode autodiff.

Each op returns a new Tensor holding references to its parents and a
closure mapping the upstream gradient to per-parent gradients. Calling
``backward`` on a scalar walks that graph in reverse topological order.
"""
import numpy as np


class ShapeError(ValueError):
    pass


def _as_array(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=""):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    # graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward, op):
        parents = tuple(parents)
        if any(p.requires_grad for p in parents):
            return Tensor(data, True, parents, backward, op)
        return Tensor(data, _op=op)

    # binary ops -----------------------------------------------------------

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, -_lift(other))

    def __rsub__(self, other):
        return add(-self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    # unary ops ------------------------------------------------------------

    def relu(self):
        return relu(self)

    def sign(self):
        return sign(self)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean(self)

    def max(self, axis=1):
        if axis != 1:
            raise ShapeError(f"max: only axis=1 is supported, got {axis}")
        return row_max(self)

    def backward(self):
        backward(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def _backward(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return Tensor._make(a.data @ b.data, (a, b), _backward, "matmul")


def add(a, b):
    """Elementwise sum; ``b`` may also be a row vector broadcast over the rows of ``a``."""
    a, b = _lift(a), _lift(b)
    if a.shape == b.shape:
        row_broadcast = False
    elif a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        row_broadcast = True
    elif b.data.ndim == 2 and a.data.ndim == 1 and a.shape[0] == b.shape[1]:
        return add(b, a)
    else:
        raise ShapeError(f"add: cannot combine shapes {a.shape} and {b.shape}")

    def _backward(g):
        gb = None
        if b.requires_grad:
            gb = g.sum(axis=0) if row_broadcast else g
        return (g if a.requires_grad else None, gb)

    return Tensor._make(a.data + b.data, (a, b), _backward, "add")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes must match, got {a.shape} and {b.shape}")

    def _backward(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    return Tensor._make(a.data * b.data, (a, b), _backward, "mul")


def scale(a, c):
    c = float(c)
    return Tensor._make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a):
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sign(a):
    # piecewise constant: zero gradient everywhere it exists
    return Tensor._make(np.sign(a.data), (a,), lambda g: (np.zeros_like(g),), "sign")


def clamp(a, lo, hi):
    """Clip into [lo, hi]; bounds are constants (scalars or arrays of ``a``'s shape)."""
    lo = lo.data if isinstance(lo, Tensor) else lo
    hi = hi.data if isinstance(hi, Tensor) else hi
    for bound in (lo, hi):
        if np.ndim(bound) and np.shape(bound) != a.shape:
            raise ShapeError(f"clamp: bound shape {np.shape(bound)} does not match {a.shape}")
    out = np.minimum(np.maximum(a.data, lo), hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._make(out, (a,), lambda g: (g * inside,), "clamp")


def concat(tensors, axis=1):
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    if axis != 1 or any(t.data.ndim != 2 for t in tensors):
        raise ShapeError(f"concat: only 2-d tensors along axis 1, got {[t.shape for t in tensors]}")
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"concat: row counts differ {[t.shape for t in tensors]}")
    edges = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _backward(g):
        return tuple(
            g[:, lo:hi] if t.requires_grad else None
            for t, lo, hi in zip(tensors, edges[:-1], edges[1:])
        )

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=1), tensors, _backward, "concat")


def sum_all(a):
    return Tensor._make(a.data.sum(), (a,), lambda g: (np.full(a.shape, g),), "sum")


def mean(a):
    n = a.data.size
    return Tensor._make(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),), "mean")


def row_max(a):
    """Max over the feature axis of a 2-d tensor; ties route the gradient to the first index."""
    if a.data.ndim != 2:
        raise ShapeError(f"max: expected 2-d tensor, got {a.shape}")
    idx = a.data.argmax(axis=1)
    rows = np.arange(a.shape[0])

    def _backward(g):
        out = np.zeros(a.shape)
        out[rows, idx] = g
        return (out,)

    return Tensor._make(a.data[rows, idx], (a,), _backward, "max")


def cross_entropy(logits, labels):
    """Per-sample softmax cross-entropy for integer class labels; returns shape (batch,)."""
    labels = np.asarray(labels)
    z = logits.data
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"cross_entropy: logits {z.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ShapeError(f"cross_entropy: labels outside [0, {z.shape[1]})")
    labels = labels.astype(np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    losses = logsumexp - shifted[rows, labels]

    def _backward(g):
        p = np.exp(shifted - logsumexp[:, None])
        p[rows, labels] -= 1.0
        return (p * g[:, None],)

    return Tensor._make(losses, (logits,), _backward, "cross_entropy")


# backward pass --------------------------------------------------------------

def _tape(root):
    """Nodes reachable from ``root`` that require grad, in topological order."""
    order, seen = [], set()
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor requiring grad")
    pending = {id(loss): np.ones(loss.shape)}
    for node in reversed(_tape(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def grad_of(loss_fn, x):
    """Gradient of scalar ``loss_fn(x_tensor)`` with respect to the array ``x``."""
    xt = Tensor(x, requires_grad=True)
    loss = loss_fn(xt)
    backward(loss)
    return xt.grad, loss.item()
