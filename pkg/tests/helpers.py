"""Shared test utilities: central finite differences and small fixtures."""
import numpy as np

from afs.tensor import Tensor, backward


def numeric_grad(f, x, h=1e-6):
    """Central differences of the scalar function ``f`` (array -> float) at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_grads(build, inputs, h=1e-6):
    """Worst relative error between autodiff and finite differences over every input.

    ``build`` maps a list of Tensors to a scalar Tensor.
    """
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    backward(build(tensors))
    worst = 0.0
    for k, t in enumerate(tensors):
        def f(v, k=k):
            args = [Tensor(v) if j == k else Tensor(x) for j, x in enumerate(inputs)]
            return build(args).item()
        worst = max(worst, rel_err(t.grad, numeric_grad(f, inputs[k], h)))
    return worst


def away_from_kinks(rng, shape, gap=1e-3):
    """Normal samples with no entry within ``gap`` of zero (ReLU / sign kinks)."""
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.copysign(gap * 10, x), x)
