"""MLP feature extractors, linear heads and the classifiers built from them."""
import numpy as np

from .rng import SeededRng
from .tensor import ShapeError, Tensor


class ExtractorNet:
    """Stack of affine+ReLU layers mapping (batch, input_dim) to (batch, feature_dim).

    The output is the activation fed to a linear head, i.e. the
    penultimate layer of the full classifier.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("ExtractorNet: need matching, non-empty weight and bias lists")
        self.weights = [w if isinstance(w, Tensor) else Tensor(w, requires_grad=True) for w in weights]
        self.biases = [b if isinstance(b, Tensor) else Tensor(b, requires_grad=True) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.data.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"ExtractorNet: layer {i} weight {w.shape} / bias {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeError(f"ExtractorNet: layer {i} input {w.shape[0]} != previous output")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def feature_dim(self):
        return self.weights[-1].shape[1]

    @property
    def hidden(self):
        return [w.shape[1] for w in self.weights[:-1]]

    def named_parameters(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"layer{i}.weight", w
            yield f"layer{i}.bias", b

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def features(self, x):
        if x.data.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"features: expected (batch, {self.input_dim}), got {x.shape}")
        h = x
        for w, b in zip(self.weights, self.biases):
            h = (h @ w + b).relu()
        return h


class LinearHead:
    def __init__(self, weight, bias):
        self.weight = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        self.bias = bias if isinstance(bias, Tensor) else Tensor(bias, requires_grad=True)
        if self.weight.data.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"LinearHead: weight {self.weight.shape} / bias {self.bias.shape}")

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def num_classes(self):
        return self.weight.shape[1]

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, features):
        if features.data.ndim != 2 or features.shape[1] != self.in_dim:
            raise ShapeError(f"LinearHead: expected (batch, {self.in_dim}) features, got {features.shape}")
        return features @ self.weight + self.bias


def _fan_in_normal(rng, fan_in, fan_out, gain):
    return rng.normal((fan_in, fan_out), scale=np.sqrt(gain / fan_in))


def init_extractor(seed, input_dim, feature_dim=64, hidden=256, depth=2):
    """He-style init: weights ~ N(0, 2/fan_in) from the seeded stream, biases zero.

    ``depth`` is the number of hidden layers of width ``hidden``.
    """
    for name, v in (("input_dim", input_dim), ("feature_dim", feature_dim), ("hidden", hidden), ("depth", depth)):
        if int(v) <= 0:
            raise ValueError(f"init_extractor: {name} must be positive, got {v}")
    rng = SeededRng(seed).child("extractor")
    dims = [input_dim] + [hidden] * depth + [feature_dim]
    weights = [_fan_in_normal(rng, a, b, 2.0) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return ExtractorNet(weights, biases)


def init_head(seed, feature_dim, num_classes):
    rng = SeededRng(seed).child("head")
    return LinearHead(_fan_in_normal(rng, feature_dim, num_classes, 1.0), np.zeros(num_classes))


def forward_features(net, x):
    return net.features(x)


def forward_logits(net, head, x):
    if head.in_dim != net.feature_dim:
        raise ShapeError(f"forward_logits: head expects {head.in_dim} features, net produces {net.feature_dim}")
    return head(net.features(x))


def freeze(params):
    for p in params:
        p.requires_grad = False
        p.grad = None


class SingleNetwork:
    """One extractor with its own linear head."""

    def __init__(self, net, head):
        if head.in_dim != net.feature_dim:
            raise ShapeError(f"SingleNetwork: head expects {head.in_dim} features, net produces {net.feature_dim}")
        self.net = net
        self.head = head

    @property
    def num_classes(self):
        return self.head.num_classes

    def parameters(self):
        return self.net.parameters() + self.head.parameters()

    def logits(self, x):
        return self.head(self.net.features(x))


class LinearModel:
    """Affine classifier ``x @ w + b``; with one output column it is a binary sign classifier."""

    def __init__(self, w, b):
        w = np.asarray(w, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None]
        self.w = Tensor(w)
        self.b = Tensor(np.atleast_1d(np.asarray(b, dtype=np.float64)))
        if self.b.shape != (w.shape[1],):
            raise ShapeError(f"LinearModel: weight {w.shape} / bias {self.b.shape}")

    @property
    def num_classes(self):
        return self.w.shape[1]

    def parameters(self):
        return [self.w, self.b]

    def logits(self, x):
        return x @ self.w + self.b


def predict(model, x, batch_size=1024):
    """Class predictions; binary (single-logit) models return +1/-1/0 by the logit's sign."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for lo in range(0, len(x), batch_size):
        z = model.logits(Tensor(x[lo:lo + batch_size])).data
        out.append(np.sign(z[:, 0]) if z.shape[1] == 1 else z.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


class frozen:
    """Context manager that turns off ``requires_grad`` on parameters and restores it afterwards."""

    def __init__(self, params):
        self.params = list(params)
        self._saved = None

    def __enter__(self):
        self._saved = [p.requires_grad for p in self.params]
        for p in self.params:
            p.requires_grad = False
        return self

    def __exit__(self, *exc):
        for p, flag in zip(self.params, self._saved):
            p.requires_grad = flag
        return False
