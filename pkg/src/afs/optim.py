import numpy as np


class SGD:
    """Heavy-ball SGD: ``v <- m*v + g``, ``p <- p - lr*v``, one velocity buffer per parameter."""

    def __init__(self, params, lr, momentum=0.0):
        self.params = list(params)
        if len({id(p) for p in self.params}) != len(self.params):
            raise ValueError("SGD: a parameter was registered twice")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for i, (p, v) in enumerate(zip(self.params, self.velocity)):
            if p.grad is None:
                raise ValueError(f"SGD.step: parameter {i} of shape {p.shape} has no gradient")
            v *= self.momentum
            v += p.grad
            if self.lr != 0.0:
                p.data -= self.lr * v
