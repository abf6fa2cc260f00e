"""Adam optimizer over (name, param, grad) triples."""

import numpy as np


class Adam:
    """Bias-corrected Adam; parameters update in place.

    ``params`` is a list of (name, param_array, grad_array) triples whose
    arrays are shared with the model; ``lr`` may be reassigned between steps
    by a schedule.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p, _ in self.params}
        self.v = {name: np.zeros_like(p) for name, p, _ in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p, g in self.params:
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
