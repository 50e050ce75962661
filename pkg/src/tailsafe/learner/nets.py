"""Small feedforward networks with hand-written backprop, and Adam."""

import numpy as np

from .._validation import check_random_state


class Mlp:
    """tanh hidden layers, linear output. Parameters live in ``self.params`` as [W0, b0, W1, b1, ...]."""

    def __init__(self, sizes, rng=None, out_scale=1.0):
        rng = check_random_state(rng)
        self.sizes = tuple(int(s) for s in sizes)
        self.params = []
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            scale = (out_scale if last else 1.0) / np.sqrt(a)
            self.params += [rng.normal(scale=scale, size=(a, b)), np.zeros(b)]

    @property
    def n_layers(self):
        return len(self.params) // 2

    def forward(self, X):
        """Returns (output, cache); X is (n, d_in)."""
        acts = [X]
        h = X
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            h = np.tanh(z) if i < self.n_layers - 1 else z
            acts.append(h)
        return h, acts

    def __call__(self, X):
        return self.forward(X)[0]

    def backward(self, acts, grad_out):
        """Gradients of sum(grad_out * output) w.r.t. params and input."""
        grads = [None] * len(self.params)
        g = grad_out
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def copy(self):
        new = object.__new__(Mlp)
        new.sizes = self.sizes
        new.params = [p.copy() for p in self.params]
        return new


def flatten(arrays):
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def unflatten(vec, like):
    out, i = [], 0
    for a in like:
        out.append(vec[i : i + a.size].reshape(a.shape))
        i += a.size
    return out


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, max_grad_norm=None):
        self.params = params  # list of arrays, updated in place
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        if self.max_grad_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.max_grad_norm:
                grads = [g * (self.max_grad_norm / norm) for g in grads]
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
