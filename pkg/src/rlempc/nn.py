"""Small fully connected networks with hand-written backpropagation."""

import numpy as np


def relu(z):
    return np.maximum(z, 0.0)


class MlpNet:
    """ReLU multilayer perceptron with an identity or tanh output layer.

    All weights and biases live in one flat vector ``params``; ``W[i]`` and
    ``b[i]`` are views into it, so optimisers and soft updates work on the
    flat vector directly.  Layer ``i`` computes ``a @ W[i] + b[i]``.
    """

    def __init__(self, sizes, out_act="identity", rng=None, final_scale=3e-3):
        if out_act not in ("identity", "tanh"):
            raise ValueError("out_act must be 'identity' or 'tanh'")
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        self.out_act = out_act
        n = sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))
        self.params = np.zeros(n)
        self._bind()
        if rng is not None:
            self.init(rng, final_scale)

    def _bind(self):
        self.W, self.b = [], []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            self.W.append(self.params[off:off + a * b].reshape(a, b))
            off += a * b
            self.b.append(self.params[off:off + b])
            off += b

    @property
    def n_params(self):
        return self.params.size

    def init(self, rng, final_scale=3e-3):
        """Fan-in uniform init for hidden layers, small uniform for the output."""
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            lim = final_scale if i == last else 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-lim, lim, W.shape)
            b[...] = rng.uniform(-lim, lim, b.shape)

    def set_params(self, flat):
        flat = np.asarray(flat, float)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.size} parameters, got {flat.size}")
        self.params[...] = flat

    def copy(self):
        net = MlpNet(self.sizes, self.out_act)
        net.params[...] = self.params
        return net

    def _check(self, X):
        X = np.asarray(X, float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {X.shape[1]} != {self.sizes[0]}")
        return X, single

    def forward(self, X):
        X, single = self._check(X)
        a = X
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = a @ W + b
            a = relu(z) if i < last else z
        if self.out_act == "tanh":
            a = np.tanh(a)
        return a[0] if single else a

    def forward_cache(self, X):
        X, _ = self._check(X)
        acts = [X]
        a = X
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = a @ W + b
            a = relu(z) if i < last else z
            acts.append(a)
        if self.out_act == "tanh":
            a = np.tanh(a)
        return a, (acts, a)

    def backward(self, cache, dY):
        """Gradient of ``sum(dY * Y)`` w.r.t. parameters and inputs.

        Returns ``(flat_param_grad, dX)``.
        """
        acts, Y = cache
        dY = np.atleast_2d(np.asarray(dY, float))
        if dY.shape != Y.shape:
            raise ValueError(f"upstream gradient shape {dY.shape} != output shape {Y.shape}")
        grad = np.empty_like(self.params)
        gW, gb = [], []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            gW.append(grad[off:off + a * b].reshape(a, b))
            off += a * b
            gb.append(grad[off:off + b])
            off += b
        d = dY * (1.0 - Y * Y) if self.out_act == "tanh" else dY
        for i in range(len(self.W) - 1, -1, -1):
            a_in = acts[i]
            gW[i][...] = a_in.T @ d
            gb[i][...] = d.sum(axis=0)
            d = d @ self.W[i].T
            if i > 0:
                d = d * (acts[i] > 0)
        return grad, d

    def soft_update(self, source, tau):
        """``self <- tau * source + (1 - tau) * self``."""
        if source.sizes != self.sizes:
            raise ValueError("soft update between differently shaped nets")
        self.params *= 1.0 - tau
        self.params += tau * source.params


class Adam:
    def __init__(self, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
