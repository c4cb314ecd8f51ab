"""Minimal neural substrate for the allocator agents: dense networks with
exact reverse-mode gradients, a squashed-Gaussian head for phase vectors, a
categorical head for per-subcarrier user choices, and Adam.

Everything is double precision numpy; forward passes cache what backward
needs, and all gradients are checked against central finite differences in
the test suite.
"""

import json

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
TWO_PI = 2.0 * np.pi


def _activation(tag):
    if tag == "tanh":
        return np.tanh, lambda z, a: 1.0 - a ** 2
    if tag == "relu":
        return (lambda z: np.maximum(z, 0.0),
                lambda z, a: (z > 0).astype(float))
    if tag == "linear":
        return (lambda z: z, lambda z, a: np.ones_like(z))
    raise ValueError(f"unknown activation '{tag}'")


class Mlp:
    """Fully connected network; hidden activations plus a linear output."""

    def __init__(self, sizes, rng, hidden_activation="tanh",
                 output_scale=1.0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        self.activations = [hidden_activation] * (len(sizes) - 2) + ["linear"]
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(2.0 / (n_in + n_out))
            if i == len(sizes) - 2:
                scale *= output_scale
            self.weights.append(scale * rng.standard_normal((n_out, n_in)))
            self.biases.append(np.zeros(n_out))

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x):
        """Returns (output, cache); x is (B, in) or (in,)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(
                f"input width {x.shape[1]} != expected {self.sizes[0]}")
        acts = [x]
        pre = []
        a = x
        for w, b, tag in zip(self.weights, self.biases, self.activations):
            z = a @ w.T + b
            f, _ = _activation(tag)
            a = f(z)
            pre.append(z)
            acts.append(a)
        cache = (acts, pre, squeeze)
        return (a[0] if squeeze else a), cache

    def backward(self, cache, dout):
        """Exact gradients for a cached forward pass.

        dout is dLoss/doutput with the output's shape; returns
        (grads, dx) where grads matches self.params order.
        """
        acts, pre, squeeze = cache
        dout = np.asarray(dout, dtype=float)
        if squeeze:
            dout = dout[None, :]
        grads = [None] * (2 * len(self.weights))
        d = dout
        for i in range(len(self.weights) - 1, -1, -1):
            _, dfun = _activation(self.activations[i])
            dz = d * dfun(pre[i], acts[i + 1])
            grads[2 * i] = dz.T @ acts[i]
            grads[2 * i + 1] = dz.sum(axis=0)
            d = dz @ self.weights[i]
        return grads, (d[0] if squeeze else d)

    def state_arrays(self, prefix):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}_w{i}"] = w
            out[f"{prefix}_b{i}"] = b
        return out

    def load_state_arrays(self, arrays, prefix):
        for i in range(len(self.weights)):
            w = arrays[f"{prefix}_w{i}"]
            b = arrays[f"{prefix}_b{i}"]
            if w.shape != self.weights[i].shape:
                raise ValueError(
                    f"shape mismatch for {prefix}_w{i}: "
                    f"{w.shape} vs {self.weights[i].shape}")
            self.weights[i] = w.astype(float)
            self.biases[i] = b.astype(float)


def phase_squash(u):
    """Map unbounded pre-actions to phases in [0, 2*pi).

    tanh saturates to exactly 1.0 in double precision for large u, so the
    result is wrapped onto the circle to keep the half-open range.
    """
    return np.mod((np.tanh(u) + 1.0) * np.pi, TWO_PI)


def _log_squash_jacobian(u):
    # log d(phase)/du = log(pi * (1 - tanh(u)^2)), computed stably
    return np.log(np.pi) + 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class GaussianHead:
    """Diagonal Gaussian over pre-actions with a tanh squash onto [0, 2*pi).

    The log-std is a learned state-independent vector, clamped to the
    configured bounds after every optimizer step.
    """

    def __init__(self, dim, std_init=0.5, std_bounds=(1e-3, 2.0)):
        self.log_std = np.full(dim, np.log(std_init), dtype=float)
        self.log_bounds = (np.log(std_bounds[0]), np.log(std_bounds[1]))
        self.clamp()

    def clamp(self):
        np.clip(self.log_std, self.log_bounds[0], self.log_bounds[1],
                out=self.log_std)

    def sample_pre_action(self, mean, rng):
        std = np.exp(self.log_std)
        return mean + std * rng.standard_normal(mean.shape)

    def log_prob(self, mean, u):
        """Exact log-density of the squashed action with its gradients.

        Returns (logp, dlogp/dmean, dlogp/dlog_std); shapes (B,), (B, M),
        (B, M) for mean of shape (B, M).
        """
        mean = np.atleast_2d(mean)
        u = np.atleast_2d(u)
        std = np.exp(self.log_std)
        z = (u - mean) / std
        base = -0.5 * z ** 2 - self.log_std - 0.5 * LOG_2PI
        logp = np.sum(base - _log_squash_jacobian(u), axis=1)
        dmean = z / std
        dlog_std = z ** 2 - 1.0
        return logp, dmean, dlog_std

    def entropy(self):
        """Base-Gaussian entropy and its log-std gradient."""
        h = float(np.sum(self.log_std + 0.5 * (LOG_2PI + 1.0)))
        return h, np.ones_like(self.log_std)


def log_softmax(logits):
    logits = np.atleast_2d(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class CategoricalHead:
    """Softmax policy over a discrete action set, parameterized by logits."""

    @staticmethod
    def sample(logits, rng):
        probs = np.exp(log_softmax(logits))
        cdf = probs.cumsum(axis=1)
        draws = rng.random((probs.shape[0], 1))
        return (draws > cdf).sum(axis=1)

    @staticmethod
    def log_prob(logits, index):
        """Log-probability of chosen indices plus d/dlogits."""
        logits = np.atleast_2d(logits)
        index = np.atleast_1d(index).astype(int)
        logp_all = log_softmax(logits)
        rows = np.arange(logits.shape[0])
        logp = logp_all[rows, index]
        grad = -np.exp(logp_all)
        grad[rows, index] += 1.0
        return logp, grad

    @staticmethod
    def entropy(logits):
        """Per-row entropy plus d/dlogits."""
        logp_all = log_softmax(np.atleast_2d(logits))
        p = np.exp(logp_all)
        h = -np.sum(p * logp_all, axis=1)
        grad = -p * (logp_all + h[:, None])
        return h, grad


class Adam:
    """Standard Adam with bias correction; updates parameters in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m):
            raise ValueError("parameter list changed size")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g ** 2
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def clip_grad_norm(grads, max_norm):
    """Scale a gradient list so its global l2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g ** 2)) for g in grads))
    if max_norm is not None and total > max_norm and total > 0:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads, total


def save_archive(path, arrays, manifest):
    """Write a tensor archive with a JSON manifest."""
    np.savez(path, __manifest__=json.dumps(manifest, sort_keys=True), **arrays)


def load_archive(path):
    """Read back (arrays, manifest) from save_archive output."""
    with np.load(path, allow_pickle=False) as data:
        manifest = json.loads(str(data["__manifest__"]))
        arrays = {k: data[k] for k in data.files if k != "__manifest__"}
    return arrays, manifest
