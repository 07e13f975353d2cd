"""Dense ReLU network with hand-written backprop and an Adam optimizer.

Weights are stored as ``(out, in)`` matrices; inputs are batched row-wise,
so a layer computes ``X @ W.T + b``.
"""
from __future__ import annotations

import json
import os

import numpy as np
from numba import njit

DEFAULT_DIMS = (1024, 256, 64, 32, 4)


class WeightFileError(ValueError):
    """A weight file is malformed or does not match the expected architecture."""


class QNetwork:
    """Feed-forward Q-function approximator.

    Parameters
    ----------
    dims : sequence of int
        Layer widths from input to output, e.g. ``(1024, 256, 64, 32, 4)``.
    rng : numpy.random.Generator, optional
        Source for He-normal weight initialization. Without it all weights
        start at zero.
    """

    def __init__(self, dims=DEFAULT_DIMS, rng=None):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer dims {dims}")
        self.dims = dims
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            else:
                w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_inputs(self):
        return self.dims[0]

    @property
    def n_outputs(self):
        return self.dims[-1]

    def parameters(self):
        """Flat list ``[W1, b1, W2, b2, ...]`` of the live parameter arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _as_batch(self, obs):
        x = np.asarray(obs, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ValueError(f"expected inputs of width {self.n_inputs}, got shape {np.shape(obs)}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        return x, single

    def _forward_cached(self, x):
        activations = [x]
        pre = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w.T + b
            pre.append(z)
            activations.append(z if i == last else np.maximum(z, 0.0))
        return pre, activations

    def forward(self, obs):
        """Q-values for one observation (1-D) or a batch (2-D)."""
        x, single = self._as_batch(obs)
        q = self._forward_cached(x)[1][-1]
        return q[0] if single else q

    __call__ = forward

    def hidden(self, obs):
        """Activations of the last hidden layer (input to the output layer)."""
        x, single = self._as_batch(obs)
        h = self._forward_cached(x)[1][-2]
        return h[0] if single else h

    def loss_and_gradients(self, obs, actions, targets):
        """Masked squared-error loss on the selected actions and its parameter gradients.

        Returns ``(loss, grads)`` with ``grads`` aligned with :meth:`parameters`.
        """
        x, _ = self._as_batch(obs)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        targets = np.asarray(targets, dtype=float).reshape(-1)
        n = x.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        if actions.shape[0] != n or targets.shape[0] != n:
            raise ValueError("observations, actions and targets differ in length")
        if np.any(actions < 0) or np.any(actions >= self.n_outputs):
            raise ValueError("action index out of range")
        if not np.all(np.isfinite(targets)):
            raise ValueError("non-finite target")

        pre, acts = self._forward_cached(x)
        rows = np.arange(n)
        residual = acts[-1][rows, actions] - targets
        loss = float(np.mean(residual**2))

        delta = np.zeros_like(acts[-1])
        delta[rows, actions] = 2.0 * residual / n
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = delta.T @ acts[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (pre[i - 1] > 0)
        return loss, grads


def clone_parameters(src: QNetwork) -> QNetwork:
    dst = QNetwork.__new__(QNetwork)
    dst.dims = src.dims
    dst.weights = [w.copy() for w in src.weights]
    dst.biases = [b.copy() for b in src.biases]
    return dst


def copy_parameters_into(dst: QNetwork, src: QNetwork) -> None:
    if dst.dims != src.dims:
        raise ValueError(f"dims mismatch: {dst.dims} vs {src.dims}")
    for d, s in zip(dst.parameters(), src.parameters()):
        d[...] = s


@njit(cache=True)
def _adam_update(p, g, m, v, b1, b2, lr_t, eps):
    # fused single pass; numpy temporaries made this the training bottleneck
    for i in range(p.size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * (g[i] * g[i])
        p[i] -= lr_t * m[i] / (np.sqrt(v[i]) + eps)


class AdamOptimizer:
    def __init__(self, net: QNetwork, learning_rate=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]

    def step(self, params, grads):
        if len(params) != len(self.m) or any(
            p.shape != m.shape or g.shape != m.shape for p, g, m in zip(params, grads, self.m)
        ):
            raise ValueError("parameter or gradient shapes do not match optimizer state")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.learning_rate * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            _adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=float).reshape(-1),
                         m.reshape(-1), v.reshape(-1), b1, b2, lr_t, self.eps)


def train_minibatch(net: QNetwork, optimizer: AdamOptimizer, observations, actions, targets) -> float:
    """One Adam step on the masked MSE loss; returns the pre-update loss."""
    loss, grads = net.loss_and_gradients(observations, actions, targets)
    optimizer.step(net.parameters(), grads)
    return loss


def save_parameters(net: QNetwork, destination) -> None:
    doc = {
        "dims": list(net.dims),
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(net.weights, net.biases)],
    }
    # json writes floats with repr(), which round-trips float64 exactly
    text = json.dumps(doc)
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="utf-8") as fh:
            fh.write(text)


def load_parameters(source, expected_dims=DEFAULT_DIMS) -> QNetwork:
    """Read a weight file; ``expected_dims=None`` accepts any consistent architecture."""
    try:
        if hasattr(source, "read"):
            doc = json.load(source)
        else:
            with open(os.fspath(source), encoding="utf-8") as fh:
                doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise WeightFileError(f"malformed weight file: {exc}") from exc

    if not isinstance(doc, dict) or "dims" not in doc or "layers" not in doc:
        raise WeightFileError("weight file needs 'dims' and 'layers'")
    dims = tuple(int(d) for d in doc["dims"])
    if expected_dims is not None and dims != tuple(expected_dims):
        raise WeightFileError(f"dimension mismatch: file has {list(dims)}, expected {list(expected_dims)}")
    layers = doc["layers"]
    if len(layers) != len(dims) - 1:
        raise WeightFileError(f"dimension error: {len(layers)} layers for dims {list(dims)}")

    net = QNetwork(dims)
    for i, layer in enumerate(layers):
        try:
            w = np.array(layer["w"], dtype=float)
            b = np.array(layer["b"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise WeightFileError(f"layer {i}: unreadable weights ({exc})") from exc
        if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
            raise WeightFileError(
                f"dimension error in layer {i}: w {w.shape}, b {b.shape}, "
                f"expected {(dims[i + 1], dims[i])} and {(dims[i + 1],)}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise WeightFileError(f"layer {i}: non-finite parameters")
        net.weights[i] = w
        net.biases[i] = b
    return net
