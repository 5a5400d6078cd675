"""Minimal float64 layer stack with manual backprop over a flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DENSE = "dense"
GROUPNORM = "groupnorm"
ACTIVATIONS = ("linear", "relu")
GN_EPS = 1e-5


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int
    activation: str = "linear"
    groups: int = 1

    def to_dict(self):
        return {"kind": self.kind, "size": self.size, "activation": self.activation,
                "groups": self.groups}


def dense(size, activation="linear"):
    return LayerSpec(DENSE, size, activation)


def group_norm(size, groups, activation="linear"):
    return LayerSpec(GROUPNORM, size, activation, groups)


class Stack:
    """Sequential layers whose parameters live in one flat vector.

    ``forward`` returns the output plus a cache; ``backward`` takes that cache
    and the output gradient and returns ``(param_grad, input_grad)``.
    """

    def __init__(self, input_dim: int, layers):
        self.input_dim = int(input_dim)
        self.layers = list(layers)
        self.slots = []  # per layer: list of (offset, shape)
        offset = 0
        width = self.input_dim
        for spec in self.layers:
            if spec.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {spec.activation!r}")
            if spec.kind == DENSE:
                shapes = [(width, spec.size), (spec.size,)]
            elif spec.kind == GROUPNORM:
                if spec.size != width or width % spec.groups:
                    raise ValueError(f"group norm over {width} channels needs size={width} "
                                     f"and groups dividing it, got {spec}")
                shapes = [(width,), (width,)]
            else:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
            slot = []
            for shape in shapes:
                slot.append((offset, shape))
                offset += int(np.prod(shape))
            self.slots.append(slot)
            width = spec.size
        self.output_dim = width
        self.n_params = offset

    def views(self, w, i):
        return [w[o:o + int(np.prod(s))].reshape(s) for o, s in self.slots[i]]

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """He-style uniform fan-in init for dense weights; zero biases; unit GN scale."""
        w = np.zeros(self.n_params)
        width = self.input_dim
        for i, spec in enumerate(self.layers):
            a, b = self.views(w, i)
            if spec.kind == DENSE:
                limit = np.sqrt(6.0 / width)
                a[...] = rng.uniform(-limit, limit, size=a.shape)
            else:
                a[...] = 1.0
            width = spec.size
        return w

    def forward(self, w, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected input of shape (n, {self.input_dim}), got {x.shape}")
        cache = []
        h = x
        for i, spec in enumerate(self.layers):
            a, b = self.views(w, i)
            if spec.kind == DENSE:
                z = h @ a + b
                extra = None
            else:
                n = h.shape[0]
                g = h.reshape(n, spec.groups, -1)
                mu = g.mean(axis=2, keepdims=True)
                inv = 1.0 / np.sqrt(g.var(axis=2, keepdims=True) + GN_EPS)
                xhat = ((g - mu) * inv).reshape(n, -1)
                z = xhat * a + b
                extra = (xhat, inv)
            out = np.maximum(z, 0.0) if spec.activation == "relu" else z
            cache.append((h, z, extra))
            h = out
        return h, cache

    def backward(self, w, cache, grad_out):
        grad = np.zeros(self.n_params)
        d = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            spec = self.layers[i]
            h, z, extra = cache[i]
            if spec.activation == "relu":
                d = d * (z > 0)
            a, _ = self.views(w, i)
            ga, gb = self.views(grad, i)
            if spec.kind == DENSE:
                ga[...] = h.T @ d
                gb[...] = d.sum(axis=0)
                d = d @ a.T
            else:
                xhat, inv = extra
                ga[...] = (d * xhat).sum(axis=0)
                gb[...] = d.sum(axis=0)
                n = d.shape[0]
                dx = (d * a).reshape(n, spec.groups, -1)
                xh = xhat.reshape(n, spec.groups, -1)
                d = (inv * (dx - dx.mean(axis=2, keepdims=True)
                            - xh * (dx * xh).mean(axis=2, keepdims=True))).reshape(n, -1)
        return grad, d


def softmax_cross_entropy(logits, labels, weights=None):
    """Mean (optionally weighted) cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    per_sample = log_z - shifted[np.arange(n), labels]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = float((w * per_sample).sum() / n)
    probs = np.exp(shifted - log_z[:, None])
    probs[np.arange(n), labels] -= 1.0
    return loss, probs * (w / n)[:, None]
