"""Learnable point-set layers built on the autodiff engine.

An Affine is a shared per-point linear map (a 1x1 convolution over an
unordered point set). MLP stacks affines with leaky-ReLU in between.
PointConv convolves features over k-NN neighborhoods with kernel weights
produced by a small network over relative coordinates.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, gather_rows, leaky_relu, matmul, mul, reduce_sum, sigmoid
from .geometry import k_nearest

DEFAULT_SLOPE = 0.1


def glorot_uniform(rng, fan_in, fan_out):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _activate(x, activation, slope):
    if activation is None or activation == "none":
        return x
    if activation == "leaky-relu":
        return leaky_relu(x, slope)
    if activation == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {activation!r}")


class Affine:
    """y = x @ W + b applied per point; weights shared across the set."""

    def __init__(self, d_in, d_out, rng, name="affine", activation=None, slope=DEFAULT_SLOPE):
        self.name = name
        self.activation = activation
        self.slope = slope
        self.weight = Tensor(glorot_uniform(rng, d_in, d_out), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x):
        y = matmul(as_tensor(x), self.weight) + self.bias
        return _activate(y, self.activation, self.slope)

    def params(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}


class MLP:
    """Per-point affine stack: leaky-ReLU between layers, `final_activation` after the last.

    widths = [d_in, hidden..., d_out]. Permutation equivariant by construction.
    """

    def __init__(self, widths, rng, name="mlp", final_activation=None, slope=DEFAULT_SLOPE):
        if len(widths) < 2:
            raise ValueError("MLP: need at least input and output widths")
        self.name = name
        self.layers = []
        for i in range(len(widths) - 1):
            last = i == len(widths) - 2
            act = final_activation if last else "leaky-relu"
            self.layers.append(Affine(widths[i], widths[i + 1], rng,
                                      name=f"{name}.{i}", activation=act, slope=slope))

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def params(self):
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out


class PointConv:
    """Continuous convolution over k-NN neighborhoods of a point set.

    For each output point p: kernel weights = weight_net(q_j - p) per neighbor,
    aggregated as affine(sum_j weights_j * features_j). Output positions may be
    a downsampled subset of the inputs or the same set.
    """

    def __init__(self, d_in, d_out, rng, name="pointconv", k=16, hidden=32,
                 activation="leaky-relu", slope=DEFAULT_SLOPE):
        self.name = name
        self.k = k
        self.weight_net = MLP([3, hidden, d_in], rng, name=f"{name}.wnet", slope=slope)
        self.project = Affine(d_in, d_out, rng, name=f"{name}.proj",
                              activation=activation, slope=slope)

    def __call__(self, out_positions, in_positions, in_features):
        out_positions = np.asarray(out_positions, dtype=np.float64)
        in_positions = np.asarray(in_positions, dtype=np.float64)
        nbrs = k_nearest(out_positions, in_positions, self.k)
        rel = in_positions[nbrs.indices] - out_positions[:, None, :]   # (m, k, 3)
        kernel = self.weight_net(Tensor(rel))                          # (m, k, d_in)
        gathered = gather_rows(as_tensor(in_features), nbrs.indices)   # (m, k, d_in)
        aggregated = reduce_sum(mul(kernel, gathered), axis=1)         # (m, d_in)
        return self.project(aggregated)

    def params(self):
        out = dict(self.weight_net.params())
        out.update(self.project.params())
        return out
