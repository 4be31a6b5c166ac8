"""Minimal learnable layers on top of the autodiff tensors.

Parameters are initialized uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Every layer exposes ``named_parameters(prefix)`` so the model can assemble a
flat name -> tensor map for the optimizer and the checkpoint container.
"""

import numpy as np

from . import autodiff as ad


def _init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return ad.Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


class Linear:
    """y = x @ W^T + b for row-stacked inputs."""

    def __init__(self, rng, in_dim, out_dim, bias=True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = _init(rng, in_dim, (out_dim, in_dim))
        self.bias = _init(rng, in_dim, (out_dim,)) if bias else None

    def __call__(self, x):
        out = ad.matmul(x, ad.transpose(self.weight))
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out

    def named_parameters(self, prefix):
        params = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            params[f"{prefix}.bias"] = self.bias
        return params

    def mac_count(self, rows):
        return rows * self.in_dim * self.out_dim


class MLP:
    """Fully-connected stack with ReLU between layers (none after the last)."""

    def __init__(self, rng, dims):
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = ad.relu(x)
        return x

    def named_parameters(self, prefix):
        params = {}
        for i, layer in enumerate(self.layers):
            params.update(layer.named_parameters(f"{prefix}.{i}"))
        return params

    def mac_count(self, rows):
        return sum(layer.mac_count(rows) for layer in self.layers)


class LayerNorm:
    """Per-row normalization with learnable gain and bias."""

    def __init__(self, dim):
        self.gain = ad.Tensor(np.ones(dim), requires_grad=True)
        self.bias = ad.Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return ad.layer_norm_rows(x, self.gain, self.bias)

    def named_parameters(self, prefix):
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}

    def mac_count(self, rows):
        return 0


def collect(modules: dict) -> dict:
    """Merge named parameters of several modules under their own prefixes."""
    params = {}
    for prefix, module in modules.items():
        params.update(module.named_parameters(prefix))
    return params
