"""Minimal module system: named parameter discovery, state dicts, dtype replay."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            if tuple(state[k].shape) != p.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (used for 64-bit gradient replays)."""
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def uniform(rng, shape, bound, dtype=np.float32):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Pointwise(Module):
    """1x1 convolution c_in -> c_out with bias."""

    def __init__(self, c_in, c_out, rng, bias=True):
        bound = 1.0 / np.sqrt(c_in)
        self.weight = Parameter(uniform(rng, (c_out, c_in), bound))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32)) if bias else None

    def forward(self, x):
        return F.pointwise(x, self.weight, self.bias)


class Conv2d(Module):
    """Same-padded k x k convolution, He-uniform init."""

    def __init__(self, c_in, c_out, rng, k=3):
        bound = np.sqrt(6.0 / (c_in * k * k))
        self.weight = Parameter(uniform(rng, (c_out, c_in, k, k), bound))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias)
