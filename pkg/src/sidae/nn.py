"""Layers and parameter containers on top of the autodiff engine.

Weights are initialized from a uniform distribution scaled by 1/sqrt(fan_in),
drawn from a caller-supplied numpy Generator so construction is seedable.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, batch_norm, conv2d, conv_transpose2d, matmul, relu


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Module:
    """Base container; walks its attributes to find parameters and buffers."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def modules(self):
        yield self
        for value in self.__dict__.values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            key = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{key}.{i}.")

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> dict:
        """Ordered name -> numpy array map of parameters then buffers."""
        state = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_arrays(self, state: dict):
        own = self.state_arrays()
        missing = [k for k in own if k not in state]
        if missing:
            raise KeyError(f"state is missing entries: {missing[:5]}")
        for name, p in self.named_parameters():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ShapeMismatch(name, arr.shape, p.data.shape)
            p.data = arr.astype(p.dtype, copy=True)
        for name, buf in self.named_buffers():
            arr = np.asarray(state[name])
            if arr.shape != buf.shape:
                raise ShapeMismatch(name, arr.shape, buf.shape)
            buf[...] = arr


class ShapeMismatch(ValueError):
    def __init__(self, name, got, want):
        super().__init__(f"entry {name!r}: shape {tuple(got)} does not match expected {tuple(want)}")


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = _uniform_init(rng, (in_features, out_features), in_features)
        self.bias = _uniform_init(rng, (out_features,), in_features) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0, bias=False):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = _uniform_init(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.bias = _uniform_init(rng, (out_channels,), fan_in) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            out = out + self.bias.reshape((1, -1, 1, 1))
        return out


class ConvTranspose2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0, output_padding=0, bias=False):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = _uniform_init(rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in)
        self.bias = _uniform_init(rng, (out_channels,), fan_in) if bias else None
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def forward(self, x: Tensor) -> Tensor:
        out = conv_transpose2d(
            x, self.weight, stride=self.stride, padding=self.padding, output_padding=self.output_padding
        )
        if self.bias is not None:
            out = out + self.bias.reshape((1, -1, 1, 1))
        return out


class BatchNorm(Module):
    """BatchNorm over the feature axis of (B, F) or channel axis of (N, C, H, W)."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(num_features, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(num_features, dtype=np.float32)
        self.running_var = np.ones(num_features, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x) if isinstance(layer, Module) else layer(x)
        return x


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return relu(x)


def count_parameters(module: Module) -> int:
    return sum(p.data.size for p in module.parameters())
