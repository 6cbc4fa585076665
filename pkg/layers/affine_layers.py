"""
Affine layers. Interval semantics use the center/radius form:
mu = W c + b and r = |W| rad, giving [mu - r, mu + r].
"""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from layers.base_layer import BaseLayer, Shape
from models.interval import IntervalTensor
from utils.error_handler import IntervalDomainError, ShapeMismatchError

logger = logging.getLogger(__name__)


def _uniform(shape: Sequence[int], bound: float, generator: Optional[torch.Generator]) -> torch.Tensor:
    return torch.empty(*shape, dtype=torch.get_default_dtype()).uniform_(-bound, bound, generator=generator)


class Dense(BaseLayer):
    """Fully connected layer y = W x + b."""

    kind = 'dense'

    def __init__(self, in_features: int, units: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.in_features = in_features
        self.units = units
        bound = 1.0 / math.sqrt(in_features)
        self.weight = nn.Parameter(_uniform((units, in_features), bound, generator))
        self.bias = nn.Parameter(_uniform((units,), bound, generator))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.weight, self.bias)

    def forward_interval(self, x: IntervalTensor) -> IntervalTensor:
        mu = F.linear(x.center, self.weight, self.bias)
        r = F.linear(x.radius, self.weight.abs())
        return IntervalTensor.from_center_radius(mu, r)

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 1 or input_shape[0] != self.in_features:
            raise ShapeMismatchError(
                f"Dense layer expects ({self.in_features},) inputs, got {tuple(input_shape)}"
            )
        return (self.units,)

    def descriptor(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'in_features': self.in_features, 'units': self.units}

    def blob_tensors(self) -> List[torch.Tensor]:
        return [self.weight, self.bias]


class Conv2D(BaseLayer):
    """2-D convolution with square kernels, evaluated as an affine operator."""

    kind = 'conv2d'

    def __init__(self, in_channels: int, filters: int, kernel: int, stride: int = 1, padding: int = 0,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        bound = 1.0 / math.sqrt(in_channels * kernel * kernel)
        self.weight = nn.Parameter(_uniform((filters, in_channels, kernel, kernel), bound, generator))
        self.bias = nn.Parameter(_uniform((filters,), bound, generator))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def forward_interval(self, x: IntervalTensor) -> IntervalTensor:
        mu = F.conv2d(x.center, self.weight, self.bias, stride=self.stride, padding=self.padding)
        r = F.conv2d(x.radius, self.weight.abs(), None, stride=self.stride, padding=self.padding)
        return IntervalTensor.from_center_radius(mu, r)

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise ShapeMismatchError(
                f"Conv2D expects {self.in_channels} x H x W inputs, got {tuple(input_shape)}"
            )
        _, height, width = input_shape
        out_h = (height + 2 * self.padding - self.kernel) // self.stride + 1
        out_w = (width + 2 * self.padding - self.kernel) // self.stride + 1
        if out_h < 1 or out_w < 1:
            raise ShapeMismatchError(
                f"Conv2D kernel {self.kernel} does not fit a {height}x{width} input"
            )
        return (self.filters, out_h, out_w)

    def descriptor(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'in_channels': self.in_channels,
            'filters': self.filters,
            'kernel': self.kernel,
            'stride': self.stride,
            'padding': self.padding,
        }

    def blob_tensors(self) -> List[torch.Tensor]:
        return [self.weight, self.bias]


def _channel_view(values: torch.Tensor, ndim: int) -> torch.Tensor:
    """Reshape a per-channel vector to broadcast against (N, C, ...) inputs."""
    return values.reshape((1, -1) + (1,) * (ndim - 2))


class Normalize(BaseLayer):
    """Per-channel (x - mean) / std with frozen statistics."""

    kind = 'normalize'

    def __init__(self, channels: int, mean: Optional[Sequence[float]] = None, std: Optional[Sequence[float]] = None):
        super().__init__()
        self.channels = channels
        dtype = torch.get_default_dtype()
        self.register_buffer('mean', torch.zeros(channels, dtype=dtype))
        self.register_buffer('std', torch.ones(channels, dtype=dtype))
        if mean is not None or std is not None:
            self.set_statistics(mean if mean is not None else [0.0] * channels,
                                std if std is not None else [1.0] * channels)

    def set_statistics(self, mean: Sequence[float], std: Sequence[float]) -> None:
        mean = torch.as_tensor(mean, dtype=self.mean.dtype).reshape(-1)
        std = torch.as_tensor(std, dtype=self.std.dtype).reshape(-1)
        if mean.numel() != self.channels or std.numel() != self.channels:
            raise ShapeMismatchError(f"Expected {self.channels} channel statistics")
        if torch.any(std <= 0):
            raise IntervalDomainError(f"Normalize std must be positive, got {std.tolist()}")
        self.mean.copy_(mean)
        self.std.copy_(std)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x - _channel_view(self.mean, x.dim())) / _channel_view(self.std, x.dim())

    def forward_interval(self, x: IntervalTensor) -> IntervalTensor:
        # std > 0, so the map is increasing and endpoints map to endpoints
        return IntervalTensor(self.forward(x.lo), self.forward(x.hi))

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) < 1 or input_shape[0] != self.channels:
            raise ShapeMismatchError(
                f"Normalize expects {self.channels} channels, got {tuple(input_shape)}"
            )
        return tuple(input_shape)

    def descriptor(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'channels': self.channels}

    def blob_tensors(self) -> List[torch.Tensor]:
        return [self.mean, self.std]

    def load_blob_tensors(self, tensors: List[torch.Tensor]) -> None:
        self.set_statistics(tensors[0], tensors[1])


class BatchNormEval(BaseLayer):
    """
    Batch normalization with frozen running statistics.

    Acts as the per-channel affine map k * x + (shift - k * running_mean) with
    k = scale / sqrt(running_var + eps); k may be negative.
    """

    kind = 'batchnorm'

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        if eps <= 0:
            raise IntervalDomainError(f"BatchNorm eps must be positive, got {eps}")
        self.channels = channels
        self.eps = eps
        dtype = torch.get_default_dtype()
        self.register_buffer('scale', torch.ones(channels, dtype=dtype))
        self.register_buffer('shift', torch.zeros(channels, dtype=dtype))
        self.register_buffer('running_mean', torch.zeros(channels, dtype=dtype))
        self.register_buffer('running_var', torch.ones(channels, dtype=dtype))

    def _coefficients(self):
        k = self.scale / torch.sqrt(self.running_var + self.eps)
        return k, self.shift - k * self.running_mean

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        k, offset = self._coefficients()
        return x * _channel_view(k, x.dim()) + _channel_view(offset, x.dim())

    def forward_interval(self, x: IntervalTensor) -> IntervalTensor:
        k, offset = self._coefficients()
        mu = x.center * _channel_view(k, x.lo.dim()) + _channel_view(offset, x.lo.dim())
        r = x.radius * _channel_view(k.abs(), x.lo.dim())
        return IntervalTensor.from_center_radius(mu, r)

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) < 1 or input_shape[0] != self.channels:
            raise ShapeMismatchError(
                f"BatchNorm expects {self.channels} channels, got {tuple(input_shape)}"
            )
        return tuple(input_shape)

    def descriptor(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'channels': self.channels, 'eps': self.eps}

    def blob_tensors(self) -> List[torch.Tensor]:
        return [self.scale, self.shift, self.running_mean, self.running_var]

    def load_blob_tensors(self, tensors: List[torch.Tensor]) -> None:
        if torch.any(tensors[3] < 0):
            raise IntervalDomainError("BatchNorm running_var must be nonnegative")
        super().load_blob_tensors(tensors)
