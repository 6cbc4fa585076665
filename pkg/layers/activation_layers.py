"""
Piecewise-monotone and reshaping layers; their interval forms act on the endpoints directly.
"""

import math

import torch

from layers.base_layer import BaseLayer, Shape
from models.interval import IntervalTensor


class ReLU(BaseLayer):
    """Monotone activation; interval endpoints map to endpoints."""

    kind = 'relu'

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(x)

    def forward_interval(self, x: IntervalTensor) -> IntervalTensor:
        return x.relu()

    def output_shape(self, input_shape: Shape) -> Shape:
        return tuple(input_shape)


class Flatten(BaseLayer):
    """Flatten everything after the batch dimension."""

    kind = 'flatten'

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.flatten(1)

    def forward_interval(self, x: IntervalTensor) -> IntervalTensor:
        return x.flatten(1)

    def output_shape(self, input_shape: Shape) -> Shape:
        return (math.prod(input_shape),)
