"""
Base layer class for concrete and interval network evaluation.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Tuple

import torch
from torch import nn

from models.interval import IntervalTensor

Shape = Tuple[int, ...]


class BaseLayer(nn.Module, ABC):
    """Base class for all network layers."""

    kind = ''

    @abstractmethod
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """
        Concrete evaluation on a batch.

        Args:
            x: batch tensor, leading dimension is the batch

        Returns:
            Layer output for every batch element
        """
        pass

    @abstractmethod
    def forward_interval(self, x: IntervalTensor) -> IntervalTensor:
        """
        Interval evaluation on a batch of boxes.

        Args:
            x: interval tensor, leading dimension is the batch

        Returns:
            Interval tensor enclosing the layer output over every point of x
        """
        pass

    @abstractmethod
    def output_shape(self, input_shape: Shape) -> Shape:
        """
        Shape of one output element for one input element (no batch dimension).

        Raises:
            ShapeMismatchError: if the layer cannot accept input_shape
        """
        pass

    def descriptor(self) -> Dict[str, Any]:
        """Manifest entry describing the layer's hyperparameters."""
        return {'kind': self.kind}

    def blob_tensors(self) -> List[torch.Tensor]:
        """Tensors stored in the model blob, in manifest order."""
        return []

    def load_blob_tensors(self, tensors: List[torch.Tensor]) -> None:
        with torch.no_grad():
            for target, value in zip(self.blob_tensors(), tensors):
                target.copy_(value.reshape(target.shape))
