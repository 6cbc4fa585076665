"""
Feedforward network with concrete and interval forward passes and tape-based gradients.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import torch
from torch import nn

from layers.affine_layers import Normalize
from layers.base_layer import BaseLayer, Shape
from layers.layer_factory import LayerFactory
from models.interval import IntervalTensor
from utils.error_handler import ShapeMismatchError

logger = logging.getLogger(__name__)

Primal = Union[torch.Tensor, IntervalTensor]


@dataclass
class TapeRecord:
    """Output of one layer during a recorded forward pass."""
    layer_index: int
    kind: str
    primal: Primal


@dataclass
class GradientTape:
    """
    Records the primal values of forward passes so the loss can be
    differentiated with respect to the network parameters.
    """
    network_id: int
    inputs: List[Primal] = field(default_factory=list)
    records: List[TapeRecord] = field(default_factory=list)
    output: Optional[torch.Tensor] = None

    @classmethod
    def for_network(cls, network: 'Network') -> 'GradientTape':
        return cls(network_id=id(network))

    def record(self, layer_index: int, kind: str, primal: Primal) -> None:
        self.records.append(TapeRecord(layer_index, kind, primal))

    def watch(self, output: torch.Tensor) -> torch.Tensor:
        """Mark the scalar (or tensor) to differentiate."""
        self.output = output
        return output

    def replay_matches(self, network: 'Network') -> bool:
        """Re-run every recorded forward pass and compare primals bitwise."""
        replay = GradientTape.for_network(network)
        with torch.no_grad():
            for x in self.inputs:
                if isinstance(x, IntervalTensor):
                    network.forward_interval(x, tape=replay)
                else:
                    network.forward_concrete(x, tape=replay)
        if len(replay.records) != len(self.records):
            return False
        for ours, theirs in zip(self.records, replay.records):
            if isinstance(ours.primal, IntervalTensor):
                if not (torch.equal(ours.primal.lo, theirs.primal.lo) and torch.equal(ours.primal.hi, theirs.primal.hi)):
                    return False
            elif not torch.equal(ours.primal, theirs.primal):
                return False
        return True


class Network(nn.Module):
    """
    Ordered feedforward layer list mapping C x H x W images to n_o outputs.

    The shape chain is validated at construction.
    """

    def __init__(self, layers: Sequence[BaseLayer], input_shape: Shape,
                 n_outputs: Optional[int] = None, task: str = 'classification'):
        super().__init__()
        if not layers:
            raise ShapeMismatchError("A network needs at least one layer")
        self.layers = nn.ModuleList(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.task = task

        shape = self.input_shape
        for index, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeMismatchError as e:
                raise ShapeMismatchError(f"Layer {index} ({layer.kind}): {e}") from e
        if len(shape) != 1:
            raise ShapeMismatchError(f"Network output must be a vector, got shape {shape}")
        if n_outputs is not None and shape[0] != n_outputs:
            raise ShapeMismatchError(f"Network produces {shape[0]} outputs, expected {n_outputs}")
        self.n_outputs = shape[0]

    @classmethod
    def from_descriptors(cls, descriptors: Sequence[Dict[str, Any]], input_shape: Shape,
                         seed: int = 0, task: str = 'classification',
                         n_outputs: Optional[int] = None) -> 'Network':
        layers, _ = LayerFactory(seed).build_layers(descriptors, input_shape)
        return cls(layers, input_shape, n_outputs=n_outputs, task=task)

    def descriptors(self) -> List[Dict[str, Any]]:
        return [layer.descriptor() for layer in self.layers]

    def blob_tensors(self) -> List[torch.Tensor]:
        return [tensor for layer in self.layers for tensor in layer.blob_tensors()]

    @property
    def parameter_count(self) -> int:
        return sum(param.numel() for param in self.parameters())

    def set_input_statistics(self, mean: Sequence[float], std: Sequence[float]) -> bool:
        """Fill the first Normalize layer's statistics; returns False if the network has none."""
        for layer in self.layers:
            if isinstance(layer, Normalize):
                layer.set_statistics(mean, std)
                return True
        return False

    def _batched(self, x: torch.Tensor) -> Tuple[torch.Tensor, bool]:
        single = x.dim() == len(self.input_shape)
        if single:
            x = x.unsqueeze(0)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatchError(
                f"Input of shape {tuple(x.shape)} does not match network input {self.input_shape}"
            )
        return x, single

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_concrete(x)

    def forward_concrete(self, x: torch.Tensor, tape: Optional[GradientTape] = None) -> torch.Tensor:
        """
        Concrete evaluation.

        Args:
            x: one image (C x H x W) or a batch (N x C x H x W)
            tape: optional tape recording every layer output

        Returns:
            output vector (n_o,) or batch of outputs (N x n_o)
        """
        self._check_tape(tape)
        x, single = self._batched(x)
        if tape is not None:
            tape.inputs.append(x)
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if tape is not None:
                tape.record(index, layer.kind, x)
        return x[0] if single else x

    def forward_interval(self, x: IntervalTensor, tape: Optional[GradientTape] = None) -> IntervalTensor:
        """
        Interval bound propagation.

        Args:
            x: interval image or batch of interval images
            tape: optional tape recording every layer's interval output

        Returns:
            IntervalTensor of shape (n_o,) or (N, n_o)
        """
        self._check_tape(tape)
        single = x.lo.dim() == len(self.input_shape)
        if single:
            x = IntervalTensor(x.lo.unsqueeze(0), x.hi.unsqueeze(0))
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatchError(
                f"Interval input of shape {tuple(x.shape)} does not match network input {self.input_shape}"
            )
        if tape is not None:
            tape.inputs.append(x)
        for index, layer in enumerate(self.layers):
            x = layer.forward_interval(x)
            if tape is not None:
                tape.record(index, layer.kind, x)
        return x[0] if single else x

    def backward(self, tape: GradientTape,
                 output_grad: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
        """
        Reverse-mode gradients of the tape's watched output with respect to all parameters.

        |W| in the interval radius differentiates as sign(W) with sign(0) = 0.

        Returns:
            mapping parameter name -> gradient (zeros for parameters the output does not use)
        """
        self._check_tape(tape)
        if tape is None or tape.output is None:
            raise ValueError("Tape has no watched output")
        names, params = zip(*self.named_parameters())
        if output_grad is None and tape.output.numel() == 1:
            output_grad = torch.ones_like(tape.output)
        grads = torch.autograd.grad(tape.output, params, grad_outputs=output_grad, allow_unused=True)
        return {
            name: grad if grad is not None else torch.zeros_like(param)
            for name, param, grad in zip(names, params, grads)
        }

    def _check_tape(self, tape: Optional[GradientTape]) -> None:
        if tape is not None and tape.network_id != id(self):
            raise ShapeMismatchError("Tape was recorded on a different network")


def forward_concrete(net: Network, x: torch.Tensor) -> torch.Tensor:
    return net.forward_concrete(x)


def forward_interval(net: Network, x: IntervalTensor) -> IntervalTensor:
    return net.forward_interval(x)


def backward(net: Network, tape: GradientTape,
             output_grad: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
    return net.backward(tape, output_grad)


def describe_network(net: Network) -> str:
    parts = [f"{layer.kind}" for layer in net.layers]
    return f"{' -> '.join(parts)} ({net.parameter_count:,} parameters, input {net.input_shape})"
