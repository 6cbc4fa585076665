"""
Factory for creating layers from manifest / architecture descriptors.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import torch

from layers.activation_layers import Flatten, ReLU
from layers.affine_layers import BatchNormEval, Conv2D, Dense, Normalize
from layers.base_layer import BaseLayer, Shape
from utils.error_handler import ShapeMismatchError

logger = logging.getLogger(__name__)


def _conv(filters: int, kernel: int, stride: int, padding: int) -> Dict[str, Any]:
    return {'kind': 'conv2d', 'filters': filters, 'kernel': kernel, 'stride': stride, 'padding': padding}


def _dense(units: int) -> Dict[str, Any]:
    return {'kind': 'dense', 'units': units}


def _stack(*layers: Dict[str, Any]) -> List[Dict[str, Any]]:
    """Insert ReLU after every affine layer but the last, and Flatten before the first dense layer."""
    out = [{'kind': 'normalize'}]
    flattened = False
    for index, layer in enumerate(layers):
        if layer['kind'] == 'dense' and not flattened:
            out.append({'kind': 'flatten'})
            flattened = True
        out.append(layer)
        if index < len(layers) - 1:
            out.append({'kind': 'relu'})
    return out


# Architecture presets: input shape, task and layer descriptors
ARCHITECTURES: Dict[str, Dict[str, Any]] = {
    'mnist': {
        'input_shape': [1, 28, 28],
        'task': 'classification',
        'layers': _stack(_conv(32, 4, 2, 1), _conv(64, 4, 2, 1), _dense(200), _dense(10)),
    },
    'mnist-small': {
        'input_shape': [1, 28, 28],
        'task': 'classification',
        'layers': _stack(_conv(16, 4, 2, 1), _conv(32, 4, 2, 1), _dense(100), _dense(10)),
    },
    'cifar': {
        'input_shape': [3, 32, 32],
        'task': 'classification',
        'layers': _stack(_conv(32, 3, 1, 1), _conv(32, 4, 2, 1), _conv(64, 4, 2, 1), _dense(150), _dense(10)),
    },
    'driving': {
        'input_shape': [3, 66, 200],
        'task': 'regression',
        'layers': _stack(_conv(24, 5, 2, 0), _conv(36, 5, 2, 0), _conv(48, 5, 2, 0), _conv(64, 3, 1, 0),
                         _conv(64, 3, 1, 0), _dense(100), _dense(50), _dense(10), _dense(1)),
    },
}


class LayerFactory:
    """Factory for creating layers based on descriptor kind."""

    # Mapping of descriptor kinds to their layer classes
    LAYER_MAPPING = {
        'dense': Dense,
        'conv2d': Conv2D,
        'normalize': Normalize,
        'batchnorm': BatchNormEval,
        'relu': ReLU,
        'flatten': Flatten,
    }

    def __init__(self, seed: int = 0):
        """
        Initialize the layer factory.

        Args:
            seed: seed of the generator used for weight initialization
        """
        self.generator = torch.Generator().manual_seed(seed)

    def create_layer(self, descriptor: Dict[str, Any], input_shape: Shape) -> BaseLayer:
        """
        Create a layer for a descriptor, inferring input dimensions from input_shape.

        Input dimensions given in the descriptor (as in saved manifests) must
        agree with the inferred ones.

        Raises:
            ValueError: if the kind is not supported
            ShapeMismatchError: if declared and inferred dimensions disagree
        """
        kind = descriptor.get('kind')
        if kind not in self.LAYER_MAPPING:
            raise ValueError(f"Unsupported layer kind: {kind}. Supported: {list(self.LAYER_MAPPING.keys())}")

        if kind == 'dense':
            in_features = math.prod(input_shape)
            self._check_declared(descriptor, 'in_features', in_features)
            layer = Dense(in_features, int(descriptor['units']), generator=self.generator)
        elif kind == 'conv2d':
            self._check_declared(descriptor, 'in_channels', input_shape[0])
            layer = Conv2D(input_shape[0], int(descriptor['filters']), int(descriptor['kernel']),
                           int(descriptor.get('stride', 1)), int(descriptor.get('padding', 0)),
                           generator=self.generator)
        elif kind == 'normalize':
            self._check_declared(descriptor, 'channels', input_shape[0])
            layer = Normalize(input_shape[0], descriptor.get('mean'), descriptor.get('std'))
        elif kind == 'batchnorm':
            self._check_declared(descriptor, 'channels', input_shape[0])
            layer = BatchNormEval(input_shape[0], float(descriptor.get('eps', 1e-5)))
        else:
            layer = self.LAYER_MAPPING[kind]()

        layer.output_shape(tuple(input_shape))
        return layer

    def build_layers(self, descriptors: Sequence[Dict[str, Any]], input_shape: Shape) -> Tuple[List[BaseLayer], Shape]:
        """
        Create the full layer list, threading shapes through the chain.

        Returns:
            (layers, output shape of the last layer)
        """
        layers = []
        shape = tuple(input_shape)
        for index, descriptor in enumerate(descriptors):
            try:
                layer = self.create_layer(descriptor, shape)
                shape = layer.output_shape(shape)
            except ShapeMismatchError as e:
                raise ShapeMismatchError(f"Layer {index} ({descriptor.get('kind')}): {e}") from e
            layers.append(layer)
        logger.debug(f"Built {len(layers)} layers, output shape {shape}")
        return layers, shape

    @staticmethod
    def _check_declared(descriptor: Dict[str, Any], key: str, inferred: int) -> None:
        declared = descriptor.get(key)
        if declared is not None and int(declared) != inferred:
            raise ShapeMismatchError(f"{key} declared as {declared} but the input provides {inferred}")


def load_architecture(name_or_path: str) -> Dict[str, Any]:
    """
    Resolve an architecture preset name or a JSON file path.

    The JSON file holds {"input_shape": [...], "task": ..., "layers": [...]}.
    """
    if name_or_path in ARCHITECTURES:
        return ARCHITECTURES[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(
            f"Architecture {name_or_path!r} is neither a preset ({', '.join(ARCHITECTURES)}) nor a file"
        )
    with open(path, 'r') as f:
        spec = json.load(f)
    if 'layers' not in spec or 'input_shape' not in spec:
        raise ValueError(f"Architecture file {path} needs 'input_shape' and 'layers'")
    spec.setdefault('task', 'classification')
    return spec
