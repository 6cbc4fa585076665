"""
Network layers with concrete and interval semantics.
"""

from .base_layer import BaseLayer
from .affine_layers import Dense, Conv2D, Normalize, BatchNormEval
from .activation_layers import ReLU, Flatten
from .layer_factory import ARCHITECTURES, LayerFactory, load_architecture

__all__ = [
    'BaseLayer',
    'Dense',
    'Conv2D',
    'Normalize',
    'BatchNormEval',
    'ReLU',
    'Flatten',
    'ARCHITECTURES',
    'LayerFactory',
    'load_architecture',
]
