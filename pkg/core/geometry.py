"""
Pixel coordinate conventions and inverse transforms over interval parameters.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, TypeVar, Union

import torch

from core.interval_ops import iv_clamp01, iv_trig
from models.interval import Interval, IntervalTensor
from models.transforms import Rotate, Scale, Shear, TransformChain, Translate
from utils.error_handler import IntervalDomainError

logger = logging.getLogger(__name__)

Coord = TypeVar('Coord', Interval, IntervalTensor)


@dataclass(frozen=True)
class CoordGrid:
    """Centered coordinates of every pixel: U grows to the right, V grows upwards."""
    U: torch.Tensor
    V: torch.Tensor

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.U.shape)


def coord_u(j: Union[int, torch.Tensor], width: int):
    return j - (width - 1) / 2


def coord_v(i: Union[int, torch.Tensor], height: int):
    return (height - 1) / 2 - i


def coord_grid(height: int, width: int) -> CoordGrid:
    """
    Build the centered coordinate grid of an H x W image.

    U(i, j) = j - (W - 1) / 2 and V(i, j) = (H - 1) / 2 - i.
    """
    if height < 1 or width < 1:
        raise ValueError(f"Image dimensions must be positive, got {height}x{width}")
    rows = torch.arange(height, dtype=torch.float64)
    cols = torch.arange(width, dtype=torch.float64)
    V, U = torch.meshgrid(coord_v(rows, height), coord_u(cols, width), indexing='ij')
    return CoordGrid(U=U.contiguous(), V=V.contiguous())


def _inverse_step(stage, u: Coord, v: Coord) -> Tuple[Coord, Coord]:
    """Undo one affine stage. Works on scalar intervals and interval tensors alike."""
    if isinstance(stage, Rotate):
        cos = iv_trig('cos', stage.radians)
        sin = iv_trig('sin', stage.radians)
        return u * cos + v * sin, v * cos - u * sin
    if isinstance(stage, Translate):
        return u - stage.du, v - stage.dv
    if isinstance(stage, Scale):
        divisor = stage.factor + 1.0
        if divisor.lo <= 0.0:
            raise IntervalDomainError(f"Scale divisor {divisor} contains zero")
        return u / divisor, v / divisor
    if isinstance(stage, Shear):
        return u - v * stage.factor, v
    raise ValueError(f"Unsupported affine stage: {stage!r}")


def _inverse(chain: TransformChain, u: Coord, v: Coord) -> Tuple[Coord, Coord]:
    if not chain.affine:
        raise ValueError("Inverse transform needs at least one affine stage")
    for stage in reversed(chain.affine):
        u, v = _inverse_step(stage, u, v)
    return u, v


def inverse_transform(chain: TransformChain, U: torch.Tensor,
                      V: torch.Tensor) -> Tuple[IntervalTensor, IntervalTensor]:
    """
    Map output coordinates back to source coordinates for every parameter in the chain.

    Stages are undone in reverse application order, so a chain listed as
    scale, rotate, shear computes T_scale^-1(T_rot^-1(T_shear^-1(u, v))).

    Args:
        chain: transform chain with at least one affine stage
        U: horizontal coordinates (any shape)
        V: vertical coordinates (same shape as U)

    Returns:
        (U', V') interval tensors enclosing the inverse coordinates
    """
    if U.shape != V.shape:
        raise ValueError(f"Coordinate shapes differ: {tuple(U.shape)} vs {tuple(V.shape)}")
    return _inverse(chain, IntervalTensor.point(U.to(torch.float64)), IntervalTensor.point(V.to(torch.float64)))


def inverse_point(chain: TransformChain, u: float, v: float) -> Tuple[Interval, Interval]:
    """Scalar counterpart of inverse_transform for a single coordinate pair."""
    return _inverse(chain, Interval.point(u), Interval.point(v))


def apply_pixelwise(x: Union[IntervalTensor, Interval], contrast: Interval,
                    brightness: Interval) -> Union[IntervalTensor, Interval]:
    """clamp01((1 + contrast) * x + brightness), elementwise."""
    scaled = x * (contrast + 1.0) + brightness
    if isinstance(scaled, Interval):
        return iv_clamp01(scaled)
    return scaled.clamp01()
