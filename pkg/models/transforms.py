"""
Geometric and pixelwise perturbations with interval parameters.

Affine kinds are listed in forward application order inside a TransformChain;
the pixelwise contrast/brightness stage always runs after all affine stages.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from models.interval import Interval
from utils.error_handler import IntervalDomainError


@dataclass(frozen=True)
class Rotate:
    """Rotation by an angle given in degrees."""
    angle: Interval
    radians: Interval = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'radians',
                           Interval(math.radians(self.angle.lo), math.radians(self.angle.hi)))

    def parameters(self) -> Tuple[Interval, ...]:
        return (self.angle,)

    def with_parameters(self, params: Sequence[Interval]) -> 'Rotate':
        return Rotate(params[0])

    @staticmethod
    def parameter_names() -> Tuple[str, ...]:
        return ('R',)

    @staticmethod
    def unit_scales() -> Tuple[float, ...]:
        return (1.0,)


@dataclass(frozen=True)
class Translate:
    """Translation by (du, dv) pixels."""
    du: Interval
    dv: Interval

    def parameters(self) -> Tuple[Interval, ...]:
        return (self.du, self.dv)

    def with_parameters(self, params: Sequence[Interval]) -> 'Translate':
        return Translate(params[0], params[1])

    @staticmethod
    def parameter_names() -> Tuple[str, ...]:
        return ('Tu', 'Tv')

    @staticmethod
    def unit_scales() -> Tuple[float, ...]:
        return (1.0, 1.0)


@dataclass(frozen=True)
class Scale:
    """Scaling by (1 + factor); requires 1 + factor.lo > 0."""
    factor: Interval

    def __post_init__(self):
        if 1.0 + self.factor.lo <= 0.0:
            raise IntervalDomainError(
                f"Scale factor must satisfy 1 + lambda > 0, got lambda in {self.factor}"
            )

    def parameters(self) -> Tuple[Interval, ...]:
        return (self.factor,)

    def with_parameters(self, params: Sequence[Interval]) -> 'Scale':
        return Scale(params[0])

    @staticmethod
    def parameter_names() -> Tuple[str, ...]:
        return ('Sc',)

    @staticmethod
    def unit_scales() -> Tuple[float, ...]:
        return (100.0,)


@dataclass(frozen=True)
class Shear:
    """Horizontal shear u + factor * v."""
    factor: Interval

    def parameters(self) -> Tuple[Interval, ...]:
        return (self.factor,)

    def with_parameters(self, params: Sequence[Interval]) -> 'Shear':
        return Shear(params[0])

    @staticmethod
    def parameter_names() -> Tuple[str, ...]:
        return ('Sh',)

    @staticmethod
    def unit_scales() -> Tuple[float, ...]:
        return (100.0,)


@dataclass(frozen=True)
class Pixelwise:
    """Contrast alpha and brightness beta: clamp01((1 + alpha) * x + beta)."""
    contrast: Interval
    brightness: Interval

    def parameters(self) -> Tuple[Interval, ...]:
        return (self.contrast, self.brightness)

    def with_parameters(self, params: Sequence[Interval]) -> 'Pixelwise':
        return Pixelwise(params[0], params[1])

    @staticmethod
    def parameter_names() -> Tuple[str, ...]:
        return ('C', 'B')

    @staticmethod
    def unit_scales() -> Tuple[float, ...]:
        return (100.0, 1.0)


AFFINE_KINDS = (Rotate, Translate, Scale, Shear)


@dataclass(frozen=True)
class TransformChain:
    """
    Ordered affine transforms plus an optional pixelwise stage.

    The parameter vector theta is the concatenation of every stage's
    parameters in application order, pixelwise parameters last.
    """
    affine: Tuple[Any, ...] = ()
    pixelwise: Optional[Pixelwise] = None

    def __post_init__(self):
        object.__setattr__(self, 'affine', tuple(self.affine))
        if not self.affine and self.pixelwise is None:
            raise ValueError("A transform chain needs at least one transform")
        for stage in self.affine:
            if not isinstance(stage, AFFINE_KINDS):
                raise ValueError(f"Not an affine transform: {stage!r}")

    @classmethod
    def identity(cls) -> 'TransformChain':
        return cls(affine=(Rotate(Interval(0.0, 0.0)),))

    @property
    def stages(self) -> List[Any]:
        stages = list(self.affine)
        if self.pixelwise is not None:
            stages.append(self.pixelwise)
        return stages

    def parameters(self) -> List[Interval]:
        return [param for stage in self.stages for param in stage.parameters()]

    def parameter_names(self) -> List[str]:
        return [name for stage in self.stages for name in stage.parameter_names()]

    def unit_scales(self) -> List[float]:
        """Multipliers from internal parameter units to grammar units (degrees, pixels, percent)."""
        return [scale for stage in self.stages for scale in stage.unit_scales()]

    def with_parameters(self, params: Sequence[Interval]) -> 'TransformChain':
        """Same chain structure with a replacement parameter vector."""
        params = list(params)
        if len(params) != len(self.parameters()):
            raise ValueError(
                f"Expected {len(self.parameters())} parameters, got {len(params)}"
            )
        affine = []
        offset = 0
        for stage in self.affine:
            count = len(stage.parameters())
            affine.append(stage.with_parameters(params[offset:offset + count]))
            offset += count
        pixelwise = None
        if self.pixelwise is not None:
            pixelwise = self.pixelwise.with_parameters(params[offset:offset + 2])
        return TransformChain(affine=tuple(affine), pixelwise=pixelwise)

    def at(self, theta: Sequence[float]) -> 'TransformChain':
        """Chain with degenerate parameters at a concrete theta."""
        return self.with_parameters([Interval.point(value) for value in theta])

    @property
    def is_degenerate(self) -> bool:
        return all(param.is_degenerate for param in self.parameters())

    def describe(self) -> str:
        """Render the chain in grammar units, e.g. 'Sc(-2,2) R(-5,5)'."""
        tokens = []
        for name, scale, param in zip(self.parameter_names(), self.unit_scales(), self.parameters()):
            tokens.append(f"{name}({param.lo * scale:g},{param.hi * scale:g})")
        return ' '.join(tokens)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'description': self.describe(),
            'parameters': [
                {'name': name, 'lo': param.lo, 'hi': param.hi}
                for name, param in zip(self.parameter_names(), self.parameters())
            ],
        }
