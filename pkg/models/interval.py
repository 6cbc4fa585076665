"""
Closed real intervals and dense tensors of intervals.

Endpoints are plain round-to-nearest 64-bit floats; soundness holds up to
floating-point rounding.
"""

import math
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple, Union

import torch

from utils.error_handler import IntervalDomainError, ShapeMismatchError


@dataclass(frozen=True)
class Interval:
    """A closed interval [lo, hi] with finite endpoints."""
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise IntervalDomainError(f"Interval endpoints must be finite, got [{lo}, {hi}]")
        if lo > hi:
            raise IntervalDomainError(f"Interval lower bound exceeds upper bound: [{lo}, {hi}]")
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @classmethod
    def point(cls, value: float) -> 'Interval':
        return cls(value, value)

    @classmethod
    def symmetric(cls, radius: float) -> 'Interval':
        return cls(-abs(radius), abs(radius))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def is_degenerate(self) -> bool:
        return self.lo == self.hi

    def contains(self, value: Union[float, 'Interval'], slack: float = 0.0) -> bool:
        if isinstance(value, Interval):
            return self.lo - slack <= value.lo and value.hi <= self.hi + slack
        return self.lo - slack <= value <= self.hi + slack

    def hull(self, other: 'Interval') -> 'Interval':
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def intersect(self, other: 'Interval') -> 'Interval':
        return Interval(max(self.lo, other.lo), min(self.hi, other.hi))

    def to_list(self) -> List[float]:
        return [self.lo, self.hi]

    def __iter__(self) -> Iterator[float]:
        yield self.lo
        yield self.hi

    def __repr__(self) -> str:
        return f"[{self.lo:.6g}, {self.hi:.6g}]"

    def _binary(self, op: str, other, reflected: bool = False) -> 'Interval':
        from core.interval_ops import iv_binary

        other = other if isinstance(other, Interval) else Interval.point(other)
        return iv_binary(op, other, self) if reflected else iv_binary(op, self, other)

    def __add__(self, other):
        return self._binary('add', other)

    def __radd__(self, other):
        return self._binary('add', other, reflected=True)

    def __sub__(self, other):
        return self._binary('sub', other)

    def __rsub__(self, other):
        return self._binary('sub', other, reflected=True)

    def __mul__(self, other):
        return self._binary('mul', other)

    def __rmul__(self, other):
        return self._binary('mul', other, reflected=True)

    def __truediv__(self, other):
        return self._binary('div', other)

    def __rtruediv__(self, other):
        return self._binary('div', other, reflected=True)

    def __neg__(self) -> 'Interval':
        return Interval(-self.hi, -self.lo)

    def __abs__(self) -> 'Interval':
        from core.interval_ops import iv_abs

        return iv_abs(self)


Operand = Union['IntervalTensor', Interval, float, int, torch.Tensor]


def _endpoints(value: Operand) -> Tuple:
    if isinstance(value, IntervalTensor):
        return value.lo, value.hi
    if isinstance(value, Interval):
        return value.lo, value.hi
    return value, value


@dataclass(frozen=True)
class IntervalTensor:
    """Dense tensor of intervals: two same-shaped tensors with lo <= hi elementwise."""
    lo: torch.Tensor
    hi: torch.Tensor

    def __post_init__(self):
        if self.lo.shape != self.hi.shape:
            raise ShapeMismatchError(
                f"Interval tensor endpoints differ in shape: {tuple(self.lo.shape)} vs {tuple(self.hi.shape)}"
            )
        with torch.no_grad():
            if torch.isnan(self.lo).any() or torch.isnan(self.hi).any():
                raise IntervalDomainError("Interval tensor endpoints contain NaN")
            if torch.any(self.lo > self.hi):
                worst = (self.lo - self.hi).max().item()
                raise IntervalDomainError(f"Interval tensor has lo > hi (by up to {worst:.3g})")

    @classmethod
    def point(cls, value: torch.Tensor) -> 'IntervalTensor':
        return cls(value, value)

    @classmethod
    def from_center_radius(cls, center: torch.Tensor, radius: torch.Tensor) -> 'IntervalTensor':
        return cls(center - radius, center + radius)

    @property
    def shape(self) -> torch.Size:
        return self.lo.shape

    @property
    def dtype(self) -> torch.dtype:
        return self.lo.dtype

    @property
    def center(self) -> torch.Tensor:
        return (self.hi + self.lo) / 2

    @property
    def radius(self) -> torch.Tensor:
        return (self.hi - self.lo) / 2

    def width(self) -> torch.Tensor:
        return self.hi - self.lo

    def relu(self) -> 'IntervalTensor':
        return IntervalTensor(torch.relu(self.lo), torch.relu(self.hi))

    def clamp01(self) -> 'IntervalTensor':
        return IntervalTensor(self.lo.clamp(0.0, 1.0), self.hi.clamp(0.0, 1.0))

    def intersect(self, other: Operand) -> 'IntervalTensor':
        o_lo, o_hi = _endpoints(other)
        return IntervalTensor(torch.maximum(self.lo, torch.as_tensor(o_lo, dtype=self.dtype)),
                              torch.minimum(self.hi, torch.as_tensor(o_hi, dtype=self.dtype)))

    def hull(self, other: 'IntervalTensor') -> 'IntervalTensor':
        return IntervalTensor(torch.minimum(self.lo, other.lo), torch.maximum(self.hi, other.hi))

    def contains(self, value: Union[torch.Tensor, 'IntervalTensor'], slack: float = 0.0) -> bool:
        v_lo, v_hi = _endpoints(value)
        return bool(torch.all(self.lo - slack <= v_lo) and torch.all(v_hi <= self.hi + slack))

    def detach(self) -> 'IntervalTensor':
        return IntervalTensor(self.lo.detach(), self.hi.detach())

    def to(self, dtype: torch.dtype) -> 'IntervalTensor':
        return IntervalTensor(self.lo.to(dtype), self.hi.to(dtype))

    def reshape(self, *shape: int) -> 'IntervalTensor':
        return IntervalTensor(self.lo.reshape(*shape), self.hi.reshape(*shape))

    def flatten(self, start_dim: int = 0) -> 'IntervalTensor':
        return IntervalTensor(self.lo.flatten(start_dim), self.hi.flatten(start_dim))

    def __getitem__(self, index) -> 'IntervalTensor':
        return IntervalTensor(self.lo[index], self.hi[index])

    def __len__(self) -> int:
        return self.lo.shape[0]

    def item(self, *index: int) -> Interval:
        return Interval(self.lo[index].item(), self.hi[index].item())

    def to_intervals(self) -> List[Interval]:
        return [Interval(lo, hi) for lo, hi in zip(self.lo.flatten().tolist(), self.hi.flatten().tolist())]

    def _binary(self, op: str, other: Operand, reflected: bool = False) -> 'IntervalTensor':
        from core.interval_ops import tensor_binary

        a_lo, a_hi = self.lo, self.hi
        b_lo, b_hi = _endpoints(other)
        if reflected:
            lo, hi = tensor_binary(op, b_lo, b_hi, a_lo, a_hi)
        else:
            lo, hi = tensor_binary(op, a_lo, a_hi, b_lo, b_hi)
        return IntervalTensor(lo, hi)

    def __add__(self, other):
        return self._binary('add', other)

    def __radd__(self, other):
        return self._binary('add', other, reflected=True)

    def __sub__(self, other):
        return self._binary('sub', other)

    def __rsub__(self, other):
        return self._binary('sub', other, reflected=True)

    def __mul__(self, other):
        return self._binary('mul', other)

    def __rmul__(self, other):
        return self._binary('mul', other, reflected=True)

    def __truediv__(self, other):
        return self._binary('div', other)

    def __neg__(self) -> 'IntervalTensor':
        return IntervalTensor(-self.hi, -self.lo)

    def __abs__(self) -> 'IntervalTensor':
        from core.interval_ops import tensor_abs

        lo, hi = tensor_abs(self.lo, self.hi)
        return IntervalTensor(lo, hi)


def stack_intervals(intervals: Sequence[Interval]) -> IntervalTensor:
    """Pack scalar intervals into a 1-D interval tensor."""
    return IntervalTensor(torch.tensor([iv.lo for iv in intervals], dtype=torch.float64),
                          torch.tensor([iv.hi for iv in intervals], dtype=torch.float64))
