"""
Interval arithmetic kernels for scalar intervals and interval tensors.
"""

import math
from typing import Callable, Tuple, Union

import torch

from models.interval import Interval
from utils.error_handler import IntervalDomainError

TensorLike = Union[torch.Tensor, float]

_MONOTONE_MAPS = {
    'relu': lambda x: max(0.0, x),
    'identity': lambda x: x,
}


def iv_binary(op: str, a: Interval, b: Interval) -> Interval:
    """
    Apply an arithmetic operation to two intervals.

    mul and div take the min/max over all endpoint combinations, which is the
    tightest enclosure.

    Args:
        op: one of 'add', 'sub', 'mul', 'div'
        a: left operand
        b: right operand

    Returns:
        Interval containing {x op y : x in a, y in b}
    """
    if op == 'add':
        return Interval(a.lo + b.lo, a.hi + b.hi)
    if op == 'sub':
        return Interval(a.lo - b.hi, a.hi - b.lo)
    if op == 'mul':
        products = (a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi)
        return Interval(min(products), max(products))
    if op == 'div':
        if b.lo <= 0.0 <= b.hi:
            raise IntervalDomainError(f"Division by an interval containing zero: {b}")
        quotients = (a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi)
        return Interval(min(quotients), max(quotients))
    raise ValueError(f"Unsupported interval operation: {op}")


def iv_abs(a: Interval) -> Interval:
    if a.lo >= 0.0:
        return a
    if a.hi <= 0.0:
        return Interval(-a.hi, -a.lo)
    return Interval(0.0, max(-a.lo, a.hi))


def iv_hat(a: Interval) -> Interval:
    """max(0, 1 - |x|), evaluated at the extrema of |x|."""
    magnitude = iv_abs(a)
    return Interval(max(0.0, 1.0 - magnitude.hi), max(0.0, 1.0 - magnitude.lo))


def iv_monotone(f: Union[str, Callable[[float], float]], a: Interval) -> Interval:
    """
    Image of an interval under a nondecreasing scalar map.

    `f` is a callable or one of the named maps 'relu', 'identity' and 'hat'.
    'hat' is the interpolation tent max(0, 1 - |x|); it is not monotone and is
    routed through the absolute value.
    """
    if f == 'hat':
        return iv_hat(a)
    if isinstance(f, str):
        if f not in _MONOTONE_MAPS:
            raise ValueError(f"Unknown monotone map: {f}")
        f = _MONOTONE_MAPS[f]
    return Interval(f(a.lo), f(a.hi))


def iv_trig(f: str, a: Interval) -> Interval:
    """
    Exact range of sin or cos over an interval given in radians.

    Endpoints are evaluated and interior extrema are included when a
    critical point (k*pi for cos, pi/2 + k*pi for sin) falls inside `a`.
    """
    if f == 'cos':
        func, offset = math.cos, 0.0
    elif f == 'sin':
        func, offset = math.sin, math.pi / 2
    else:
        raise ValueError(f"Unsupported trigonometric function: {f}")

    values = [func(a.lo), func(a.hi)]
    lo, hi = min(values), max(values)

    # critical point c_k = offset + k*pi; even k is a maximum (+1), odd k a minimum (-1)
    k_first = math.ceil((a.lo - offset) / math.pi)
    k_last = math.floor((a.hi - offset) / math.pi)
    for k in range(k_first, min(k_last, k_first + 2) + 1):
        if k % 2 == 0:
            hi = 1.0
        else:
            lo = -1.0
    return Interval(lo, hi)


def iv_clamp01(a: Interval) -> Interval:
    return Interval(min(1.0, max(0.0, a.lo)), min(1.0, max(0.0, a.hi)))


def tensor_binary(op: str, a_lo: TensorLike, a_hi: TensorLike,
                  b_lo: TensorLike, b_hi: TensorLike) -> Tuple[torch.Tensor, torch.Tensor]:
    """Elementwise counterpart of iv_binary over broadcastable endpoint tensors."""
    a_lo, a_hi, b_lo, b_hi = (torch.as_tensor(t, dtype=_common_dtype(a_lo, a_hi, b_lo, b_hi))
                              for t in (a_lo, a_hi, b_lo, b_hi))
    if op == 'add':
        return a_lo + b_lo, a_hi + b_hi
    if op == 'sub':
        return a_lo - b_hi, a_hi - b_lo
    if op == 'mul':
        products = torch.stack(torch.broadcast_tensors(a_lo * b_lo, a_lo * b_hi, a_hi * b_lo, a_hi * b_hi))
        return products.min(dim=0).values, products.max(dim=0).values
    if op == 'div':
        if torch.any((b_lo <= 0) & (b_hi >= 0)):
            raise IntervalDomainError("Division by an interval tensor containing zero")
        quotients = torch.stack(torch.broadcast_tensors(a_lo / b_lo, a_lo / b_hi, a_hi / b_lo, a_hi / b_hi))
        return quotients.min(dim=0).values, quotients.max(dim=0).values
    raise ValueError(f"Unsupported interval operation: {op}")


def tensor_abs(lo: torch.Tensor, hi: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    straddles = (lo < 0) & (hi > 0)
    abs_lo = torch.where(lo >= 0, lo, torch.where(hi <= 0, -hi, torch.zeros_like(lo)))
    abs_hi = torch.where(straddles, torch.maximum(-lo, hi), torch.maximum(lo.abs(), hi.abs()))
    return abs_lo, abs_hi


def tensor_hat(lo: torch.Tensor, hi: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    abs_lo, abs_hi = tensor_abs(lo, hi)
    return (1.0 - abs_hi).clamp(min=0.0), (1.0 - abs_lo).clamp(min=0.0)


def _common_dtype(*values: TensorLike) -> torch.dtype:
    for value in values:
        if isinstance(value, torch.Tensor) and value.is_floating_point():
            return value.dtype
    return torch.get_default_dtype()
