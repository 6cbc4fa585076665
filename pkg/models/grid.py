"""
Sparse interval interpolation grids and padding plans.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Tuple

import torch

from models.interval import IntervalTensor
from utils.error_handler import ShapeMismatchError


class PaddingStrategy(Enum):
    """How pixels outside the source image are filled."""
    ZERO = "zero"
    REPLICATE = "replicate"


@dataclass(frozen=True)
class SparseInterpGrid:
    """
    Nonzero interval interpolation weights of every output pixel.

    Entries are sorted by output pixel (row-major) and then by source pixel
    (n, m) row-major. ``z[p]`` counts the entries of output pixel ``p``.
    """
    r: torch.Tensor
    c: torch.Tensor
    w_lo: torch.Tensor
    w_hi: torch.Tensor
    z: torch.Tensor
    height: int
    width: int
    pixel_index: torch.Tensor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nnz = self.r.numel()
        if not (self.c.numel() == self.w_lo.numel() == self.w_hi.numel() == nnz):
            raise ShapeMismatchError("Grid vectors r, c and w must have equal length")
        if self.z.numel() != self.height * self.width:
            raise ShapeMismatchError(
                f"z has {self.z.numel()} entries, expected {self.height * self.width}"
            )
        if int(self.z.sum()) != nnz:
            raise ShapeMismatchError(f"sum(z) = {int(self.z.sum())} but the grid holds {nnz} entries")
        pixels = torch.arange(self.height * self.width, dtype=torch.int64)
        object.__setattr__(self, 'pixel_index', torch.repeat_interleave(pixels, self.z))

    @property
    def nnz(self) -> int:
        return self.r.numel()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def weights(self) -> IntervalTensor:
        return IntervalTensor(self.w_lo, self.w_hi)

    @property
    def flat_source(self) -> torch.Tensor:
        return self.r * self.width + self.c

    @property
    def density(self) -> float:
        """Fraction of (output pixel, source pixel) pairs with a nonzero weight."""
        total = (self.height * self.width) ** 2
        return self.nnz / total

    def chunk(self, pixel: int) -> slice:
        start = int(self.z[:pixel].sum())
        return slice(start, start + int(self.z[pixel]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'height': self.height,
            'width': self.width,
            'nnz': self.nnz,
            'density': self.density,
        }


@dataclass(frozen=True)
class PaddingPlan:
    """Pixels of padding per side needed so inverse coordinates stay inside the padded image."""
    p: int
    strategy: PaddingStrategy
    original: Tuple[int, int]

    @property
    def padded_shape(self) -> Tuple[int, int]:
        return self.original[0] + 2 * self.p, self.original[1] + 2 * self.p
