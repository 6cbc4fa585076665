from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import torch

from models.transforms import TransformChain


@dataclass(frozen=True)
class SplitPlan:
    """Axis-aligned partition of a chain's parameter box into K = prod(counts) cells"""
    counts: Tuple[int, ...]
    cells: Tuple[TransformChain, ...]

    @property
    def K(self) -> int:
        return len(self.cells)

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def to_dict(self) -> Dict[str, Any]:
        return {'counts': list(self.counts), 'K': self.K}


@dataclass
class ImageVerdict:
    """Certification outcome for one image"""
    index: int
    label: int
    predicted: int
    certified: bool
    worst_margin: float
    failing_split: Optional[int] = None
    cells_checked: int = 0
    error: Optional[Dict] = None

    @property
    def correct(self) -> bool:
        return self.predicted == self.label

    def to_dict(self) -> Dict[str, Any]:
        return {
            'index': self.index,
            'label': self.label,
            'predicted': self.predicted,
            'certified': self.certified,
            'margin': self.worst_margin,
            'failing_split': self.failing_split,
            'cells_checked': self.cells_checked,
            'error': self.error,
        }


@dataclass
class CertVerdict:
    """Per-image verdicts and dataset aggregates of a certification run"""
    per_image: List[ImageVerdict] = field(default_factory=list)
    wall_time: float = 0.0
    cache_stats: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_images(self) -> int:
        return len(self.per_image)

    @property
    def clean_accuracy(self) -> float:
        if not self.per_image:
            return 0.0
        return sum(v.correct for v in self.per_image) / self.n_images

    @property
    def certified_fraction(self) -> float:
        if not self.per_image:
            return 0.0
        return sum(v.certified for v in self.per_image) / self.n_images

    @property
    def certified_given_correct(self) -> float:
        correct = [v for v in self.per_image if v.correct]
        if not correct:
            return 0.0
        return sum(v.certified for v in correct) / len(correct)

    @property
    def sec_per_image(self) -> float:
        if not self.per_image:
            return 0.0
        return self.wall_time / self.n_images

    @property
    def n_errors(self) -> int:
        return sum(v.error is not None for v in self.per_image)

    def aggregate(self) -> Dict[str, Any]:
        return {
            'n_images': self.n_images,
            'clean_acc': self.clean_accuracy,
            'certified': self.certified_fraction,
            'certified_given_correct': self.certified_given_correct,
            'sec_per_image': self.sec_per_image,
            'wall_time': self.wall_time,
            'errors': self.n_errors,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'per_image': [v.to_dict() for v in self.per_image],
            'aggregate': self.aggregate(),
            'grid_cache': self.cache_stats,
        }


@dataclass
class RegressionBound:
    """Hull of the network's interval outputs over every split cell"""
    lo: torch.Tensor
    hi: torch.Tensor

    def __post_init__(self):
        if torch.any(self.lo > self.hi):
            raise ValueError("RegressionBound requires lo <= hi")

    def hull(self, other: 'RegressionBound') -> 'RegressionBound':
        return RegressionBound(torch.minimum(self.lo, other.lo), torch.maximum(self.hi, other.hi))

    def contains(self, value: torch.Tensor, slack: float = 0.0) -> bool:
        return bool(torch.all(self.lo - slack <= value) and torch.all(value <= self.hi + slack))

    def to_dict(self) -> Dict[str, Any]:
        return {'lo': self.lo.tolist(), 'hi': self.hi.tolist()}


@dataclass
class RegressionReport:
    """Regression certification over a dataset"""
    bounds: List[RegressionBound]
    predictions: torch.Tensor
    targets: torch.Tensor
    wall_time: float = 0.0

    @property
    def mae(self) -> float:
        if not self.bounds:
            return 0.0
        return float((self.predictions - self.targets).abs().mean())

    @property
    def certified_mae(self) -> float:
        """The larger of the lower-bound and upper-bound mean absolute errors."""
        if not self.bounds:
            return 0.0
        lo = torch.stack([b.lo for b in self.bounds])
        hi = torch.stack([b.hi for b in self.bounds])
        return max(float((lo - self.targets).abs().mean()), float((hi - self.targets).abs().mean()))

    def aggregate(self) -> Dict[str, Any]:
        n = len(self.bounds)
        return {
            'n_images': n,
            'mae': self.mae,
            'certified_mae': self.certified_mae,
            'sec_per_image': self.wall_time / n if n else 0.0,
            'wall_time': self.wall_time,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'per_image': [
                {'index': i, 'target': self.targets[i].tolist(), 'predicted': self.predictions[i].tolist(),
                 **bound.to_dict()}
                for i, bound in enumerate(self.bounds)
            ],
            'aggregate': self.aggregate(),
        }


@dataclass
class AttackResult:
    """Outcome of a random search over concrete transform parameters"""
    found: bool
    samples: int
    theta: Optional[List[float]] = None
    min_margin: float = float('inf')

    def to_dict(self) -> Dict[str, Any]:
        return {'found': self.found, 'samples': self.samples, 'theta': self.theta, 'min_margin': self.min_margin}
