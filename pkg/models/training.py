from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional


@dataclass
class TrainLogEntry:
    """Per-epoch training summary"""
    epoch: int
    kappa: float
    nu: List[float]
    lr: float
    loss: float
    batches: int
    seconds: float
    validation_accuracy: Optional[float] = None
    validation_robust_accuracy: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TuneReport:
    """
    Pixel interval widths of images perturbed by local balls of radius nu.

    For sample k, M_k holds each image's maximum pixel width. mu_tune is the
    mean over samples of mean(M_k); average_width replaces the per-image max
    by the per-image mean.
    """
    nu: List[float]
    thetas: List[List[float]]
    sample_mean_max: List[float]
    sample_max: List[float]
    sample_mean_width: List[float]
    seed: int
    n_images: int

    @property
    def samples(self) -> int:
        return len(self.thetas)

    @property
    def mu_tune(self) -> float:
        if not self.sample_mean_max:
            return 0.0
        return sum(self.sample_mean_max) / len(self.sample_mean_max)

    @property
    def overall_max(self) -> float:
        return max(self.sample_max, default=0.0)

    @property
    def average_width(self) -> float:
        if not self.sample_mean_width:
            return 0.0
        return sum(self.sample_mean_width) / len(self.sample_mean_width)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'nu': self.nu,
            'seed': self.seed,
            'n_images': self.n_images,
            'samples': self.samples,
            'thetas': self.thetas,
            'per_sample': [
                {'mean_max_width': mean_max, 'max_width': max_width, 'mean_width': mean_width}
                for mean_max, max_width, mean_width in zip(self.sample_mean_max, self.sample_max,
                                                           self.sample_mean_width)
            ],
            'aggregate': {
                'mu_tune': self.mu_tune,
                'overall_max': self.overall_max,
                'average_width': self.average_width,
            },
        }


@dataclass
class TrainingResult:
    """Trained network plus its epoch log"""
    network: Any
    log: List[TrainLogEntry] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
