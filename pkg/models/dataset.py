from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch

# smallest std handed to a Normalize layer
MIN_STD = 1e-6


def compute_channel_stats(images: torch.Tensor) -> List[Tuple[float, float]]:
    """Per-channel (mean, std) over all images and pixels."""
    if images.shape[0] == 0:
        return [(0.0, 1.0)] * images.shape[1]
    per_channel = images.transpose(0, 1).reshape(images.shape[1], -1)
    means = per_channel.mean(dim=1)
    stds = per_channel.std(dim=1, correction=0)
    return [(float(m), float(s)) for m, s in zip(means, stds)]


@dataclass
class Dataset:
    """Images in [0, 1] with class labels or regression targets"""
    images: torch.Tensor
    labels: torch.Tensor
    task: str = 'classification'
    n_classes: Optional[int] = None
    channel_stats: List[Tuple[float, float]] = field(default_factory=list)
    name: str = ''

    def __post_init__(self):
        if not self.channel_stats:
            self.channel_stats = compute_channel_stats(self.images)
        if self.task == 'classification' and self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> 'Dataset':
        """Rows at indices; channel statistics are kept from the parent."""
        index = torch.as_tensor(list(indices), dtype=torch.int64)
        return Dataset(
            images=self.images[index],
            labels=self.labels[index],
            task=self.task,
            n_classes=self.n_classes,
            channel_stats=list(self.channel_stats),
            name=name or self.name,
        )

    def to(self, dtype: torch.dtype) -> 'Dataset':
        """Same dataset with images (and regression targets) cast to dtype."""
        labels = self.labels.to(dtype) if self.task == 'regression' else self.labels
        return Dataset(images=self.images.to(dtype), labels=labels, task=self.task, n_classes=self.n_classes,
                       channel_stats=list(self.channel_stats), name=self.name)

    def normalization(self) -> Tuple[List[float], List[float]]:
        """(mean, std) vectors for a Normalize layer."""
        return ([mean for mean, _ in self.channel_stats],
                [max(std, MIN_STD) for _, std in self.channel_stats])

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'size': len(self),
            'image_shape': list(self.image_shape),
            'task': self.task,
            'n_classes': self.n_classes,
            'channel_stats': [list(stat) for stat in self.channel_stats],
        }
