import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config.runtime import configure_torch  # noqa: E402
from config.settings import MNIST_DIR  # noqa: E402
from core.idx_reader import make_synthetic_dataset  # noqa: E402
from core.network import Network  # noqa: E402
from core.spec_parser import parse_transforms  # noqa: E402

configure_torch()

GOLDEN_PIXELS = [[0.55, 0.50, 0.42],
                 [0.53, 0.49, 0.51],
                 [0.56, 0.62, 0.45]]

SMALL_ARCH = [
    {'kind': 'normalize'},
    {'kind': 'conv2d', 'filters': 3, 'kernel': 3, 'stride': 1, 'padding': 0},
    {'kind': 'relu'},
    {'kind': 'flatten'},
    {'kind': 'dense', 'units': 8},
    {'kind': 'relu'},
    {'kind': 'dense', 'units': 3},
]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def golden_image():
    return torch.tensor(GOLDEN_PIXELS, dtype=torch.float64).reshape(1, 1, 3, 3)


@pytest.fixture
def golden_chain():
    return parse_transforms("Sc(-2,2)")


@pytest.fixture
def small_net():
    """3-class classifier on 1x6x6 images."""
    return Network.from_descriptors(SMALL_ARCH, (1, 6, 6), seed=7)


@pytest.fixture
def small_dataset():
    return make_synthetic_dataset(24, shape=(1, 6, 6), n_classes=3, seed=3)


@pytest.fixture
def mnist_dir():
    directory = MNIST_DIR
    if not directory or not Path(directory).exists():
        pytest.skip("MNIST_DIR is not set")
    return directory


# widest range per parameter used by the randomized chains, in grammar units
FUZZ_LIMITS = {'R': 5.0, 'Tu': 2.0, 'Tv': 2.0, 'Sc': 5.0, 'Sh': 5.0}


def random_chain_spec(rng) -> str:
    """A random transform chain over a random subset of R, Tu, Tv, Sc, Sh."""
    names = list(FUZZ_LIMITS)
    chosen = rng.permutation(names)[:rng.integers(1, len(names) + 1)]
    tokens = []
    for name in chosen:
        limit = FUZZ_LIMITS[name]
        lo, hi = sorted(rng.uniform(-limit, limit, size=2))
        tokens.append(f"{name}({lo:.6f},{hi:.6f})")
    return " ".join(tokens)
