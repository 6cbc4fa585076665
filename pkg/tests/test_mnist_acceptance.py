"""
Desk-scale experiments on real MNIST. Run with MNIST_DIR set and `pytest -m slow`.
"""

import pytest

from config.settings import TrainConfig
from core.batch_certifier import certify_dataset
from core.certifier import split_params
from core.idx_reader import load_mnist_dir
from core.network import Network
from core.spec_parser import parse_nu, parse_splits, parse_transforms, resolve_split_counts
from core.trainer import fit
from core.tuning import tune_nu
from layers import load_architecture

pytestmark = pytest.mark.slow

ROTATION = "R(30)"


@pytest.mark.parametrize("nu,mean_max,mean_width", [
    (0.25, 0.234, 0.019),    # training radius
    (0.125, 0.124, 0.010),   # half of a 0.25 degree certification cell
])
def test_rotation_tuning_widths(mnist_dir, nu, mean_max, mean_width):
    dataset = load_mnist_dir(mnist_dir, 'train')
    chain = parse_transforms(ROTATION)
    report = tune_nu(dataset, chain, [nu], seed=0)
    assert report.mu_tune == pytest.approx(mean_max, abs=0.05)
    assert report.average_width == pytest.approx(mean_width, rel=0.2)
    assert report.overall_max >= report.mu_tune


def _train(dataset, method):
    architecture = load_architecture('mnist-small')
    chain = parse_transforms(ROTATION)
    cfg = TrainConfig(epochs=25, warmup_epochs=5, rampup_epochs=15, nu_final=parse_nu("0.25", chain),
                      method=method, seed=0, augmentation=chain)
    net = Network.from_descriptors(architecture['layers'], architecture['input_shape'], seed=0)
    return fit(net, dataset, cfg).network


def test_certified_training_beats_augmentation(mnist_dir):
    train = load_mnist_dir(mnist_dir, 'train', limit=10000)
    test = load_mnist_dir(mnist_dir, 'test', limit=500)
    chain = parse_transforms(ROTATION)
    plan = split_params(chain, resolve_split_counts(parse_splits("w0.25"), chain))

    cgt = certify_dataset(_train(train, 'cgt'), test, chain, plan).aggregate()
    assert cgt['clean_acc'] >= 0.97
    assert cgt['certified'] >= 0.60

    augment = certify_dataset(_train(train, 'augment'), test, chain, plan).aggregate()
    assert augment['certified'] <= 0.05
