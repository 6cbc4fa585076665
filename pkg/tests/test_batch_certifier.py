import pytest
import torch

import core.batch_certifier as batch_module
from core.batch_certifier import BatchCertifierBuilder, certify_dataset
from core.certifier import certify_classification, split_params
from core.grid_cache import GridCache
from core.spec_parser import parse_transforms
from models.dataset import Dataset
from models.grid import PaddingStrategy
from utils.error_handler import ShapeMismatchError


def _relabeled(net, dataset):
    """Same images labelled with the network's own predictions."""
    predicted = net.forward_concrete(dataset.images).argmax(dim=1)
    return Dataset(images=dataset.images, labels=predicted, n_classes=3)


@pytest.fixture
def chain():
    return parse_transforms("R(-4,4) Sc(-1,1)")


def test_worker_count_does_not_change_verdicts(small_net, small_dataset, chain):
    plan = split_params(chain, [3, 2])
    serial = certify_dataset(small_net, small_dataset, chain, plan, workers=1, batch_size=5)
    parallel = certify_dataset(small_net, small_dataset, chain, plan, workers=4, batch_size=5)
    assert [v.to_dict() for v in serial.per_image] == [v.to_dict() for v in parallel.per_image]


def test_batch_verdicts_match_single_image_certification(small_net, small_dataset, chain):
    dataset = _relabeled(small_net, small_dataset)
    plan = split_params(chain, [2, 2])
    verdict = certify_dataset(small_net, dataset, chain, plan, workers=2, batch_size=7)
    for image in verdict.per_image:
        single = certify_classification(small_net, dataset.images[image.index], image.label, chain, plan)
        assert image.certified == single.certified
        assert image.failing_split == single.failing_split
        assert image.worst_margin == pytest.approx(single.worst_margin, abs=1e-9)


def test_aggregate_fields(small_net, small_dataset, chain):
    verdict = certify_dataset(small_net, small_dataset, chain, workers=1, batch_size=8)
    aggregate = verdict.aggregate()
    assert set(aggregate) == {'n_images', 'clean_acc', 'certified', 'certified_given_correct',
                              'sec_per_image', 'wall_time', 'errors'}
    assert aggregate['n_images'] == len(small_dataset)
    assert 0.0 <= aggregate['certified'] <= aggregate['clean_acc'] <= 1.0
    assert aggregate['errors'] == 0
    assert 'grid_cache' in verdict.to_dict()


def test_misclassified_images_fail_at_split_zero(small_net, small_dataset, chain):
    verdict = certify_dataset(small_net, small_dataset, chain, workers=1, batch_size=8)
    wrong = [v for v in verdict.per_image if not v.correct]
    for image in wrong:
        assert not image.certified
        assert image.failing_split == 0
        assert image.cells_checked == 0
        assert image.worst_margin <= 0


def test_failing_image_is_recorded_and_others_continue(small_net, small_dataset, chain, monkeypatch):
    dataset = _relabeled(small_net, small_dataset)
    sentinel = dataset.images[5]
    real = batch_module.cell_margins

    def flaky(net, X, y, cell, cache=None, padding=PaddingStrategy.ZERO):
        if any(torch.equal(row, sentinel) for row in X):
            raise RuntimeError("corrupt image")
        return real(net, X, y, cell, cache, padding)

    monkeypatch.setattr(batch_module, "cell_margins", flaky)
    verdict = certify_dataset(small_net, dataset, chain, workers=2, batch_size=4)
    assert verdict.per_image[5].error is not None
    assert verdict.per_image[5].error['details']['context'] == {'index': 5, 'cell': 0}
    assert not verdict.per_image[5].certified
    assert verdict.n_errors == 1
    others = [v for v in verdict.per_image if v.index != 5]
    assert all(v.error is None and v.cells_checked == 1 for v in others)


def test_replicate_padding_runs(small_net, small_dataset):
    chain = parse_transforms("Tu(-1,1)")
    verdict = certify_dataset(small_net, small_dataset, chain, workers=1, batch_size=6,
                              padding=PaddingStrategy.REPLICATE)
    assert verdict.n_images == len(small_dataset)
    assert verdict.n_errors == 0


def test_builder_and_grid_sharing(small_net, small_dataset, chain):
    cache = GridCache()
    progress = []
    certifier = (BatchCertifierBuilder()
                 .with_workers(3)
                 .with_batch_size(4)
                 .with_early_exit(False)
                 .with_cache(cache)
                 .with_progress_callback(lambda done, total: progress.append((done, total)))
                 .build())
    plan = split_params(chain, [2, 1])
    verdict = certifier.certify_dataset(small_net, _relabeled(small_net, small_dataset), chain, plan)
    assert progress == [(1, 2), (2, 2)]
    assert all(v.cells_checked == 2 for v in verdict.per_image)
    stats = certifier.get_batch_stats()
    assert stats['cells_done'] == 2
    # one grid per cell no matter how many batches used it
    assert stats['cache_misses'] == 2


def test_cancel_stops_after_the_current_cell(small_net, small_dataset, chain):
    certifier = BatchCertifierBuilder().with_workers(1).with_batch_size(8).build()
    certifier.progress_callback = lambda done, total: certifier.cancel()
    verdict = certifier.certify_dataset(small_net, _relabeled(small_net, small_dataset), chain,
                                        split_params(chain, [2, 2]))
    assert certifier.get_batch_stats()['cancelled']
    assert certifier.get_batch_stats()['cells_done'] == 1
    assert not any(v.certified for v in verdict.per_image)


def test_empty_dataset_gives_zero_counts(small_net, chain):
    empty = Dataset(images=torch.zeros(0, 1, 6, 6, dtype=torch.float64),
                    labels=torch.zeros(0, dtype=torch.int64), n_classes=3)
    verdict = certify_dataset(small_net, empty, chain, split_params(chain, [2, 2]), workers=2)
    aggregate = verdict.aggregate()
    assert verdict.per_image == []
    assert aggregate['n_images'] == 0
    assert aggregate['certified'] == 0.0
    assert aggregate['clean_acc'] == 0.0


@pytest.mark.parametrize("images,labels", [
    (torch.zeros(4, 1, 6, 6, dtype=torch.float64), torch.tensor([0, 1, 9, 2])),
    (torch.zeros(4, 1, 5, 5, dtype=torch.float64), torch.tensor([0, 1, 2, 2])),
])
def test_dataset_that_does_not_fit_the_network_is_rejected(small_net, chain, images, labels):
    dataset = Dataset(images=images, labels=labels)
    with pytest.raises(ShapeMismatchError):
        certify_dataset(small_net, dataset, chain, workers=1)
