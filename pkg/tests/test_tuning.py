import pytest

from core.spec_parser import parse_transforms
from core.tuning import tune_nu


def test_degenerate_pixelwise_chain_has_zero_width(small_dataset):
    chain = parse_transforms("C(0,0) B(0,0)")
    report = tune_nu(small_dataset, chain, [0.0, 0.0], samples=3)
    assert report.mu_tune == 0.0
    assert report.overall_max == 0.0
    assert report.average_width == 0.0


def test_larger_radius_gives_wider_pixels(small_dataset):
    chain = parse_transforms("R(-10,10)")
    narrow = tune_nu(small_dataset, chain, [0.5], seed=4, samples=4)
    wide = tune_nu(small_dataset, chain, [2.0], seed=4, samples=4)
    assert narrow.thetas == wide.thetas
    for a, b in zip(narrow.sample_mean_max, wide.sample_mean_max):
        assert a <= b + 1e-12
    assert 0.0 < narrow.mu_tune <= wide.mu_tune


def test_summary_statistics_are_ordered(small_dataset):
    report = tune_nu(small_dataset, parse_transforms("R(-10,10) Sc(-2,2)"), [1.0, 0.005], samples=5)
    assert report.samples == 5
    assert report.n_images == len(small_dataset)
    assert report.average_width <= report.mu_tune <= report.overall_max
    aggregate = report.to_dict()['aggregate']
    assert aggregate == {'mu_tune': report.mu_tune, 'overall_max': report.overall_max,
                         'average_width': report.average_width}
    assert len(report.to_dict()['per_sample']) == 5


def test_batching_does_not_change_the_report(small_dataset):
    chain = parse_transforms("R(-6,6)")
    whole = tune_nu(small_dataset, chain, [1.0], samples=2)
    chunked = tune_nu(small_dataset, chain, [1.0], samples=2, batch_size=5)
    assert whole.sample_max == chunked.sample_max
    assert whole.sample_mean_max == pytest.approx(chunked.sample_mean_max, abs=1e-15)


def test_radius_must_be_smaller_than_the_range(small_dataset):
    with pytest.raises(ValueError):
        tune_nu(small_dataset, parse_transforms("R(-1,1)"), [2.0])
    with pytest.raises(ValueError):
        tune_nu(small_dataset, parse_transforms("R(-1,1)"), [0.5, 0.5])
