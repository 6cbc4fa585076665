import pytest
import torch
import torch.nn.functional as F
from pydantic import ValidationError

import core.trainer as trainer
from config.settings import TrainConfig
from core.certifier import split_params
from core.idx_reader import make_synthetic_dataset, make_synthetic_regression
from core.network import GradientTape, Network
from core.spec_parser import parse_transforms
from core.trainer import fit, loss_ci, loss_ct, loss_r, make_rng, ramp, sample_local_ball, schedules
from models.interval import Interval
from utils.error_handler import TrainingDivergenceError

from conftest import SMALL_ARCH

REGRESSION_ARCH = SMALL_ARCH[:-1] + [{'kind': 'dense', 'units': 1}]


def _batch(dataset, size=6):
    return dataset.images[:size], dataset.labels[:size].to(torch.int64)


def _config(chain, **overrides):
    values = dict(epochs=2, batch_size=8, warmup_epochs=0, rampup_epochs=1, kappa_final=0.5,
                  nu_final=[1.0] * len(chain.parameters()), seed=11, augmentation=chain)
    values.update(overrides)
    return TrainConfig(**values)


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(3, 1, 2).uniform(size=5)
    b = make_rng(3, 1, 2).uniform(size=5)
    assert (a == b).all()
    assert not (make_rng(3, 1, 3).uniform(size=5) == a).all()
    assert not (make_rng(3, 2, 2).uniform(size=5) == a).all()


def test_local_ball_sampling():
    chain = parse_transforms("R(-10,10) Sc(0,0)")
    theta_a, ball_a = sample_local_ball(chain, [0.5, 0.0], make_rng(0, 0, 1))
    theta_b, ball_b = sample_local_ball(chain, [2.0, 0.0], make_rng(0, 0, 1))
    # theta does not depend on the ball radius
    assert theta_a == theta_b
    assert -10 <= theta_a[0] <= 10
    assert theta_a[1] == 0.0
    assert ball_a[0] == Interval(theta_a[0] - 0.5, theta_a[0] + 0.5)
    assert ball_b[1] == Interval(0.0, 0.0)

    with pytest.raises(ValueError):
        sample_local_ball(chain, [1.0], make_rng(0))
    with pytest.raises(ValueError):
        sample_local_ball(chain, [-1.0, 0.0], make_rng(0))


def test_clean_weight_one_ignores_the_ball(small_net, small_dataset):
    chain = parse_transforms("R(-5,5)")
    x, y = _batch(small_dataset)
    theta = [1.5]
    narrow = loss_ct(small_net, x, y, chain, theta, [Interval(1.4, 1.6)], kappa=1.0)
    wide = loss_ct(small_net, x, y, chain, theta, [Interval(-3.0, 6.0)], kappa=1.0)
    assert narrow.item() == wide.item()
    assert narrow.item() >= 0


def test_degenerate_ball_robust_term_equals_clean_term(small_net, small_dataset):
    chain = parse_transforms("R(-5,5)")
    x, y = _batch(small_dataset)
    clean = loss_ct(small_net, x, y, chain, [2.0], [Interval(2.0, 2.0)], kappa=1.0)
    robust = loss_ct(small_net, x, y, chain, [2.0], [Interval(2.0, 2.0)], kappa=0.0)
    assert robust.item() == pytest.approx(clean.item(), abs=1e-9)


def test_robust_term_upper_bounds_the_clean_term(small_net, small_dataset):
    chain = parse_transforms("R(-5,5) Sc(-1,1)")
    x, y = _batch(small_dataset)
    theta = [0.7, 0.003]
    ball = [Interval(-0.3, 1.7), Interval(-0.002, 0.008)]
    clean = loss_ct(small_net, x, y, chain, theta, ball, kappa=1.0)
    robust = loss_ct(small_net, x, y, chain, theta, ball, kappa=0.0)
    assert robust.item() >= clean.item() - 1e-9
    mixed = loss_ct(small_net, x, y, chain, theta, ball, kappa=0.25)
    assert mixed.item() == pytest.approx(0.25 * clean.item() + 0.75 * robust.item(), abs=1e-9)


def test_robust_loss_gradient_matches_finite_differences(small_dataset):
    net = Network.from_descriptors(SMALL_ARCH, (1, 6, 6), seed=21)
    chain = parse_transforms("R(-5,5)")
    x, y = _batch(small_dataset, 4)
    theta, ball = [1.0], [Interval(0.0, 2.0)]

    tape = GradientTape.for_network(net)
    loss_ct(net, x, y, chain, theta, ball, kappa=0.5, tape=tape)
    grads = net.backward(tape)

    dense = net.layers[6]
    h = 1e-6
    for index in [(0, 0), (1, 4), (2, 7)]:
        with torch.no_grad():
            original = dense.weight[index].item()
            dense.weight[index] = original + h
            up = loss_ct(net, x, y, chain, theta, ball, kappa=0.5).item()
            dense.weight[index] = original - h
            down = loss_ct(net, x, y, chain, theta, ball, kappa=0.5).item()
            dense.weight[index] = original
        assert grads['layers.6.weight'][index].item() == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-8)


def test_regression_loss():
    dataset = make_synthetic_regression(6, shape=(1, 6, 6), seed=4)
    net = Network.from_descriptors(REGRESSION_ARCH, (1, 6, 6), seed=2, task='regression')
    chain = parse_transforms("R(-3,3)")
    x, y = dataset.images, dataset.labels
    clean = loss_r(net, x, y, chain, [0.5], [Interval(0.5, 0.5)], kappa=1.0)
    expected = F.mse_loss(net.forward_concrete(trainer._perturb(x, chain.at([0.5])).lo), y.reshape(6, -1))
    assert clean.item() == pytest.approx(expected.item(), abs=1e-12)
    robust = loss_r(net, x, y, chain, [0.5], [Interval(-1.0, 2.0)], kappa=0.0)
    assert robust.item() >= 0


def test_ideal_loss_on_identity_cell_is_clean_loss(small_net, small_dataset):
    x, y = _batch(small_dataset)
    plan = split_params(parse_transforms("R(0,0)"), [1])
    clean = loss_ci(small_net, x, y, plan, kappa=1.0)
    robust = loss_ci(small_net, x, y, plan, kappa=0.0)
    assert robust.item() == pytest.approx(clean.item(), abs=1e-9)
    wider = loss_ci(small_net, x, y, split_params(parse_transforms("R(-8,8)"), [2]), kappa=0.0)
    assert wider.item() >= clean.item() - 1e-9


def test_schedules():
    cfg = TrainConfig(epochs=10, warmup_epochs=2, rampup_epochs=4, kappa_final=0.5, nu_final=[1.0, 0.02])
    assert schedules(0, cfg) == (1.0, [0.0, 0.0])
    assert schedules(2, cfg) == (1.0, [0.0, 0.0])
    kappa, nu = schedules(4, cfg)
    assert kappa == pytest.approx(1.0 - 0.5 * 2 / 7)
    assert nu == pytest.approx([0.5, 0.01])
    assert schedules(6, cfg)[1] == pytest.approx([1.0, 0.02])
    assert schedules(9, cfg)[0] == pytest.approx(0.5)

    kappas = [schedules(e, cfg)[0] for e in range(10)]
    radii = [schedules(e, cfg)[1][0] for e in range(10)]
    assert all(a >= b for a, b in zip(kappas, kappas[1:]))
    assert all(a <= b for a, b in zip(radii, radii[1:]))


def test_ramp_without_rampup_jumps_to_one():
    cfg = TrainConfig(epochs=4, warmup_epochs=1, nu_final=[])
    assert [ramp(e, cfg) for e in range(4)] == [0.0, 1.0, 1.0, 1.0]


def test_training_is_deterministic(small_dataset):
    chain = parse_transforms("R(-5,5)")
    cfg = _config(chain)
    first = Network.from_descriptors(SMALL_ARCH, (1, 6, 6), seed=1)
    second = Network.from_descriptors(SMALL_ARCH, (1, 6, 6), seed=1)
    seen = []
    a = fit(first, small_dataset, cfg, epoch_callback=seen.append)
    b = fit(second, small_dataset, cfg)
    for pa, pb in zip(first.parameters(), second.parameters()):
        assert torch.equal(pa, pb)
    assert [e.loss for e in a.log] == [e.loss for e in b.log]
    assert len(seen) == 2
    assert a.log[0].batches == 3
    assert 'augmentation' not in a.config


def test_zero_epochs_leave_the_network_unchanged(small_net, small_dataset):
    before = [p.detach().clone() for p in small_net.parameters()]
    result = fit(small_net, small_dataset, _config(parse_transforms("R(1)"), epochs=0, rampup_epochs=0))
    assert result.log == []
    for original, current in zip(before, small_net.parameters()):
        assert torch.equal(original, current)


def test_non_finite_loss_raises(small_net, small_dataset, monkeypatch):
    monkeypatch.setattr(trainer, "loss_ct", lambda *args, **kwargs: torch.tensor(float('nan')))
    with pytest.raises(TrainingDivergenceError):
        fit(small_net, small_dataset, _config(parse_transforms("R(1)")))


def test_augmentation_baseline_keeps_kappa_at_one(small_net, small_dataset):
    result = fit(small_net, small_dataset, _config(parse_transforms("R(3)"), method='augment'))
    assert all(entry.kappa == 1.0 for entry in result.log)


def test_ibp_augmentation_trains(small_net, small_dataset):
    cfg = _config(parse_transforms("R(3)"), method='ibp_augment', ibp_epsilon=0.05)
    result = fit(small_net, small_dataset, cfg)
    assert all(torch.isfinite(torch.tensor(entry.loss)) for entry in result.log)


def test_validation_metrics_are_logged(small_net, small_dataset):
    train, validation = small_dataset.subset(range(16)), small_dataset.subset(range(16, 24))
    result = fit(small_net, train, _config(parse_transforms("R(3)")), validation=validation)
    for entry in result.log:
        assert 0.0 <= entry.validation_robust_accuracy <= 1.0
        assert 0.0 <= entry.validation_accuracy <= 1.0


def test_regression_training_runs():
    dataset = make_synthetic_regression(12, shape=(1, 6, 6), seed=4)
    net = Network.from_descriptors(REGRESSION_ARCH, (1, 6, 6), seed=2, task='regression')
    result = fit(net, dataset, _config(parse_transforms("R(2)"), task='regression'))
    assert len(result.log) == 2
    assert result.log[-1].validation_accuracy is None


@pytest.mark.parametrize("overrides", [
    {'kappa_final': 1.5},
    {'nu_final': [-1.0]},
    {'method': 'adversarial'},
    {'task': 'segmentation'},
    {'warmup_epochs': 2, 'rampup_epochs': 1},
    {'nu_final': [1.0, 2.0]},
])
def test_invalid_training_configs(overrides):
    with pytest.raises(ValidationError):
        _config(parse_transforms("R(3)"), **overrides)


TWO_CONV_ARCH = [
    {'kind': 'normalize'},
    {'kind': 'conv2d', 'filters': 4, 'kernel': 3, 'stride': 1, 'padding': 1},
    {'kind': 'relu'},
    {'kind': 'conv2d', 'filters': 4, 'kernel': 4, 'stride': 2, 'padding': 1},
    {'kind': 'relu'},
    {'kind': 'flatten'},
    {'kind': 'dense', 'units': 10},
    {'kind': 'relu'},
]


def _two_conv_net(n_outputs, task='classification'):
    net = Network.from_descriptors(TWO_CONV_ARCH + [{'kind': 'dense', 'units': n_outputs}], (1, 8, 8),
                                   seed=13, task=task)
    net.set_input_statistics([0.4], [0.3])
    return net


def _assert_gradients_match_central_differences(net, loss_fn, rng, entries=3, h=1e-6):
    tape = GradientTape.for_network(net)
    loss_fn(tape)
    grads = net.backward(tape)
    checked = set()
    for name, param in net.named_parameters():
        flat = param.data.view(-1)
        for k in rng.choice(flat.numel(), size=min(entries, flat.numel()), replace=False):
            k = int(k)
            original = flat[k].item()
            with torch.no_grad():
                flat[k] = original + h
                up = loss_fn(None).item()
                flat[k] = original - h
                down = loss_fn(None).item()
                flat[k] = original
            numeric = (up - down) / (2 * h)
            assert grads[name].reshape(-1)[k].item() == pytest.approx(numeric, rel=1e-4, abs=1e-8), (name, k)
        checked.add(name)
    assert {'layers.1.weight', 'layers.1.bias', 'layers.3.weight', 'layers.3.bias',
            'layers.6.weight', 'layers.6.bias', 'layers.8.weight', 'layers.8.bias'} <= checked


def test_classification_loss_gradients_through_the_whole_pipeline(rng):
    net = _two_conv_net(3)
    dataset = make_synthetic_dataset(4, shape=(1, 8, 8), n_classes=3, seed=8)
    x, y = dataset.images, dataset.labels.to(torch.int64)
    chain = parse_transforms("R(-5,5) Sc(-2,2)")
    theta, ball = [1.0, 0.004], [Interval(0.0, 2.0), Interval(0.0, 0.01)]
    _assert_gradients_match_central_differences(
        net, lambda tape: loss_ct(net, x, y, chain, theta, ball, kappa=0.5, tape=tape), rng)


def test_regression_loss_gradients_through_the_whole_pipeline(rng):
    net = _two_conv_net(1, task='regression')
    dataset = make_synthetic_regression(4, shape=(1, 8, 8), seed=6)
    x, y = dataset.images, dataset.labels
    chain = parse_transforms("R(-5,5) Tu(-1,1)")
    theta, ball = [-2.0, 0.3], [Interval(-3.0, -1.0), Interval(0.0, 0.6)]
    _assert_gradients_match_central_differences(
        net, lambda tape: loss_r(net, x, y, chain, theta, ball, kappa=0.3, tape=tape), rng)
