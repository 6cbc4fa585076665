import time

import pytest
import torch

from core.interp import (
    interpolate,
    make_interp_grid,
    pad_crop_pipeline,
    plan_padding,
    reference_interpolate,
    transform_batch,
)
from core.spec_parser import parse_transforms
from models.grid import PaddingStrategy
from models.interval import Interval
from utils.error_handler import ShapeMismatchError

from conftest import random_chain_spec

# two-decimal displays of the nine output intervals of the 3x3 scaling example
GOLDEN_DISPLAY = [
    [(0.53, 0.57), (0.49, 0.51), (0.40, 0.44)],
    [(0.52, 0.54), (0.49, 0.49), (0.50, 0.52)],
    [(0.54, 0.58), (0.61, 0.63), (0.43, 0.47)],
]

FUZZ_SPECS = [
    "R(-10,10)",
    "R(3,40)",
    "Sc(-5,5)",
    "Sh(-4,4)",
    "Tu(-0.7,1.3) Tv(-0.4,0.2)",
    "Sc(-2,2) R(-5,5)",
    "R(-5,5) Sh(0,2) C(-3,3) B(-0.01,0.01)",
]


def test_golden_grid_counts_and_order(golden_chain):
    grid = make_interp_grid(3, 3, golden_chain)
    assert grid.z.tolist() == [4, 2, 4, 2, 1, 2, 4, 2, 4]
    assert grid.nnz == 25
    first = grid.chunk(0)
    assert grid.r[first].tolist() == [0, 0, 1, 1]
    assert grid.c[first].tolist() == [0, 1, 0, 1]
    center = grid.chunk(4)
    assert grid.r[center].tolist() == [1]
    assert grid.c[center].tolist() == [1]
    assert grid.w_lo[center].tolist() == [1.0]


def test_golden_output_intervals(golden_image, golden_chain):
    out = interpolate(golden_image, make_interp_grid(3, 3, golden_chain))
    for i in range(3):
        for j in range(3):
            lo, hi = out.lo[0, 0, i, j].item(), out.hi[0, 0, i, j].item()
            assert (round(lo, 2), round(hi, 2)) == GOLDEN_DISPLAY[i][j]


def test_golden_top_left_exact_value(golden_image, golden_chain):
    near = 1.0 - (1.0 / 0.98 - 1.0)   # tent weight lower bound of the own pixel
    far = 1.0 - 1.0 / 1.02             # tent weight upper bound of the neighbour
    expected_lo = 0.55 * near * near
    expected_hi = 0.55 + (0.50 + 0.53) * far + 0.49 * far * far
    out = interpolate(golden_image, make_interp_grid(3, 3, golden_chain))
    assert out.lo[0, 0, 0, 0].item() == pytest.approx(expected_lo, abs=1e-12)
    assert out.hi[0, 0, 0, 0].item() == pytest.approx(expected_hi, abs=1e-12)
    assert out.lo[0, 0, 1, 1].item() == pytest.approx(0.49)
    assert out.hi[0, 0, 1, 1].item() == pytest.approx(0.49)


def test_golden_matches_reference(golden_image, golden_chain):
    fast = transform_batch(golden_image, golden_chain)
    slow = reference_interpolate(golden_image[0], golden_chain)
    torch.testing.assert_close(fast.lo[0], slow.lo, atol=1e-9, rtol=0)
    torch.testing.assert_close(fast.hi[0], slow.hi, atol=1e-9, rtol=0)


@pytest.mark.parametrize("spec", FUZZ_SPECS)
@pytest.mark.parametrize("height,width", [(4, 5), (6, 6), (7, 3)])
def test_fast_path_matches_reference(spec, height, width, rng):
    chain = parse_transforms(spec)
    X = torch.from_numpy(rng.uniform(0, 1, size=(3, 2, height, width)))
    fast = transform_batch(X, chain)
    for n in range(X.shape[0]):
        slow = reference_interpolate(X[n], chain)
        torch.testing.assert_close(fast.lo[n], slow.lo, atol=1e-9, rtol=0)
        torch.testing.assert_close(fast.hi[n], slow.hi, atol=1e-9, rtol=0)


@pytest.mark.parametrize("spec", FUZZ_SPECS)
def test_interval_output_contains_concrete_transforms(spec, rng):
    chain = parse_transforms(spec)
    X = torch.from_numpy(rng.uniform(0, 1, size=(2, 1, 6, 7)))
    boxes = transform_batch(X, chain)
    for _ in range(30):
        theta = [rng.uniform(p.lo, p.hi) for p in chain.parameters()]
        concrete = transform_batch(X, chain.at(theta))
        assert torch.equal(concrete.lo, concrete.hi)
        assert boxes.contains(concrete.lo, slack=1e-9)


def test_degenerate_identity_reproduces_image(rng):
    X = torch.from_numpy(rng.uniform(0, 1, size=(2, 3, 5, 4)))
    out = transform_batch(X, parse_transforms("R(0,0)"))
    torch.testing.assert_close(out.lo, X, atol=1e-12, rtol=0)
    torch.testing.assert_close(out.hi, X, atol=1e-12, rtol=0)


def test_grid_reused_across_batch_sizes(rng):
    chain = parse_transforms("R(-2,2)")
    grid = make_interp_grid(8, 8, chain)
    X = torch.from_numpy(rng.uniform(0, 1, size=(5, 1, 8, 8)))
    batched = interpolate(X, grid)
    single = interpolate(X[2:3], grid)
    assert torch.equal(batched.lo[2:3], single.lo)
    assert torch.equal(batched.hi[2:3], single.hi)


def test_interpolate_rejects_mismatched_shapes():
    grid = make_interp_grid(4, 4, parse_transforms("R(1)"))
    with pytest.raises(ShapeMismatchError):
        interpolate(torch.zeros(1, 1, 5, 4), grid)
    with pytest.raises(ShapeMismatchError):
        interpolate(torch.zeros(1, 4, 4), grid)


def test_small_rotation_grid_is_sparse():
    grid = make_interp_grid(28, 28, parse_transforms("R(-0.125,0.125)"))
    assert grid.density < 0.02
    assert int(grid.z.min()) >= 1
    assert int(grid.z.max()) <= 9


def test_padding_plan_for_translation():
    plan = plan_padding(5, 5, parse_transforms("Tu(-2,2)"))
    assert plan.p == 2
    assert plan.padded_shape == (9, 9)
    assert plan_padding(5, 5, parse_transforms("C(5)")).p == 0


def test_zero_padding_matches_unpadded_interpolation(rng):
    chain = parse_transforms("R(-20,20) Tu(-1,1)")
    X = torch.from_numpy(rng.uniform(0, 1, size=(2, 1, 6, 6)))
    padded = pad_crop_pipeline(X, chain, PaddingStrategy.ZERO)
    direct = transform_batch(X, chain)
    torch.testing.assert_close(padded.lo, direct.lo, atol=1e-12, rtol=0)
    torch.testing.assert_close(padded.hi, direct.hi, atol=1e-12, rtol=0)


def test_replicate_padding_keeps_constant_images_constant():
    X = torch.full((1, 1, 5, 5), 0.7, dtype=torch.float64)
    chain = parse_transforms("Tu(1.5,1.5)")
    replicated = pad_crop_pipeline(X, chain, PaddingStrategy.REPLICATE)
    torch.testing.assert_close(replicated.lo, X, atol=1e-12, rtol=0)
    zero = pad_crop_pipeline(X, chain, "zero")
    assert zero.lo[0, 0, :, 0].max().item() < 0.7


def _random_images(rng, count=1):
    height, width = rng.integers(2, 17, size=2)
    channels = rng.integers(1, 3)
    return torch.from_numpy(rng.uniform(0, 1, size=(count, channels, height, width)))


@pytest.mark.slow
def test_fast_path_matches_reference_on_random_chains(rng):
    for _ in range(1000):
        chain = parse_transforms(random_chain_spec(rng))
        X = _random_images(rng)
        fast = transform_batch(X, chain)
        slow = reference_interpolate(X[0], chain)
        torch.testing.assert_close(fast.lo[0], slow.lo, atol=1e-9, rtol=0)
        torch.testing.assert_close(fast.hi[0], slow.hi, atol=1e-9, rtol=0)


@pytest.mark.slow
def test_interpolation_is_sound_on_random_chains(rng):
    for _ in range(200):
        chain = parse_transforms(random_chain_spec(rng))
        X = _random_images(rng)
        boxes = transform_batch(X, chain)
        for _ in range(50):
            theta = [rng.uniform(p.lo, p.hi) for p in chain.parameters()]
            assert boxes.contains(transform_batch(X, chain.at(theta)).lo, slack=1e-9)


@pytest.mark.slow
def test_widening_parameters_widens_the_output(rng):
    for _ in range(200):
        chain = parse_transforms(random_chain_spec(rng))
        X = _random_images(rng)
        inner = []
        for param in chain.parameters():
            lo, hi = sorted(rng.uniform(param.lo, param.hi, size=2))
            inner.append(Interval(lo, hi))
        wide = transform_batch(X, chain)
        narrow = transform_batch(X, chain.with_parameters(inner))
        assert wide.contains(narrow, slack=1e-9)


@pytest.mark.slow
def test_prebuilt_grid_amortizes_over_a_batch(rng):
    chain = parse_transforms("R(0,0.25)")
    X = torch.from_numpy(rng.uniform(0, 1, size=(256, 1, 28, 28)))
    grid = make_interp_grid(28, 28, chain)
    assert grid.density < 0.02

    batched = float('inf')
    for _ in range(3):
        start = time.perf_counter()
        interpolate(X, grid)
        batched = min(batched, time.perf_counter() - start)

    start = time.perf_counter()
    for n in range(X.shape[0]):
        reference_interpolate(X[n], chain)
    independent = time.perf_counter() - start
    assert independent >= 10 * batched
