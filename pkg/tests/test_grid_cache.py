from concurrent.futures import ThreadPoolExecutor

import torch

from core.grid_cache import GridCache
from core.spec_parser import parse_transforms


def test_hits_and_misses():
    cache = GridCache(max_entries=4)
    chain = parse_transforms("R(-2,2)")
    first = cache.get_or_build(5, 5, chain)
    second = cache.get_or_build(5, 5, chain)
    assert first is second
    stats = cache.get_cache_stats()
    assert stats['cache_hits'] == 1
    assert stats['cache_misses'] == 1
    assert stats['total_entries'] == 1
    assert stats['cache_hit_rate'] == 50.0


def test_key_ignores_pixelwise_parameters():
    cache = GridCache()
    plain = cache.get_or_build(4, 4, parse_transforms("R(-2,2)"))
    shaded = cache.get_or_build(4, 4, parse_transforms("R(-2,2) C(5) B(0.01)"))
    assert plain is shaded


def test_key_distinguishes_size_and_parameters():
    cache = GridCache()
    chain = parse_transforms("R(-2,2)")
    cache.get_or_build(4, 4, chain)
    cache.get_or_build(4, 5, chain)
    cache.get_or_build(4, 4, parse_transforms("R(-2,2.5)"))
    assert cache.get_cache_stats()['total_entries'] == 3


def test_least_recently_used_entry_is_evicted():
    cache = GridCache(max_entries=2)
    a, b, c = (parse_transforms(spec) for spec in ("R(1)", "R(2)", "R(3)"))
    cache.get_or_build(4, 4, a)
    cache.get_or_build(4, 4, b)
    cache.get_or_build(4, 4, a)
    cache.get_or_build(4, 4, c)
    assert cache.get(4, 4, a) is not None
    assert cache.get(4, 4, b) is None


def test_disabled_cache_still_builds():
    cache = GridCache(max_entries=0)
    grid = cache.get_or_build(3, 3, parse_transforms("Sc(-2,2)"))
    assert grid.z.tolist() == [4, 2, 4, 2, 1, 2, 4, 2, 4]
    assert cache.get_cache_stats()['total_entries'] == 0


def test_concurrent_access_returns_identical_grids():
    cache = GridCache()
    chain = parse_transforms("R(-5,5)")
    with ThreadPoolExecutor(max_workers=4) as executor:
        grids = list(executor.map(lambda _: cache.get_or_build(6, 6, chain), range(16)))
    for grid in grids:
        assert torch.equal(grid.w_lo, grids[0].w_lo)
        assert torch.equal(grid.w_hi, grids[0].w_hi)


def test_clear_all_resets_statistics():
    cache = GridCache()
    cache.get_or_build(3, 3, parse_transforms("R(1)"))
    cache.clear_all()
    stats = cache.get_cache_stats()
    assert stats['total_entries'] == 0
    assert stats['cache_misses'] == 0
