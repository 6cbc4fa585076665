import hashlib
import json
import logging
from collections import OrderedDict
from threading import Lock
from typing import Any, Dict, Optional

from config.settings import GRID_CACHE_SIZE
from core.interp import make_interp_grid
from models.grid import SparseInterpGrid
from models.transforms import TransformChain

logger = logging.getLogger(__name__)


class GridCache:
    """
    Bounded in-memory cache of interpolation grids.

    Cache key is generated from the image size and the affine part of the
    transform chain; pixelwise parameters do not influence the grid.
    """

    def __init__(self, max_entries: Optional[int] = None):
        self.max_entries = GRID_CACHE_SIZE if max_entries is None else max_entries
        self._grids: "OrderedDict[str, SparseInterpGrid]" = OrderedDict()
        self._hits = 0
        self._misses = 0
        self._lock = Lock()

    def _generate_cache_key(self, height: int, width: int, chain: TransformChain) -> str:
        """Generate cache key from image size and exact affine parameters"""
        cache_input = {
            'height': height,
            'width': width,
            'stages': [
                {
                    'kind': type(stage).__name__,
                    'params': [[param.lo.hex(), param.hi.hex()] for param in stage.parameters()],
                }
                for stage in chain.affine
            ],
        }
        cache_string = json.dumps(cache_input, sort_keys=True)
        return hashlib.md5(cache_string.encode()).hexdigest()

    def get(self, height: int, width: int, chain: TransformChain) -> Optional[SparseInterpGrid]:
        cache_key = self._generate_cache_key(height, width, chain)
        with self._lock:
            grid = self._grids.get(cache_key)
            if grid is None:
                self._misses += 1
                return None
            self._hits += 1
            self._grids.move_to_end(cache_key)
            return grid

    def get_or_build(self, height: int, width: int, chain: TransformChain) -> SparseInterpGrid:
        """
        Return the cached grid for (height, width, chain), building it on a miss.

        Builds happen outside the lock; two threads missing on the same key
        build identical grids and the later one wins.
        """
        grid = self.get(height, width, chain)
        if grid is not None:
            return grid
        grid = make_interp_grid(height, width, TransformChain(affine=chain.affine))
        self.put(height, width, chain, grid)
        return grid

    def put(self, height: int, width: int, chain: TransformChain, grid: SparseInterpGrid) -> None:
        if self.max_entries <= 0:
            return
        cache_key = self._generate_cache_key(height, width, chain)
        with self._lock:
            self._grids[cache_key] = grid
            self._grids.move_to_end(cache_key)
            while len(self._grids) > self.max_entries:
                self._grids.popitem(last=False)

    def clear_all(self) -> None:
        """Clear all cache entries"""
        with self._lock:
            self._grids.clear()
            self._hits = 0
            self._misses = 0
        logger.info("All grid cache entries cleared")

    def get_cache_stats(self) -> Dict[str, Any]:
        """Get cache statistics"""
        with self._lock:
            total = self._hits + self._misses
            return {
                'total_entries': len(self._grids),
                'max_entries': self.max_entries,
                'cache_hits': self._hits,
                'cache_misses': self._misses,
                'cache_hit_rate': (self._hits / total * 100) if total else 0.0,
            }
