import logging
import time
from concurrent.futures import ThreadPoolExecutor
from threading import Lock
from typing import Any, Callable, Dict, List, Optional

import torch

from config.runtime import default_workers
from config.settings import CERT_BATCH_SIZE
from core.certifier import cell_margins, check_dataset_fits, logit_margins, split_params
from core.grid_cache import GridCache
from core.network import Network
from models.dataset import Dataset
from models.grid import PaddingStrategy
from models.transforms import TransformChain
from models.verdict import CertVerdict, ImageVerdict, SplitPlan
from utils.error_handler import error_handler

logger = logging.getLogger(__name__)


class BatchCertifier:
    """
    Certifies a dataset with split cells as the outer loop and image batches
    as parallel work items, so every cell's grid is built once and shared.

    Verdicts do not depend on the worker count: each image's margins are
    computed independently and merged by image index.
    """

    def __init__(self, max_workers: Optional[int] = None,
                 batch_size: int = CERT_BATCH_SIZE,
                 early_exit: bool = True,
                 cache: Optional[GridCache] = None,
                 progress_callback: Optional[Callable] = None,
                 padding: PaddingStrategy = PaddingStrategy.ZERO):
        self.max_workers = max_workers or default_workers()
        self.batch_size = batch_size
        self.early_exit = early_exit
        self.cache = cache if cache is not None else GridCache()
        self.progress_callback = progress_callback
        self.padding = PaddingStrategy(padding)
        self.logger = logging.getLogger(__name__)

        # Thread-safe counters
        self._cells_done = 0
        self._batches_done = 0
        self._lock = Lock()
        self._cancelled = False

    def certify_dataset(self, net: Network, dataset: Dataset, chain: TransformChain,
                        plan: Optional[SplitPlan] = None) -> CertVerdict:
        """
        Certify every image of a classification dataset.

        Args:
            net: classifier
            dataset: images and labels
            chain: full transform parameter range
            plan: split plan over chain (single cell when omitted)

        Returns:
            CertVerdict with per-image verdicts and aggregates
        """
        check_dataset_fits(net, dataset)
        plan = plan or split_params(chain, [1])
        start_time = time.time()
        n = len(dataset)
        with self._lock:
            self._cells_done = 0
            self._batches_done = 0
            self._cancelled = False

        self.logger.info(f"Certifying {n} images over {plan.K} cells "
                         f"({self.max_workers} workers, batch {self.batch_size})")

        images = dataset.images
        labels = dataset.labels.to(torch.int64)
        predicted = torch.zeros(n, dtype=torch.int64)
        clean_margin = torch.zeros(n, dtype=torch.float64)
        with torch.no_grad():
            for begin in range(0, n, self.batch_size):
                logits = net.forward_concrete(images[begin:begin + self.batch_size])
                predicted[begin:begin + self.batch_size] = logits.argmax(dim=1)
                clean_margin[begin:begin + self.batch_size] = logit_margins(
                    logits, labels[begin:begin + self.batch_size]).to(torch.float64)

        active = clean_margin > 0
        worst = torch.full((n,), float('inf'), dtype=torch.float64)
        failing = torch.full((n,), -1, dtype=torch.int64)
        checked = torch.zeros(n, dtype=torch.int64)
        errors: Dict[int, Dict] = {}

        for k, cell in enumerate(plan.cells):
            if self._cancelled:
                self.logger.warning(f"Certification cancelled after {k} cells")
                break
            pending = active.nonzero(as_tuple=True)[0]
            if pending.numel() == 0:
                self.logger.debug(f"No images left to check at cell {k}")
                break

            if cell.affine and self.padding == PaddingStrategy.ZERO:
                self.cache.get_or_build(images.shape[-2], images.shape[-1], cell)
            chunks = [pending[i:i + self.batch_size] for i in range(0, pending.numel(), self.batch_size)]
            results = self._process_cell(net, images, labels, cell, k, chunks, errors)

            for chunk, margins in zip(chunks, results):
                if margins is None:
                    continue
                ok = ~torch.isnan(margins)
                idx = chunk[ok]
                margins = margins[ok]
                worst[idx] = torch.minimum(worst[idx], margins)
                checked[idx] += 1
                newly_failed = idx[(margins <= 0) & (failing[idx] < 0)]
                failing[newly_failed] = k
                if self.early_exit:
                    active[newly_failed] = False
            for index in errors:
                active[index] = False

            with self._lock:
                self._cells_done += 1
            if self.progress_callback:
                try:
                    self.progress_callback(k + 1, plan.K)
                except Exception as callback_error:
                    self.logger.warning(f"Progress callback error: {callback_error}")

        verdict = CertVerdict(wall_time=time.time() - start_time, cache_stats=self.cache.get_cache_stats())
        for i in range(n):
            correct = bool(clean_margin[i] > 0)
            error = errors.get(i)
            verdict.per_image.append(ImageVerdict(
                index=i,
                label=int(labels[i]),
                predicted=int(predicted[i]),
                certified=correct and error is None and int(failing[i]) < 0 and not self._cancelled,
                worst_margin=float(worst[i]) if correct else float(clean_margin[i]),
                failing_split=(int(failing[i]) if int(failing[i]) >= 0 else None) if correct else 0,
                cells_checked=int(checked[i]),
                error=error,
            ))

        aggregate = verdict.aggregate()
        self.logger.info(f"Certification completed in {verdict.wall_time:.2f}s: "
                         f"clean {aggregate['clean_acc']:.1%}, certified {aggregate['certified']:.1%}")
        return verdict

    def _process_cell(self, net, images, labels, cell, k, chunks, errors) -> List[Optional[torch.Tensor]]:
        """Run every chunk of one cell through the pool; results come back in chunk order."""
        if self.max_workers == 1 or len(chunks) == 1:
            return [self._process_chunk(net, images, labels, cell, k, chunk, errors) for chunk in chunks]
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(self._process_chunk, net, images, labels, cell, k, chunk, errors)
                       for chunk in chunks]
            return [future.result() for future in futures]

    def _process_chunk(self, net, images, labels, cell, k, chunk, errors) -> Optional[torch.Tensor]:
        """Margins of one image batch; on failure, retry image by image and record the failures."""
        try:
            with torch.no_grad():
                margins = cell_margins(net, images[chunk], labels[chunk], cell, self.cache,
                                       self.padding)
        except Exception as e:
            self.logger.warning(f"Batch failed at cell {k} ({e}); retrying {chunk.numel()} images individually")
            margins = torch.full((chunk.numel(),), float('nan'), dtype=torch.float64)
            for j, index in enumerate(chunk.tolist()):
                try:
                    with torch.no_grad():
                        margins[j] = cell_margins(net, images[index:index + 1], labels[index:index + 1],
                                                  cell, self.cache, self.padding)[0]
                except Exception as image_error:
                    info = error_handler.create_error_info(image_error, {'index': index, 'cell': k})
                    self.logger.warning(f"Image {index} failed at cell {k}: {image_error}")
                    with self._lock:
                        errors[index] = info.to_dict()
        with self._lock:
            self._batches_done += 1
        return margins.to(torch.float64)

    def cancel(self) -> None:
        """Cancel the current run after the cell in progress"""
        with self._lock:
            self._cancelled = True
        self.logger.info("Certification cancellation requested")

    def get_batch_stats(self) -> Dict[str, Any]:
        """Get current run statistics"""
        with self._lock:
            return {
                'cells_done': self._cells_done,
                'batches_done': self._batches_done,
                'cancelled': self._cancelled,
                **self.cache.get_cache_stats(),
            }


class BatchCertifierBuilder:
    """Builder pattern for creating BatchCertifier with different configurations"""

    def __init__(self):
        self.max_workers = None
        self.batch_size = CERT_BATCH_SIZE
        self.early_exit = True
        self.cache = None
        self.progress_callback = None
        self.padding = PaddingStrategy.ZERO

    def with_workers(self, max_workers: int) -> 'BatchCertifierBuilder':
        self.max_workers = max_workers
        return self

    def with_batch_size(self, batch_size: int) -> 'BatchCertifierBuilder':
        self.batch_size = batch_size
        return self

    def with_early_exit(self, early_exit: bool) -> 'BatchCertifierBuilder':
        self.early_exit = early_exit
        return self

    def with_cache(self, cache: GridCache) -> 'BatchCertifierBuilder':
        self.cache = cache
        return self

    def with_padding(self, padding: PaddingStrategy) -> 'BatchCertifierBuilder':
        self.padding = PaddingStrategy(padding)
        return self

    def with_progress_callback(self, callback: Callable) -> 'BatchCertifierBuilder':
        """Set progress callback function"""
        self.progress_callback = callback
        return self

    def build(self) -> BatchCertifier:
        """Build the BatchCertifier instance"""
        return BatchCertifier(
            max_workers=self.max_workers,
            batch_size=self.batch_size,
            early_exit=self.early_exit,
            cache=self.cache,
            progress_callback=self.progress_callback,
            padding=self.padding,
        )


def certify_dataset(net: Network, dataset: Dataset, chain: TransformChain,
                    plan: Optional[SplitPlan] = None, workers: Optional[int] = None,
                    batch_size: int = CERT_BATCH_SIZE, early_exit: bool = True,
                    cache: Optional[GridCache] = None,
                    padding: PaddingStrategy = PaddingStrategy.ZERO) -> CertVerdict:
    certifier = (BatchCertifierBuilder()
                 .with_workers(workers)
                 .with_batch_size(batch_size)
                 .with_early_exit(early_exit)
                 .with_cache(cache or GridCache())
                 .with_padding(padding)
                 .build())
    return certifier.certify_dataset(net, dataset, chain, plan)
