"""
Parameter splitting and the classification / regression certification judgments.
"""

import itertools
import logging
import time
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from core.grid_cache import GridCache
from core.interp import pad_crop_pipeline, transform_batch
from core.network import Network
from models.dataset import Dataset
from models.grid import PaddingStrategy
from models.interval import Interval, IntervalTensor
from models.transforms import TransformChain
from models.verdict import AttackResult, ImageVerdict, RegressionBound, RegressionReport, SplitPlan
from utils.error_handler import ShapeMismatchError

logger = logging.getLogger(__name__)

Labels = Union[int, Sequence[int], torch.Tensor]


def _subdivide(param: Interval, count: int) -> List[Interval]:
    if count == 1:
        return [param]
    edges = [param.lo + param.width * i / count for i in range(count + 1)]
    edges[0], edges[-1] = param.lo, param.hi
    return [Interval(edges[i], max(edges[i], edges[i + 1])) for i in range(count)]


def split_params(chain: TransformChain, counts: Sequence[int]) -> SplitPlan:
    """
    Uniform axis-aligned subdivision of the chain's parameter box.

    Args:
        chain: transform chain with interval parameters
        counts: per-parameter cell counts K_d (a single count applies to all)

    Returns:
        SplitPlan whose cells are the cross product of the per-parameter pieces,
        first parameter varying slowest
    """
    params = chain.parameters()
    counts = list(counts)
    if len(counts) == 1:
        counts = counts * len(params)
    if len(counts) != len(params):
        raise ValueError(f"Expected {len(params)} split counts, got {len(counts)}")
    if any(int(k) < 1 for k in counts):
        raise ValueError(f"Split counts must be at least 1, got {counts}")

    pieces = [_subdivide(param, int(k)) for param, k in zip(params, counts)]
    cells = tuple(chain.with_parameters(combo) for combo in itertools.product(*pieces))
    return SplitPlan(counts=tuple(int(k) for k in counts), cells=cells)


def _label_tensor(y: Labels, batch: int, n_outputs: int) -> torch.Tensor:
    labels = torch.as_tensor(y, dtype=torch.int64).reshape(-1)
    if labels.numel() == 1 and batch > 1:
        labels = labels.expand(batch)
    if labels.numel() != batch:
        raise ShapeMismatchError(f"Expected {batch} labels, got {labels.numel()}")
    if torch.any(labels < 0) or torch.any(labels >= n_outputs):
        raise ShapeMismatchError(f"Label out of range for {n_outputs} outputs: {labels.tolist()}")
    return labels


def check_dataset_fits(net: Network, dataset: Dataset) -> None:
    """
    Raise ShapeMismatchError unless the dataset's images and labels suit the network.

    Classification labels must lie in [0, n_outputs); regression targets must
    have n_outputs values per image.
    """
    if len(dataset) and tuple(dataset.image_shape) != tuple(net.input_shape):
        raise ShapeMismatchError(f"Dataset images are {list(dataset.image_shape)}, "
                                 f"network expects {list(net.input_shape)}")
    labels = dataset.labels
    if dataset.task == 'regression':
        if labels.numel() != len(dataset) * net.n_outputs:
            raise ShapeMismatchError(f"Expected {net.n_outputs} targets per image, "
                                     f"got {labels.numel()} for {len(dataset)} images")
    elif len(dataset) and (int(labels.min()) < 0 or int(labels.max()) >= net.n_outputs):
        raise ShapeMismatchError(f"Dataset labels span [{int(labels.min())}, {int(labels.max())}], "
                                 f"network has {net.n_outputs} outputs")


def worst_case_logits(out: IntervalTensor, y: Labels) -> torch.Tensor:
    """
    Worst-case logit vector: lower bound at the true class, upper bounds elsewhere.

    Args:
        out: interval logits, shape (n_o,) or (N, n_o)
        y: class index or one per batch row

    Raises:
        ShapeMismatchError: if a label is outside [0, n_o)
    """
    single = out.lo.dim() == 1
    lo = out.lo.reshape(-1, out.lo.shape[-1])
    hi = out.hi.reshape(-1, out.hi.shape[-1])
    n_outputs = lo.shape[1]
    labels = _label_tensor(y, lo.shape[0], n_outputs)
    onehot = F.one_hot(labels, n_outputs).bool()
    worst = torch.where(onehot, lo, hi)
    return worst[0] if single else worst


def logit_margins(logits: torch.Tensor, y: Labels) -> torch.Tensor:
    """h_y - max_{j != y} h_j per row; positive iff y is the strict unique argmax."""
    logits = logits.reshape(-1, logits.shape[-1])
    labels = _label_tensor(y, logits.shape[0], logits.shape[1])
    onehot = F.one_hot(labels, logits.shape[1]).bool()
    true_logit = logits.gather(1, labels[:, None])[:, 0]
    others = logits.masked_fill(onehot, float('-inf')).max(dim=1).values
    return true_logit - others


def cell_margins(net: Network, X: torch.Tensor, y: Labels, cell: TransformChain,
                 cache: Optional[GridCache] = None,
                 padding: PaddingStrategy = PaddingStrategy.ZERO) -> torch.Tensor:
    """Worst-case margins of a batch of images over one split cell."""
    if padding == PaddingStrategy.REPLICATE and cell.affine:
        boxes = pad_crop_pipeline(X, cell, padding)
    else:
        grid = cache.get_or_build(X.shape[-2], X.shape[-1], cell) if cache is not None and cell.affine else None
        boxes = transform_batch(X, cell, grid)
    worst = worst_case_logits(net.forward_interval(boxes), y)
    return logit_margins(worst, y)


def certify_classification(net: Network, x: torch.Tensor, y: int, chain: TransformChain,
                           plan: Optional[SplitPlan] = None, early_exit: bool = True,
                           cache: Optional[GridCache] = None, index: int = 0,
                           padding: PaddingStrategy = PaddingStrategy.ZERO) -> ImageVerdict:
    """
    Certify one image against every cell of the split plan.

    Certified iff every cell's worst-case logits have the label as strict unique
    argmax. An image misclassified clean is uncertified with failing split 0.

    Args:
        net: classifier
        x: clean image, C x H x W, in [0, 1]
        y: label
        chain: full parameter range (used when plan is omitted)
        plan: split plan over chain
        early_exit: stop at the first failing cell
        padding: how out-of-image source pixels are filled

    Returns:
        ImageVerdict; worst_margin is the minimum over processed cells
    """
    plan = plan or split_params(chain, [1])
    with torch.no_grad():
        logits = net.forward_concrete(x.unsqueeze(0))
        predicted = int(logits.argmax(dim=1)[0])
        clean_margin = float(logit_margins(logits, y)[0])
        if clean_margin <= 0:
            return ImageVerdict(index=index, label=int(y), predicted=predicted, certified=False,
                                worst_margin=clean_margin, failing_split=0, cells_checked=0)

        worst = float('inf')
        failing = None
        checked = 0
        for k, cell in enumerate(plan.cells):
            margin = float(cell_margins(net, x.unsqueeze(0), y, cell, cache, padding)[0])
            checked += 1
            worst = min(worst, margin)
            if margin <= 0 and failing is None:
                failing = k
                if early_exit:
                    break

    return ImageVerdict(index=index, label=int(y), predicted=predicted, certified=failing is None,
                        worst_margin=worst, failing_split=failing, cells_checked=checked)


def certify_regression(net: Network, x: torch.Tensor, chain: TransformChain,
                       plan: Optional[SplitPlan] = None, cache: Optional[GridCache] = None) -> RegressionBound:
    """Smallest interval containing the network's interval outputs over every cell."""
    plan = plan or split_params(chain, [1])
    bound = None
    with torch.no_grad():
        for cell in plan.cells:
            grid = cache.get_or_build(x.shape[-2], x.shape[-1], cell) if cache and cell.affine else None
            out = net.forward_interval(transform_batch(x.unsqueeze(0), cell, grid))[0]
            cell_bound = RegressionBound(out.lo, out.hi)
            bound = cell_bound if bound is None else bound.hull(cell_bound)
    return bound


def certify_regression_dataset(net: Network, dataset: Dataset, chain: TransformChain,
                               plan: Optional[SplitPlan] = None, batch_size: int = 256,
                               cache: Optional[GridCache] = None) -> RegressionReport:
    """
    Regression bounds for every image, with MAE and certified MAE.

    Cells run in the outer loop so each cell's grid serves all image batches.
    """
    check_dataset_fits(net, dataset)
    plan = plan or split_params(chain, [1])
    cache = cache or GridCache()
    start = time.time()
    n = len(dataset)
    lo = hi = None
    with torch.no_grad():
        predictions = (net.forward_concrete(dataset.images) if n
                       else torch.zeros(0, net.n_outputs, dtype=dataset.images.dtype))
        for cell in plan.cells:
            for begin in range(0, n, batch_size):
                X = dataset.images[begin:begin + batch_size]
                grid = cache.get_or_build(X.shape[-2], X.shape[-1], cell) if cell.affine else None
                out = net.forward_interval(transform_batch(X, cell, grid))
                if lo is None:
                    lo = torch.full((n, net.n_outputs), float('inf'), dtype=out.lo.dtype)
                    hi = torch.full((n, net.n_outputs), float('-inf'), dtype=out.hi.dtype)
                lo[begin:begin + batch_size] = torch.minimum(lo[begin:begin + batch_size], out.lo)
                hi[begin:begin + batch_size] = torch.maximum(hi[begin:begin + batch_size], out.hi)

    bounds = [RegressionBound(lo[i], hi[i]) for i in range(n)] if n else []
    targets = dataset.labels.reshape(n, net.n_outputs).to(predictions.dtype)
    report = RegressionReport(bounds=bounds, predictions=predictions, targets=targets,
                              wall_time=time.time() - start)
    logger.info(f"Regression certification of {n} images: MAE {report.mae:.4f}, "
                f"certified MAE {report.certified_mae:.4f}")
    return report


def sample_attack(net: Network, x: torch.Tensor, y: int, chain: TransformChain, n: int,
                  rng: np.random.Generator, batch_size: int = 128) -> AttackResult:
    """
    Random search over concrete parameters for a misclassification.

    Each sample draws theta uniformly from the chain's parameter box and
    evaluates the exactly transformed image.
    """
    params = chain.parameters()
    min_margin = float('inf')
    done = 0
    with torch.no_grad():
        while done < n:
            thetas = [[rng.uniform(p.lo, p.hi) if p.width > 0 else p.lo for p in params]
                      for _ in range(min(batch_size, n - done))]
            images = torch.cat([transform_batch(x.unsqueeze(0), chain.at(theta)).lo for theta in thetas])
            margins = logit_margins(net.forward_concrete(images), y)
            done += len(thetas)
            worst = int(margins.argmin())
            min_margin = min(min_margin, float(margins[worst]))
            if margins[worst] <= 0:
                return AttackResult(found=True, samples=done, theta=[float(t) for t in thetas[worst]],
                                    min_margin=min_margin)
    return AttackResult(found=False, samples=done, min_margin=min_margin)
