"""
Sparse interval bilinear interpolation.

make_interp_grid computes the interval interpolation weights between every
output pixel's inverse coordinates and every source pixel once per transform
range; interpolate then applies that grid to a batch of any size with a single
gather and a segmented sum.
"""

import logging
import math
from typing import Optional, Union

import torch
import torch.nn.functional as F

from core.geometry import apply_pixelwise, coord_grid, coord_u, coord_v, inverse_point, inverse_transform
from core.interval_ops import iv_clamp01, iv_hat, tensor_hat
from models.grid import PaddingPlan, PaddingStrategy, SparseInterpGrid
from models.interval import Interval, IntervalTensor
from models.transforms import TransformChain
from utils.error_handler import ShapeMismatchError

logger = logging.getLogger(__name__)

# upper bound on the dense (pixel block x H x W) weight slab built at once
BLOCK_ELEMENTS = 1 << 22


def _source_weights(coords: IntervalTensor, centers: torch.Tensor):
    """Tent weights max(0, 1 - |coord - center|) of every pixel against every source center."""
    lo = coords.lo.reshape(-1, 1) - centers.reshape(1, -1)
    hi = coords.hi.reshape(-1, 1) - centers.reshape(1, -1)
    return tensor_hat(lo, hi)


def make_interp_grid(height: int, width: int, chain: TransformChain) -> SparseInterpGrid:
    """
    Build the sparse interval interpolation grid for an H x W image.

    Args:
        height: image height H
        width: image width W
        chain: transform chain with at least one affine stage

    Returns:
        SparseInterpGrid holding only entries whose weight upper bound is > 0
    """
    grid = coord_grid(height, width)
    u_prime, v_prime = inverse_transform(chain, grid.U, grid.V)

    cols = torch.arange(width, dtype=torch.float64)
    rows = torch.arange(height, dtype=torch.float64)
    hu_lo, hu_hi = _source_weights(u_prime, coord_u(cols, width))    # (P, W)
    hv_lo, hv_hi = _source_weights(v_prime, coord_v(rows, height))   # (P, H)

    n_pixels = height * width
    block = max(1, BLOCK_ELEMENTS // n_pixels)

    r_parts, c_parts, lo_parts, hi_parts, z_parts = [], [], [], [], []
    for start in range(0, n_pixels, block):
        stop = min(start + block, n_pixels)
        # both factors are nonnegative, so the interval product is [lo*lo, hi*hi]
        w_lo = hv_lo[start:stop, :, None] * hu_lo[start:stop, None, :]
        w_hi = hv_hi[start:stop, :, None] * hu_hi[start:stop, None, :]
        mask = w_hi > 0
        index = mask.nonzero(as_tuple=True)
        r_parts.append(index[1])
        c_parts.append(index[2])
        lo_parts.append(w_lo[mask])
        hi_parts.append(w_hi[mask])
        z_parts.append(mask.sum(dim=(1, 2)))

    sparse = SparseInterpGrid(
        r=torch.cat(r_parts),
        c=torch.cat(c_parts),
        w_lo=torch.cat(lo_parts),
        w_hi=torch.cat(hi_parts),
        z=torch.cat(z_parts),
        height=height,
        width=width,
    )
    logger.debug(f"Built {height}x{width} grid for {chain.describe()}: {sparse.nnz} entries "
                 f"(density {sparse.density:.4%})")
    return sparse


def interpolate(X: torch.Tensor, grid: SparseInterpGrid) -> IntervalTensor:
    """
    Interpolate a batch of images through a prebuilt grid.

    Each output pixel is the left-to-right sum of w_i * X[:, :, r_i, c_i] over
    its chunk, intersected with [0, 1].

    Args:
        X: images, N x C x H x W, values in [0, 1]
        grid: grid built for the same H x W

    Returns:
        IntervalTensor of shape N x C x H x W
    """
    if X.dim() != 4 or tuple(X.shape[-2:]) != grid.shape:
        raise ShapeMismatchError(
            f"Images of shape {tuple(X.shape)} do not match a {grid.height}x{grid.width} grid"
        )
    n, channels = X.shape[:2]
    flat = X.reshape(n, channels, -1)
    values = flat[:, :, grid.flat_source]
    w_lo = grid.w_lo.to(X.dtype)
    w_hi = grid.w_hi.to(X.dtype)
    prod_a = values * w_lo
    prod_b = values * w_hi
    term_lo = torch.minimum(prod_a, prod_b)
    term_hi = torch.maximum(prod_a, prod_b)

    out_lo = flat.new_zeros(n, channels, grid.height * grid.width)
    out_hi = flat.new_zeros(n, channels, grid.height * grid.width)
    out_lo.index_add_(2, grid.pixel_index, term_lo)
    out_hi.index_add_(2, grid.pixel_index, term_hi)

    shape = (n, channels, grid.height, grid.width)
    return IntervalTensor(out_lo.reshape(shape), out_hi.reshape(shape)).clamp01()


def transform_batch(X: torch.Tensor, chain: TransformChain,
                    grid: Optional[SparseInterpGrid] = None) -> IntervalTensor:
    """
    Full perturbation P(X, theta): interpolation followed by the pixelwise stage.

    Args:
        X: images, N x C x H x W
        chain: transform chain
        grid: prebuilt grid for the chain's affine part; built on demand when omitted

    Returns:
        IntervalTensor enclosing every transformed image
    """
    if chain.affine:
        if grid is None:
            grid = make_interp_grid(X.shape[-2], X.shape[-1], chain)
        out = interpolate(X, grid)
    else:
        out = IntervalTensor.point(X)
    if chain.pixelwise is not None:
        out = apply_pixelwise(out, chain.pixelwise.contrast, chain.pixelwise.brightness)
    return out


def reference_interpolate(x: torch.Tensor, chain: TransformChain) -> IntervalTensor:
    """
    Pixel-by-pixel evaluation of the interval bilinear interpolation.

    Slow; used as an oracle for interpolate and transform_batch.

    Args:
        x: single image, C x H x W

    Returns:
        IntervalTensor of shape C x H x W
    """
    channels, height, width = x.shape
    pixels = x.detach().to(torch.float64).tolist()
    out_lo = torch.zeros(channels, height, width, dtype=torch.float64)
    out_hi = torch.zeros(channels, height, width, dtype=torch.float64)

    for i in range(height):
        for j in range(width):
            if chain.affine:
                u_prime, v_prime = inverse_point(chain, coord_u(j, width), coord_v(i, height))
                u_weights = [iv_hat(u_prime - coord_u(m, width)) for m in range(width)]
                sums = [Interval(0.0, 0.0)] * channels
                for n in range(height):
                    v_weight = iv_hat(v_prime - coord_v(n, height))
                    if v_weight.hi == 0.0:
                        continue
                    for m in range(width):
                        if u_weights[m].hi == 0.0:
                            continue
                        weight = v_weight * u_weights[m]
                        if weight.hi <= 0.0:
                            continue
                        for ch in range(channels):
                            sums[ch] = sums[ch] + pixels[ch][n][m] * weight
                values = [iv_clamp01(total) for total in sums]
            else:
                values = [Interval.point(pixels[ch][i][j]) for ch in range(channels)]

            for ch in range(channels):
                value = values[ch]
                if chain.pixelwise is not None:
                    value = apply_pixelwise(value, chain.pixelwise.contrast, chain.pixelwise.brightness)
                out_lo[ch, i, j] = value.lo
                out_hi[ch, i, j] = value.hi
    return IntervalTensor(out_lo, out_hi)


def plan_padding(height: int, width: int, chain: TransformChain,
                 strategy: Union[PaddingStrategy, str] = PaddingStrategy.ZERO) -> PaddingPlan:
    """
    Padding needed so every inverse coordinate lands on a real or padded pixel.

    p = ceil(max(|min U' - min U|, |max U' - max U|, |min V' - min V|, |max V' - max V|))
    """
    strategy = PaddingStrategy(strategy)
    if not chain.affine:
        return PaddingPlan(p=0, strategy=strategy, original=(height, width))
    grid = coord_grid(height, width)
    u_prime, v_prime = inverse_transform(chain, grid.U, grid.V)
    distance = max(
        abs(u_prime.lo.min().item() - grid.U.min().item()),
        abs(u_prime.hi.max().item() - grid.U.max().item()),
        abs(v_prime.lo.min().item() - grid.V.min().item()),
        abs(v_prime.hi.max().item() - grid.V.max().item()),
    )
    p = int(math.ceil(round(distance, 9)))
    logger.debug(f"Padding plan for {height}x{width} under {chain.describe()}: p={p} ({strategy.value})")
    return PaddingPlan(p=p, strategy=strategy, original=(height, width))


def pad_crop_pipeline(X: torch.Tensor, chain: TransformChain,
                      strategy: Union[PaddingStrategy, str] = PaddingStrategy.ZERO) -> IntervalTensor:
    """
    Pad the batch, interpolate at the padded size and return the central H x W crop.

    With zero padding the result equals transform_batch on the unpadded batch.
    """
    height, width = X.shape[-2:]
    plan = plan_padding(height, width, chain, strategy)
    if plan.p == 0:
        return transform_batch(X, chain)

    p = plan.p
    mode = 'constant' if plan.strategy == PaddingStrategy.ZERO else 'replicate'
    padded = F.pad(X, (p, p, p, p), mode=mode)
    affine_only = TransformChain(affine=chain.affine)
    out = interpolate(padded, make_interp_grid(height + 2 * p, width + 2 * p, affine_only))
    out = out[:, :, p:p + height, p:p + width]
    if chain.pixelwise is not None:
        out = apply_pixelwise(out, chain.pixelwise.contrast, chain.pixelwise.brightness)
    return out
