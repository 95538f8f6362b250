import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .geometry import Endpoints, extract_endpoints
from ..core.tensor import Tensor
from ..util.exceptions import ContractError, DimensionError


@dataclass
class Heatmap:
    """ h [N, 1, D', H', W'] in [0, 1]; peaks are (apex, base) target-grid cells per sample, (x, y, z) order """
    h: Tensor
    peaks: List[Tuple[Tuple[int, ...], Tuple[int, ...]]] = field(default_factory=list)
    degenerate: List[bool] = field(default_factory=list)

    @property
    def degenerate_count(self):
        return int(sum(self.degenerate))


def binarize(prob, threshold=0.5) -> np.ndarray:
    return np.asarray(getattr(prob, 'data', prob)) >= threshold


def to_grid(coord, source_shape, target_shape):
    """
    (x, y, z) voxel coordinate on a [D, H, W] grid -> voxel-centre-aligned coordinate on the target grid.
    The result is fractional whenever the grids differ; snap_to_cell picks the cell that holds it.
    """
    out = []
    for value, src, dst in zip(coord, reversed(source_shape), reversed(target_shape)):
        out.append((value + 0.5) * dst / src - 0.5)
    return tuple(out)


def snap_to_cell(point, grid) -> Tuple[int, ...]:
    """ nearest cell (round half up) of an (x, y, z) point, clamped into a [D, H, W] grid """
    return tuple(int(min(max(math.floor(v + 0.5), 0), n - 1)) for v, n in zip(point, reversed(tuple(grid))))


def render_gaussians(peaks: Sequence[Sequence[float]], grid: Sequence[int], sigma: float) -> np.ndarray:
    """ max over isotropic Gaussians of peak 1 and std sigma; grid is (D, H, W), peaks are (x, y, z) """
    if sigma <= 0:
        raise ContractError(f'sigma must be positive, got {sigma}')
    z, y, x = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in grid), indexing='ij')
    out = np.zeros(tuple(grid), dtype=np.float64)
    for px, py, pz in peaks:
        d2 = (x - px) ** 2 + (y - py) ** 2 + (z - pz) ** 2
        np.maximum(out, np.exp(-d2 / (2 * sigma * sigma)), out=out)
    return out


def heatmap_from_endpoints(endpoints: Sequence[Endpoints], source_shape, target_grid, sigma, dtype=np.float32) -> Heatmap:
    maps, peaks = [], []
    for ends in endpoints:
        # peaks sit on cell centres, so each Gaussian reaches 1 on the grid
        apex = snap_to_cell(to_grid(ends.apex, source_shape, target_grid), target_grid)
        base = snap_to_cell(to_grid(ends.base, source_shape, target_grid), target_grid)
        peaks.append((apex, base))
        maps.append(render_gaussians((apex, base), target_grid, sigma))
    h = np.stack(maps)[:, None].astype(dtype)
    return Heatmap(Tensor(h), peaks, [e.degenerate for e in endpoints])


def heatmap_generate(prob, threshold=0.5, sigma=2.0, target_grid=(4, 4, 4)) -> Heatmap:
    """
    prob [N, 1, D, H, W] -> binarize -> apex/base per sample -> two Gaussians on target_grid.
    Carries no gradient.
    """
    data = np.asarray(getattr(prob, 'data', prob))
    if data.ndim != 5 or data.shape[1] != 1:
        raise DimensionError(f'heatmap_generate expects [N, 1, D, H, W], got {data.shape}')
    endpoints = [extract_endpoints(binarize(sample[0], threshold), sample[0]) for sample in data]
    return heatmap_from_endpoints(endpoints, data.shape[2:], tuple(target_grid), sigma, dtype=data.dtype)
