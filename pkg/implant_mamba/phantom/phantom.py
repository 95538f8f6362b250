"""
Synthetic dental-arch phantoms.

Tooth-like bright ellipsoids sit on a circular arc in the axial (x, y) plane; one tooth is
removed and the ground-truth implant cylinder is placed in that gap. The implant exists only as
geometry (mask, endpoints, slope): the volume shows background there, so its position has to be
read from the neighbouring teeth.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from ..net.geometry import Slope, slope_from_endpoints
from ..util import Log
from ..util.exceptions import ContractError
from ..util.utils import JsonDataclass
from ..util.variables import LOG

log = Log.getLogger(LOG.Phantom.value)

MAX_TILT_DEG = 30.0


@dataclass(frozen=True)
class PhantomParams(JsonDataclass):
    """ generation parameters; None means drawn from the sample seed """
    tooth_count: int = 8
    arch_radius_frac: float = 0.3
    tooth_height_frac: float = 0.25
    gap_index: Optional[int] = None
    tilt_deg: Optional[float] = None
    implant_radius: Optional[float] = None
    implant_length_frac: float = 0.4
    noise_std: float = 0.05
    tooth_intensity: float = 0.8
    tooth_jitter: float = 0.1
    background: float = 0.1

    def validate(self, extent):
        if extent < 16 or extent % 16:
            raise ContractError(f'extent must be a positive multiple of 16, got {extent}')
        if self.tooth_count < 3:
            raise ContractError(f'need at least 3 teeth, got {self.tooth_count}')
        if self.gap_index is not None and not 1 <= self.gap_index <= self.tooth_count - 2:
            raise ContractError(f'gap_index must lie in [1, {self.tooth_count - 2}], got {self.gap_index}')
        if self.tilt_deg is not None and not 0 <= self.tilt_deg <= MAX_TILT_DEG:
            raise ContractError(f'tilt must lie in [0, {MAX_TILT_DEG}] degrees, got {self.tilt_deg}')
        if self.noise_std < 0:
            raise ContractError(f'noise_std must be >= 0, got {self.noise_std}')

    def radius(self, extent):
        # the 0.17 offset keeps r^2 away from every reachable voxel distance
        return self.implant_radius if self.implant_radius is not None else extent / 16 + 0.17


@dataclass
class Phantom:
    volume: np.ndarray                 # [1, D, H, W] float32 in [0, 1]
    mask: np.ndarray                   # [D, H, W] float32, 0 / 1
    apex: Tuple[int, int, int]         # (x, y, z)
    base: Tuple[int, int, int]
    slope: Slope
    seed: int
    meta: Dict = field(default_factory=dict)

    @property
    def extent(self):
        return self.mask.shape[0]

    def same_as(self, other: 'Phantom') -> bool:
        """ bitwise equality of every field """
        return (np.array_equal(self.volume, other.volume) and self.volume.dtype == other.volume.dtype
                and np.array_equal(self.mask, other.mask) and tuple(self.apex) == tuple(other.apex)
                and tuple(self.base) == tuple(other.base) and tuple(self.slope) == tuple(other.slope)
                and int(self.seed) == int(other.seed) and self.meta == other.meta)


def voxel_grid(shape):
    """ integer (x, y, z) coordinates of every voxel centre of a [D, H, W] grid """
    z, y, x = np.meshgrid(*(np.arange(n, dtype=np.int64) for n in shape), indexing='ij')
    return x, y, z


def segment_distance_sq(shape, a, b):
    """ squared distance of every voxel centre to the segment [b, a]; integer endpoints """
    x, y, z = voxel_grid(shape)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    d = a - b
    dd = int(d @ d)
    wx, wy, wz = x - b[0], y - b[1], z - b[2]
    w2 = wx * wx + wy * wy + wz * wz
    t = wx * d[0] + wy * d[1] + wz * d[2]
    ux, uy, uz = x - a[0], y - a[1], z - a[2]
    u2 = ux * ux + uy * uy + uz * uz
    inner = w2 - (t * t) / dd
    return np.where(t <= 0, w2, np.where(t >= dd, u2, inner)).astype(np.float64)


def cylinder_mask(shape, apex, base, radius):
    return segment_distance_sq(shape, apex, base) <= radius * radius


def _axis(tilt_rad, azimuth):
    # tilted from +z toward the radial direction of the gap
    return np.array([math.sin(tilt_rad) * math.cos(azimuth), math.sin(tilt_rad) * math.sin(azimuth),
                     math.cos(tilt_rad)])


def _endpoints(center, tilt_deg, azimuth, length):
    direction = _axis(math.radians(tilt_deg), azimuth)
    apex = tuple(int(v) for v in np.rint(center + 0.5 * length * direction))
    base = tuple(int(v) for v in np.rint(center - 0.5 * length * direction))
    return apex, base


def _fits(apex, base, radius, extent):
    lo = np.minimum(apex, base) - radius
    hi = np.maximum(apex, base) + radius
    return lo.min() >= 0 and hi.max() <= extent - 1


def generate(seed: int, extent: int = 32, params: Optional[PhantomParams] = None) -> Phantom:
    """ deterministic per (seed, extent, params) """
    params = params or PhantomParams()
    params.validate(extent)
    rng = np.random.default_rng(int(seed))
    K = params.tooth_count

    gap = int(rng.integers(1, K - 1)) if params.gap_index is None else params.gap_index
    tilt = float(rng.uniform(0, MAX_TILT_DEG)) if params.tilt_deg is None else float(params.tilt_deg)
    jitter = max(1, extent // 32)
    shift = rng.integers(-jitter, jitter + 1, size=2)
    levels = params.tooth_intensity + rng.uniform(-params.tooth_jitter, params.tooth_jitter, size=K)

    c = (extent - 1) / 2
    arch_radius = params.arch_radius_frac * extent
    center = np.array([c + shift[0], c - arch_radius / 2 + shift[1], c])
    angles = np.linspace(0, math.pi, K)
    spacing = math.pi * arch_radius / (K - 1)
    tooth_r = 0.45 * spacing
    tooth_h = params.tooth_height_frac * extent
    teeth = [[float(center[0] + arch_radius * math.cos(phi)), float(center[1] + arch_radius * math.sin(phi)),
              float(center[2])] for phi in angles]

    radius = params.radius(extent)
    length = max(params.implant_length_frac * extent, 4 * radius + 2)
    site = np.rint(np.array(teeth[gap]))
    azimuth = float(angles[gap])
    apex, base = _endpoints(site, tilt, azimuth, length)
    clamped = False
    while not _fits(apex, base, radius, extent):
        if tilt <= 0:
            raise ContractError(f'implant of radius {radius} and length {length} does not fit a {extent}^3 volume')
        tilt = max(0.0, math.floor(tilt) - 1.0)
        clamped = True
        apex, base = _endpoints(site, tilt, azimuth, length)
    if clamped:
        log.debug(f'seed {seed}: tilt clamped to {tilt} degrees')

    shape = (extent, extent, extent)
    x, y, z = voxel_grid(shape)
    volume = np.full(shape, params.background, dtype=np.float64)
    for k, (tx, ty, tz) in enumerate(teeth):
        if k == gap:
            continue
        inside = ((x - tx) ** 2 + (y - ty) ** 2) / tooth_r ** 2 + (z - tz) ** 2 / tooth_h ** 2 <= 1
        volume[inside] = np.maximum(volume[inside], levels[k])
    mask = cylinder_mask(shape, apex, base, radius)
    volume[mask] = params.background
    volume += rng.normal(0, params.noise_std, size=shape)
    np.clip(volume, 0, 1, out=volume)

    meta = dict(extent=extent, arch_radius=arch_radius, arch_center=[float(v) for v in center],
                tooth_count=K, gap_index=gap, tooth_centers=teeth, tooth_radius=tooth_r, tooth_height=tooth_h,
                radius=radius, length=length, tilt_deg=tilt, azimuth_deg=math.degrees(azimuth),
                tilt_clamped=clamped, noise_std=params.noise_std)
    return Phantom(volume=volume[None].astype(np.float32), mask=mask.astype(np.float32), apex=apex, base=base,
                   slope=slope_from_endpoints(apex, base), seed=int(seed), meta=meta)


def random_crop(phantom: Phantom, crop: int, rng_seed: int) -> Phantom:
    """ uniform over the crop windows that contain the whole mask; annotations are translated """
    extent = phantom.extent
    if crop > extent or crop < 16 or crop % 16:
        raise ContractError(f'crop must be a multiple of 16 no larger than {extent}, got {crop}')
    rng = np.random.default_rng(int(rng_seed))
    zyx = np.argwhere(phantom.mask > 0)
    offset_zyx = []
    for axis in range(3):
        if len(zyx):
            lo_vox, hi_vox = int(zyx[:, axis].min()), int(zyx[:, axis].max())
            lo, hi = max(0, hi_vox - crop + 1), min(lo_vox, extent - crop)
        else:
            lo, hi = 0, extent - crop
        if lo > hi:
            raise ContractError(f'mask spans more than the {crop}-voxel crop on axis {axis}')
        offset_zyx.append(int(rng.integers(lo, hi + 1)))
    oz, oy, ox = offset_zyx
    window = (slice(oz, oz + crop), slice(oy, oy + crop), slice(ox, ox + crop))
    shift = np.array([ox, oy, oz])
    meta = dict(phantom.meta)
    meta['crop_offset'] = [ox, oy, oz]
    return Phantom(volume=phantom.volume[(slice(None),) + window].copy(), mask=phantom.mask[window].copy(),
                   apex=tuple(int(v) for v in np.subtract(phantom.apex, shift)),
                   base=tuple(int(v) for v in np.subtract(phantom.base, shift)),
                   slope=phantom.slope, seed=phantom.seed, meta=meta)


def neighborhood_mask(phantom: Phantom, scale=1.5) -> np.ndarray:
    """ the gap and its two adjacent teeth, ellipsoids enlarged by `scale` """
    meta = phantom.meta
    gap = meta['gap_index']
    ox, oy, oz = meta.get('crop_offset', (0, 0, 0))
    r = scale * meta['tooth_radius']
    h = scale * meta['tooth_height']
    x, y, z = voxel_grid(phantom.mask.shape)
    keep = np.zeros(phantom.mask.shape, dtype=bool)
    for k in (gap - 1, gap, gap + 1):
        tx, ty, tz = meta['tooth_centers'][k]
        tx, ty, tz = tx - ox, ty - oy, tz - oz
        keep |= ((x - tx) ** 2 + (y - ty) ** 2) / r ** 2 + (z - tz) ** 2 / h ** 2 <= 1
    return keep | (phantom.mask > 0)


def context_only(phantom: Phantom, scale=1.5) -> Phantom:
    """ zero every voxel outside the gap neighbourhood; annotations are unchanged """
    keep = neighborhood_mask(phantom, scale)
    volume = np.where(keep[None], phantom.volume, 0).astype(phantom.volume.dtype)
    return Phantom(volume=volume, mask=phantom.mask, apex=phantom.apex, base=phantom.base,
                   slope=phantom.slope, seed=phantom.seed, meta=dict(phantom.meta, context_only=True))
