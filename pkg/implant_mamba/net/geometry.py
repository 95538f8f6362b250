"""
Implant axis geometry. Coordinates are (x, y, z) voxel tuples; volumes are indexed [z, y, x].
"""
from typing import NamedTuple, Optional, Tuple

import numpy as np

from ..util.exceptions import DegenerateGeometryError, DimensionError

Coord = Tuple[float, float, float]


class Slope(NamedTuple):
    """ unit direction base -> apex with canonical sign: z > 0, else y > 0, else x > 0 """
    x: float
    y: float
    z: float

    def as_array(self):
        return np.array(self, dtype=np.float64)


def canonicalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    for component in (v[2], v[1], v[0]):
        if component > 0:
            return v
        if component < 0:
            return -v
    return v


def slope_from_endpoints(apex, base) -> Slope:
    diff = np.asarray(apex, dtype=np.float64) - np.asarray(base, dtype=np.float64)
    norm = np.sqrt(np.dot(diff, diff))
    if norm == 0:
        raise DegenerateGeometryError(f'apex and base coincide at {tuple(apex)}')
    return Slope(*canonicalize(diff / norm).tolist())


def orient(p, q):
    """ order two distinct points as (apex, base) so that apex - base points along the canonical sign """
    diff = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    if np.array_equal(canonicalize(diff), diff):
        return p, q
    return q, p


class Endpoints(NamedTuple):
    apex: Tuple[int, int, int]
    base: Tuple[int, int, int]
    degenerate: bool = False

    @property
    def slope(self) -> Slope:
        return slope_from_endpoints(self.apex, self.base)


def _xyz(zyx):
    return tuple(int(v) for v in zyx[::-1])


def extract_endpoints(mask, prob: Optional[np.ndarray] = None) -> Endpoints:
    """
    Principal axis of the foreground voxels; the endpoints are the voxels with extreme projections.
    With fewer than 2 foreground voxels the two most probable voxels of `prob` are used
    (ties broken by the smallest linear index) and the result is flagged degenerate.
    """
    mask = np.asarray(getattr(mask, 'data', mask)).astype(bool)
    if mask.ndim != 3:
        raise DimensionError(f'extract_endpoints expects a [D, H, W] mask, got {mask.shape}')
    if mask.size < 2:
        raise DegenerateGeometryError('volume holds fewer than 2 voxels')

    zyx = np.argwhere(mask)
    if len(zyx) < 2:
        scores = mask.astype(np.float64) if prob is None else np.asarray(getattr(prob, 'data', prob), np.float64)
        scores = scores.reshape(-1)
        top = np.argsort(-scores, kind='stable')[:2]
        p, q = (_xyz(np.unravel_index(i, mask.shape)) for i in top)
        apex, base = orient(p, q)
        return Endpoints(apex, base, degenerate=True)

    coords = zyx[:, ::-1].astype(np.float64)
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / len(coords)
    _, vectors = np.linalg.eigh(cov)
    axis = vectors[:, -1]
    projection = centered @ axis
    p = _xyz(zyx[int(np.argmax(projection))])
    q = _xyz(zyx[int(np.argmin(projection))])
    apex, base = orient(p, q)
    return Endpoints(apex, base)


def angular_error_deg(pred, truth) -> float:
    """ angle between the normalized prediction and the truth, NaN for a zero prediction """
    pred = np.asarray(pred, dtype=np.float64)
    norm = np.linalg.norm(pred)
    if norm == 0:
        return float('nan')
    cosine = np.clip(np.dot(pred / norm, np.asarray(truth, dtype=np.float64)), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosine)))
