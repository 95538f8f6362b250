"""
Phantom files: IMTN container with "volume" and "mask" entries, annotations in a JSON sidecar.
"""
import json
import os

import numpy as np

from .phantom import Phantom
from ..net.geometry import Slope, slope_from_endpoints
from ..util import Log, container
from ..util.exceptions import DegenerateGeometryError, IntegrityError
from ..util.utils import atomic_write_text
from ..util.variables import LOG

log = Log.getLogger(LOG.Phantom.value)

SLOPE_TOLERANCE = 1e-9


def sidecar_path(path):
    return str(path) + '.json'


def export_volume(phantom: Phantom, path):
    container.save(path, {'volume': phantom.volume, 'mask': phantom.mask})
    sidecar = dict(apex=list(phantom.apex), base=list(phantom.base), slope=list(phantom.slope),
                   seed=phantom.seed, meta=phantom.meta)
    atomic_write_text(sidecar_path(path), json.dumps(sidecar, indent=1))


def import_volume(path) -> Phantom:
    tensors = container.load(path)
    for name in ('volume', 'mask'):
        if name not in tensors:
            raise IntegrityError(f'{path}: missing entry {name!r}')
    volume, mask = tensors['volume'], tensors['mask']
    if volume.ndim != 4 or volume.shape[1:] != mask.shape:
        raise IntegrityError(f'{path}: volume {volume.shape} does not match mask {mask.shape}')
    if not os.path.exists(sidecar_path(path)):
        raise IntegrityError(f'{path}: sidecar {sidecar_path(path)} not found')
    try:
        with open(sidecar_path(path), 'r', encoding='utf8') as f:
            sidecar = json.load(f)
        apex = tuple(int(v) for v in sidecar['apex'])
        base = tuple(int(v) for v in sidecar['base'])
        slope = Slope(*(float(v) for v in sidecar['slope']))
        seed, meta = int(sidecar['seed']), dict(sidecar['meta'])
    except (ValueError, KeyError, TypeError) as E:
        raise IntegrityError(f'{path}: malformed sidecar: {E}') from E
    try:
        expected = slope_from_endpoints(apex, base)
    except DegenerateGeometryError as E:
        raise IntegrityError(f'{path}: {E}') from E
    if np.max(np.abs(np.subtract(expected, slope))) > SLOPE_TOLERANCE:
        raise IntegrityError(f'{path}: stored slope {tuple(slope)} disagrees with endpoints ({tuple(expected)})')
    return Phantom(volume=volume, mask=mask, apex=apex, base=base, slope=slope, seed=seed, meta=meta)
