"""
Dataset manifests: seeds and parameters only, samples are regenerated on demand.
"""
import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .phantom import Phantom, PhantomParams, generate
from ..util import Log, worker_count
from ..util.exceptions import ContractError, IntegrityError
from ..util.utils import atomic_write_text
from ..util.variables import DATASET_EXTENT, LOG, REFERENCE_SPLIT, Split

log = Log.getLogger(LOG.Phantom.value)


def sample_seed(master_seed: int, index: int) -> int:
    """ u64 per-sample seed, blake2b of (master_seed, index) """
    digest = hashlib.blake2b(struct.pack('<QQ', master_seed & 0xFFFFFFFFFFFFFFFF, index), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


def train_count(n: int, split: Tuple[float, float] = REFERENCE_SPLIT) -> int:
    train, test = split
    if train < 0 or test < 0 or train + test <= 0:
        raise ContractError(f'invalid split {split}')
    count = int(math.floor(n * train / (train + test) + 0.5))
    return min(max(count, 1), n - 1)


@dataclass
class ManifestRecord:
    index: int
    seed: int
    split: str
    params: Dict

    def to_dict(self):
        return dict(index=self.index, seed=self.seed, split=self.split, params=self.params)


@dataclass
class Manifest:
    records: List[ManifestRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def split(self, split) -> List[ManifestRecord]:
        split = Split(split).value
        return [r for r in self.records if r.split == split]

    @staticmethod
    def sample(record: ManifestRecord) -> Phantom:
        params = dict(record.params)
        extent = params.pop('extent')
        return generate(record.seed, extent, PhantomParams.from_dict(params))

    def samples(self, records: Sequence[ManifestRecord], workers: Optional[int] = None) -> List[Phantom]:
        """ regenerate in a worker pool; the result keeps the order of `records` """
        with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
            return list(pool.map(self.sample, records))

    def dumps(self) -> str:
        return ''.join(json.dumps(r.to_dict()) + '\n' for r in self.records)

    def save(self, path):
        atomic_write_text(path, self.dumps())
        log.info(f'manifest with {len(self)} samples written to {path}')

    @classmethod
    def loads(cls, text) -> 'Manifest':
        records = []
        for line_no, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                records.append(ManifestRecord(int(data['index']), int(data['seed']), Split(data['split']).value,
                                              dict(data['params'])))
            except (ValueError, KeyError, TypeError) as E:
                raise IntegrityError(f'manifest line {line_no} is malformed: {E}') from E
        return cls(records)

    @classmethod
    def load(cls, path) -> 'Manifest':
        with open(path, 'r', encoding='utf8') as f:
            return cls.loads(f.read())


def make_dataset(n: int, master_seed: int, split: Tuple[float, float] = REFERENCE_SPLIT,
                 extent: int = DATASET_EXTENT, params: Optional[PhantomParams] = None) -> Manifest:
    """ indices [0, n_train) train, the rest test """
    if n < 2:
        raise ContractError(f'a dataset needs at least 2 samples, got {n}')
    params = params or PhantomParams()
    params.validate(extent)
    n_train = train_count(n, split)
    record_params = dict(params.to_dict(), extent=extent)
    records = [ManifestRecord(i, sample_seed(master_seed, i), (Split.Train if i < n_train else Split.Test).value,
                              dict(record_params)) for i in range(n)]
    log.debug(f'dataset: {n_train} train / {n - n_train} test, master seed {master_seed}')
    return Manifest(records)
