"""
Scan throughput: elements per second of the sequential and the chunked scan, and the fitted
log-log slope of runtime against L.
"""
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from ..ssm import selective_scan as scan
from ..ssm.kernels import configure_threads
from ..util.exceptions import ContractError
from ..util.utils import write_csv
from ..util.variables import BENCH_COLUMNS

VARIANTS = ('sequential', 'chunked')
DEFAULT_L = (1024, 4096, 16384, 65536)


@dataclass
class BenchRow:
    variant: str
    L: int
    N: int
    seconds: float
    elems_per_sec: float

    def to_dict(self):
        return dict(variant=self.variant, L=self.L, N=self.N, elems_per_sec=self.elems_per_sec)


@dataclass
class BenchReport:
    rows: List[BenchRow] = field(default_factory=list)
    slopes: Dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return dict(rows=[dict(r.to_dict(), seconds=r.seconds) for r in self.rows], loglog_slope=self.slopes)


def loglog_slope(lengths: Sequence[int], seconds: Sequence[float]) -> float:
    """ least-squares slope of log(runtime) against log(L) """
    if len(lengths) < 2:
        return float('nan')
    return float(np.polyfit(np.log(lengths), np.log(seconds), 1)[0])


class ScanBenchService(object):
    def __init__(self, batch=1, channels=16, chunk=scan.DEFAULT_CHUNK, seed=0, min_time=0.05, repeats=3,
                 threads=None, logger=None):
        self.logger = logger or logging.getLogger(__name__)
        self.batch, self.channels, self.chunk = batch, channels, chunk
        self.seed = seed
        self.min_time, self.repeats = min_time, repeats
        self.threads = configure_threads(threads)

    def inputs(self, L, N):
        rng = np.random.default_rng([self.seed, L, N])
        B, D = self.batch, self.channels
        return (rng.normal(size=(B, L, D)), rng.uniform(0.01, 0.1, size=(B, L, D)), -rng.uniform(0.5, 2.0, size=(D, N)),
                rng.normal(size=(B, L, N)), rng.normal(size=(B, L, N)), rng.normal(size=D))

    def measure(self, variant, arrays) -> float:
        """ fastest single call over at least `repeats` calls and `min_time` seconds """
        L = arrays[0].shape[1]
        chunk = L if variant == 'sequential' else min(self.chunk, L)
        scan.scan_forward_arrays(arrays, chunk)  # jit warmup
        best, spent, calls = float('inf'), 0.0, 0
        while calls < self.repeats or spent < self.min_time:
            start = time.perf_counter()
            scan.scan_forward_arrays(arrays, chunk)
            elapsed = time.perf_counter() - start
            best, spent, calls = min(best, elapsed), spent + elapsed, calls + 1
        return best

    def run(self, lengths: Sequence[int] = DEFAULT_L, states: Sequence[int] = (16,),
            variants: Sequence[str] = VARIANTS) -> BenchReport:
        if not lengths or not states or any(v < 1 for v in list(lengths) + list(states)):
            raise ContractError(f'invalid sizes L={lengths} N={states}')
        for variant in variants:
            if variant not in VARIANTS:
                raise ContractError(f'unknown variant {variant!r}, expected one of {VARIANTS}')
        report = BenchReport()
        for N in states:
            for L in lengths:
                arrays = self.inputs(L, N)
                for variant in variants:
                    seconds = self.measure(variant, arrays)
                    elems = self.batch * L * self.channels * N
                    row = BenchRow(variant, L, N, seconds, elems / seconds)
                    self.logger.info(f'{variant:>10} L={L:<6} N={N:<3} {row.elems_per_sec:.3e} elems/s')
                    report.rows.append(row)
        for variant in variants:
            for N in states:
                rows = [r for r in report.rows if r.variant == variant and r.N == N]
                key = variant if len(states) == 1 else f'{variant}/N={N}'
                report.slopes[key] = loglog_slope([r.L for r in rows], [r.seconds for r in rows])
        return report

    @staticmethod
    def write(report: BenchReport, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        write_csv(path, BENCH_COLUMNS, [r.to_dict() for r in report.rows])
