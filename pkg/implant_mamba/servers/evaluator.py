"""
评估: Dice / IoU of the binarized prediction, slope MAE and angular error per sample.
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint
from ..net.geometry import angular_error_deg
from ..net.heatmap import binarize
from ..net.implantnet import ImplantNet
from ..phantom.dataset import Manifest
from ..phantom.phantom import Phantom, context_only, random_crop
from ..util.exceptions import ContractError
from ..util.utils import atomic_write_text, json_safe, write_csv
from ..util.variables import EVAL_COLUMNS, SAMPLE_COLUMNS, Split


def binary_dice(pred, truth, axis=None):
    """ 2|A n B| / (|A| + |B|); two empty masks score 1 """
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ContractError(f'masks differ in shape: {pred.shape} vs {truth.shape}')
    inter = np.count_nonzero(pred & truth, axis=axis)
    denom = np.count_nonzero(pred, axis=axis) + np.count_nonzero(truth, axis=axis)
    return np.where(denom == 0, 1.0, 2 * inter / np.maximum(denom, 1))[()]


def binary_iou(pred, truth, axis=None):
    """ |A n B| / |A u B|; two empty masks score 1 """
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ContractError(f'masks differ in shape: {pred.shape} vs {truth.shape}')
    inter = np.count_nonzero(pred & truth, axis=axis)
    union = np.count_nonzero(pred | truth, axis=axis)
    return np.where(union == 0, 1.0, inter / np.maximum(union, 1))[()]


def _nanmean(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(values)) if values else float('nan')


@dataclass
class SampleMetrics:
    index: int
    dice: float
    iou: float
    slope_mae: float
    angular_err_deg: float
    degenerate: bool

    def to_dict(self):
        return dict(index=self.index, dice=self.dice, iou=self.iou, slope_mae=self.slope_mae,
                    angular_err_deg=self.angular_err_deg, degenerate=self.degenerate)


@dataclass
class EvalSummary:
    split: str
    samples: List[SampleMetrics] = field(default_factory=list)

    @property
    def eval_dice(self):
        return _nanmean(s.dice for s in self.samples)

    @property
    def eval_iou(self):
        return _nanmean(s.iou for s in self.samples)

    @property
    def eval_slope_mae(self):
        return _nanmean(s.slope_mae for s in self.samples)

    @property
    def eval_angular_err_deg(self):
        return _nanmean(s.angular_err_deg for s in self.samples)

    @property
    def degenerate_sample_count(self):
        return int(sum(s.degenerate for s in self.samples))

    def row(self):
        return dict(split=self.split, samples=len(self.samples), eval_dice=self.eval_dice, eval_iou=self.eval_iou,
                    eval_slope_mae=self.eval_slope_mae, eval_angular_err_deg=self.eval_angular_err_deg,
                    degenerate_sample_count=self.degenerate_sample_count)

    def to_dict(self):
        return json_safe(dict(self.row(), per_sample=[s.to_dict() for s in self.samples]))


class EvalService(object):
    def __init__(self, net: ImplantNet, batch=2, logger=None):
        self.logger = logger or logging.getLogger(__name__)
        self.net = net
        self.batch = batch

    @classmethod
    def from_checkpoint(cls, path, batch=2, logger=None):
        return cls(load_checkpoint(path), batch=batch, logger=logger)

    def fit(self, phantom: Phantom) -> Phantom:
        """ deterministic crop to the model's input extent when the phantom is larger """
        extent = self.net.config.input_extent
        if phantom.extent == extent:
            return phantom
        return random_crop(phantom, extent, phantom.seed)

    def evaluate(self, phantoms: Sequence[Phantom], indices: Optional[Sequence[int]] = None, split='test',
                 context: bool = False) -> EvalSummary:
        indices = list(indices) if indices is not None else list(range(len(phantoms)))
        cfg = self.net.config
        dtype = self.net.parameters()[0].dtype
        summary = EvalSummary(split)
        for start in range(0, len(phantoms), self.batch):
            batch = [self.fit(p) for p in phantoms[start:start + self.batch]]
            if context:
                batch = [context_only(p) for p in batch]
            volume = np.stack([p.volume for p in batch]).astype(dtype)
            output = self.net(volume)
            pred = binarize(output.prob, cfg.threshold)[:, 0]
            truth = np.stack([p.mask for p in batch]) > 0
            axes = (1, 2, 3)
            dice = binary_dice(pred, truth, axis=axes)
            iou = binary_iou(pred, truth, axis=axes)
            for k, phantom in enumerate(batch):
                slope_mae = angular = float('nan')
                degenerate = False
                if output.slope is not None:
                    predicted = output.slope.data[k].astype(np.float64)
                    slope_mae = float(np.mean(np.abs(predicted - phantom.slope.as_array())))
                    angular = angular_error_deg(predicted, phantom.slope)
                    degenerate = bool(output.heatmap.degenerate[k])
                summary.samples.append(SampleMetrics(indices[start + k], float(np.atleast_1d(dice)[k]),
                                                     float(np.atleast_1d(iou)[k]), slope_mae, angular, degenerate))
        self.logger.debug(f'evaluated {len(summary.samples)} samples: dice {summary.eval_dice:.4f}')
        return summary

    def evaluate_manifest(self, manifest: Manifest, split=Split.Test, context=False, workers=None) -> EvalSummary:
        records = manifest.split(split)
        if not records:
            raise ContractError(f'manifest has no {Split(split).value} samples')
        phantoms = manifest.samples(records, workers)
        return self.evaluate(phantoms, [r.index for r in records], Split(split).value, context)

    @staticmethod
    def write(summary: EvalSummary, output_dir, prefix='eval'):
        os.makedirs(output_dir, exist_ok=True)
        write_csv(os.path.join(output_dir, f'{prefix}.csv'), EVAL_COLUMNS, [summary.row()])
        write_csv(os.path.join(output_dir, f'{prefix}_samples.csv'), SAMPLE_COLUMNS,
                  [s.to_dict() for s in summary.samples])
        atomic_write_text(os.path.join(output_dir, f'{prefix}.json'), json.dumps(summary.to_dict(), indent=2))
