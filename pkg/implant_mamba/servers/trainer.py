"""
训练: Adam with a cosine warmup schedule over a fixed sample order, random crops per sample per epoch,
ground-truth heatmaps for the first teacher_forcing_epochs epochs.
"""
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .evaluator import EvalService, EvalSummary
from ..core.optim import Adam, cosine_warmup_lr
from ..core.tensor import Graph, backward
from ..net.geometry import Endpoints
from ..net.implantnet import ImplantNet
from ..phantom.dataset import Manifest, sample_seed
from ..phantom.phantom import Phantom, random_crop
from ..ssm.kernels import configure_threads
from ..util import worker_count
from .config import RunConfig
from ..util.exceptions import ContractError, NonFiniteLossError
from ..util.utils import atomic_write_text, json_safe, write_csv
from ..util.variables import METRICS_COLUMNS, Split

CHECKPOINT_NAME = 'checkpoint.imtn'
BEST_CHECKPOINT_NAME = 'best.imtn'


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    dice_loss: float
    slope_loss: float
    total: float

    def to_dict(self):
        return dict(step=self.step, epoch=self.epoch, lr=self.lr, dice_loss=self.dice_loss,
                    slope_loss=self.slope_loss, total=self.total)


@dataclass
class TrainResult:
    rows: List[Dict] = field(default_factory=list)
    steps: List[StepRecord] = field(default_factory=list)
    checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None
    best_eval_dice: float = float('nan')

    @property
    def final(self) -> Dict:
        return self.rows[-1] if self.rows else {}


def crop_seed(run_seed, epoch, index):
    return sample_seed(sample_seed(run_seed, epoch), index)


class TrainService(object):
    def __init__(self, config: RunConfig, manifest: Optional[Manifest] = None, logger=None):
        self.logger = logger or logging.getLogger(__name__)
        self.config = config
        self.workers = worker_count(config.workers)
        configure_threads(self.workers)
        if manifest is None:
            if not config.manifest or not os.path.exists(config.manifest):
                raise ContractError(f'manifest {config.manifest!r} not found')
            manifest = Manifest.load(config.manifest)
        self.manifest = manifest
        self.net = ImplantNet(config.model, seed=config.seed)
        self.optimizer = Adam(self.net.parameters())
        self.evaluator = EvalService(self.net, batch=config.batch, logger=self.logger)

        train = manifest.split(Split.Train)
        if config.overfit:
            train = train[:config.overfit]
            if len(train) < config.overfit:
                raise ContractError(f'overfit needs {config.overfit} train samples, manifest has {len(train)}')
        if not train:
            raise ContractError('manifest has no train samples')
        self.train_records = train
        self.eval_records = train if config.overfit else manifest.split(Split.Test)
        self.train_samples = manifest.samples(train, self.workers)
        if config.overfit:
            self.eval_samples = self.train_samples
            extent = self.train_samples[0].extent
            if extent != config.crop_size:
                raise ContractError(f'overfit mode trains uncropped: sample extent {extent} != input extent '
                                    f'{config.crop_size}')
        else:
            self.eval_samples = manifest.samples(self.eval_records, self.workers)

        self.steps_per_epoch = math.ceil(len(train) / config.batch)
        self.total_steps = config.epochs * self.steps_per_epoch
        self.step = 0

    # ---- data
    def crops(self, epoch) -> List[Phantom]:
        """ one crop per training sample, in manifest order """
        if self.config.overfit:
            return list(self.train_samples)
        crop = self.config.crop_size

        def one(pair):
            record, phantom = pair
            return random_crop(phantom, crop, crop_seed(self.config.seed, epoch, record.index))

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(one, zip(self.train_records, self.train_samples)))

    def batches(self, samples: Sequence[Phantom]):
        batch = self.config.batch
        for start in range(0, len(samples), batch):
            yield samples[start:start + batch]

    # ---- optimization
    def param_norms(self):
        return {name: float(np.linalg.norm(param.data)) for name, param in self.net.named_parameters()}

    def train_step(self, batch: Sequence[Phantom], epoch: int) -> StepRecord:
        net, cfg = self.net, self.config
        dtype = net.parameters()[0].dtype
        volume = np.stack([p.volume for p in batch]).astype(dtype)
        mask = np.stack([p.mask for p in batch])[:, None].astype(dtype)
        slope = np.stack([p.slope.as_array() for p in batch]).astype(dtype)
        heatmap = None
        if cfg.model.scp_enabled and epoch < cfg.teacher_forcing_epochs:
            heatmap = net.teacher_heatmap([Endpoints(p.apex, p.base) for p in batch], volume.shape[2:])

        with Graph() as graph:
            output = net(volume, heatmap)
            report = net.loss(output, mask, slope)
            if not math.isfinite(report.total):
                raise NonFiniteLossError(self.step, self.param_norms())
            backward(report.tensor, graph)
        lr = cosine_warmup_lr(self.step, self.total_steps, cfg.lr, cfg.warmup_frac, cfg.min_lr_frac)
        self.optimizer.step(lr)
        self.optimizer.zero_grad()
        record = StepRecord(self.step, epoch, lr, report.dice_loss, report.slope_loss, report.total)
        self.logger.debug(f'step {self.step} lr {lr:.3e} dice {report.dice_loss:.5f} '
                          f'slope {report.slope_loss:.5f} total {report.total:.5f}')
        self.step += 1
        return record

    def evaluate(self) -> EvalSummary:
        split = Split.Train if self.config.overfit else Split.Test
        return self.evaluator.evaluate(self.eval_samples, [r.index for r in self.eval_records], split.value)

    # ---- run
    def run(self, max_steps: Optional[int] = None, write=True) -> TrainResult:
        """
        Train for config.epochs, or stop after max_steps optimization steps.
        :param write: persist metrics.csv / metrics.json / checkpoints under config.output_dir
        """
        cfg = self.config
        out_dir = cfg.output_dir
        if write:
            os.makedirs(out_dir, exist_ok=True)
            cfg.save(os.path.join(out_dir, 'run_config.json'))
        result = TrainResult()
        best = -math.inf
        for epoch in range(cfg.epochs):
            steps = []
            for batch in self.batches(self.crops(epoch)):
                steps.append(self.train_step(batch, epoch))
                if max_steps is not None and self.step >= max_steps:
                    break
            result.steps.extend(steps)
            row = dict(epoch=epoch,
                       dice_loss=float(np.mean([s.dice_loss for s in steps])),
                       slope_loss=float(np.mean([s.slope_loss for s in steps])),
                       total=float(np.mean([s.total for s in steps])))
            stop = max_steps is not None and self.step >= max_steps
            last = epoch == cfg.epochs - 1 or stop
            if (epoch + 1) % cfg.eval_every == 0 or last:
                summary = self.evaluate()
                row.update(eval_dice=summary.eval_dice, eval_iou=summary.eval_iou,
                           eval_slope_mae=summary.eval_slope_mae,
                           eval_angular_err_deg=summary.eval_angular_err_deg,
                           degenerate_sample_count=summary.degenerate_sample_count)
                if write and summary.eval_dice > best:
                    best = summary.eval_dice
                    result.best_eval_dice = best
                    result.best_checkpoint = os.path.join(out_dir, BEST_CHECKPOINT_NAME)
                    save_checkpoint(result.best_checkpoint, self.net)
            else:
                row.update(eval_dice=float('nan'), eval_iou=float('nan'), eval_slope_mae=float('nan'),
                           eval_angular_err_deg=float('nan'), degenerate_sample_count=0)
            result.rows.append(row)
            self.logger.info(f'epoch {epoch}: loss {row["total"]:.5f} (dice {row["dice_loss"]:.5f}, '
                             f'slope {row["slope_loss"]:.5f}) eval dice {row["eval_dice"]:.4f} '
                             f'iou {row["eval_iou"]:.4f} lr {steps[-1].lr:.3e}')
            if write:
                self.write_metrics(result.rows)
            if stop:
                break
        if write:
            result.checkpoint = os.path.join(out_dir, CHECKPOINT_NAME)
            save_checkpoint(result.checkpoint, self.net)
        return result

    def write_metrics(self, rows):
        out_dir = self.config.output_dir
        write_csv(os.path.join(out_dir, 'metrics.csv'), METRICS_COLUMNS, rows)
        atomic_write_text(os.path.join(out_dir, 'metrics.json'), json.dumps(json_safe(rows), indent=2))
