"""
消融实验: Conv-Mamba block placement (layers 1..4, cumulative) x SCP, nine rows.
"""
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .trainer import TrainService
from ..net.implantnet import param_count
from ..phantom.dataset import Manifest
from .config import RunConfig
from ..util.utils import write_csv
from ..util.variables import ABLATION_COLUMNS

# (mamba on layers 1..4, scp)
ABLATION_GRID: Tuple[Tuple[Tuple[bool, bool, bool, bool], bool], ...] = (
    ((False, False, False, False), False),
    ((True, False, False, False), False),
    ((True, True, False, False), False),
    ((True, True, True, False), False),
    ((True, True, True, True), False),
    ((True, False, False, False), True),
    ((True, True, False, False), True),
    ((True, True, True, False), True),
    ((True, True, True, True), True),
)


@dataclass
class AblationRow:
    row: int
    mamba_enabled: Tuple[bool, bool, bool, bool]
    scp: bool
    dice: float
    iou: float
    params: int

    def to_dict(self):
        layers = {f'layer{i + 1}': flag for i, flag in enumerate(self.mamba_enabled)}
        return dict(row=self.row, **layers, scp=self.scp, dice=self.dice, iou=self.iou, params=self.params)


def row_config(base: RunConfig, row: int) -> RunConfig:
    """ row is 1-based; every row shares the base seed """
    flags, scp = ABLATION_GRID[row - 1]
    return base.with_(model=base.model.with_(mamba_enabled=flags, scp_enabled=scp),
                      output_dir=os.path.join(base.output_dir, f'row{row}'))


class AblationService(object):
    def __init__(self, base: RunConfig, manifest: Optional[Manifest] = None, logger=None):
        self.logger = logger or logging.getLogger(__name__)
        self.base = base
        self.manifest = manifest if manifest is not None else Manifest.load(base.manifest)

    def configs(self) -> List[RunConfig]:
        return [row_config(self.base, row) for row in range(1, len(ABLATION_GRID) + 1)]

    def run(self, dry_run=False, max_steps=None) -> List[AblationRow]:
        """ dry_run only counts parameters; dice / iou are then NaN """
        rows = []
        for index, config in enumerate(self.configs(), 1):
            dice = iou = float('nan')
            if not dry_run:
                service = TrainService(config, self.manifest, logger=self.logger)
                result = service.run(max_steps=max_steps)
                dice, iou = result.final['eval_dice'], result.final['eval_iou']
            row = AblationRow(index, config.model.mamba_enabled, config.model.scp_enabled, dice, iou,
                              param_count(config.model))
            self.logger.info(f'ablation row {index}: mamba {row.mamba_enabled} scp {row.scp} '
                             f'dice {dice:.4f} iou {iou:.4f} params {row.params}')
            rows.append(row)
        os.makedirs(self.base.output_dir, exist_ok=True)
        write_csv(os.path.join(self.base.output_dir, 'ablation.csv'), ABLATION_COLUMNS, [r.to_dict() for r in rows])
        return rows
