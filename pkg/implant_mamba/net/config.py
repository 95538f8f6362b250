from dataclasses import dataclass, replace
from typing import Tuple

from ..util.exceptions import ContractError
from ..util.utils import JsonDataclass
from ..util.variables import ScanOrder


@dataclass(frozen=True)
class ModelConfig(JsonDataclass):
    """
    Network hyperparameters. mamba_enabled and scp_enabled are the ablation axes;
    all four flags off with scp off is the pure-CNN baseline.
    """
    base_channels: int = 8
    mamba_enabled: Tuple[bool, bool, bool, bool] = (True, False, False, False)
    scp_enabled: bool = True
    scp_channels: int = 16
    heatmap_sigma: float = 2.0
    lambda_slope: float = 1.0
    input_extent: int = 32
    threshold: float = 0.5
    attention_channels: int = 8
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    scan_order: str = ScanOrder.RasterDHW.value
    bidirectional_scan: bool = False
    scan_chunk: int = 64
    dice_eps: float = 1e-5
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, 'mamba_enabled', tuple(bool(v) for v in self.mamba_enabled))
        self.validate()

    def validate(self):
        if self.base_channels < 4:
            raise ContractError(f'base_channels must be >= 4, got {self.base_channels}')
        if self.input_extent < 16 or self.input_extent % 16:
            raise ContractError(f'input_extent must be a positive multiple of 16, got {self.input_extent}')
        if len(self.mamba_enabled) != 4:
            raise ContractError(f'mamba_enabled needs 4 flags, got {len(self.mamba_enabled)}')
        if self.scp_channels < 1 or self.attention_channels < 1:
            raise ContractError('scp_channels and attention_channels must be positive')
        if self.heatmap_sigma <= 0:
            raise ContractError(f'heatmap_sigma must be positive, got {self.heatmap_sigma}')
        if self.lambda_slope < 0:
            raise ContractError(f'lambda_slope must be >= 0, got {self.lambda_slope}')
        if not 0 < self.threshold < 1:
            raise ContractError(f'threshold must lie in (0, 1), got {self.threshold}')
        if self.scan_chunk < 1:
            raise ContractError(f'scan_chunk must be positive, got {self.scan_chunk}')
        try:
            ScanOrder(self.scan_order)
        except ValueError:
            raise ContractError(f'unknown scan order {self.scan_order!r}')

    @property
    def widths(self):
        return tuple(self.base_channels * m for m in (1, 2, 4, 8))

    def with_(self, **changes) -> 'ModelConfig':
        return replace(self, **changes)


PRESETS = {
    'tiny': ModelConfig(),
    'gradcheck': ModelConfig(base_channels=4, input_extent=16, scp_channels=4, attention_channels=2,
                             d_state=4, heatmap_sigma=1.0, scan_chunk=3),
    'full': ModelConfig(base_channels=40, input_extent=128, scp_channels=64),
    'baseline': ModelConfig(mamba_enabled=(False, False, False, False), scp_enabled=False),
}


def preset(name) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ContractError(f'unknown preset {name!r}, expected one of {sorted(PRESETS)}')
