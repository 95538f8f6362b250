from dataclasses import dataclass, field, replace
from typing import Optional

from ..util.exceptions import ContractError
from ..util.utils import JsonDataclass
from ..net.config import ModelConfig


@dataclass(frozen=True)
class RunConfig(JsonDataclass):
    """ one training run; the JSON form mirrors the field names """
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 50
    batch: int = 2
    lr: float = 1e-4
    warmup_frac: float = 0.1
    min_lr_frac: float = 0.01
    seed: int = 0
    manifest: str = ''
    output_dir: str = 'runs/default'
    crop: Optional[int] = None
    teacher_forcing_epochs: int = 5
    overfit: int = 0
    eval_every: int = 1
    workers: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.lr > 0:
            raise ContractError(f'lr must be positive, got {self.lr}')
        if not 0 <= self.warmup_frac < 1:
            raise ContractError(f'warmup_frac must lie in [0, 1), got {self.warmup_frac}')
        if not 0 <= self.min_lr_frac <= 1:
            raise ContractError(f'min_lr_frac must lie in [0, 1], got {self.min_lr_frac}')
        if self.epochs < 1 or self.batch < 1 or self.eval_every < 1:
            raise ContractError('epochs, batch and eval_every must be positive')
        if self.overfit < 0 or self.teacher_forcing_epochs < 0:
            raise ContractError('overfit and teacher_forcing_epochs must be >= 0')
        crop = self.crop_size
        if crop % 16 or crop != self.model.input_extent:
            raise ContractError(f'crop {crop} must equal the model input extent {self.model.input_extent}')

    @property
    def crop_size(self):
        return self.crop if self.crop is not None else self.model.input_extent

    @classmethod
    def _convert(cls, name, value):
        if name == 'model' and isinstance(value, dict):
            return ModelConfig.from_dict(value)
        return value

    def with_(self, **changes) -> 'RunConfig':
        return replace(self, **changes)
