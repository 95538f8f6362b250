"""
模型 checkpoint: every named parameter in an IMTN container, the ModelConfig in a JSON sidecar.
"""
import json
import os
from typing import Optional

from ..net.config import ModelConfig
from ..net.implantnet import ImplantNet
from ..util import Log, container
from ..util.exceptions import ContractError, IntegrityError
from ..util.utils import atomic_write_text
from ..util.variables import LOG

log = Log.getLogger(LOG.Train.value)


def config_path(path):
    return str(path) + '.json'


def save_checkpoint(path, net: ImplantNet):
    container.save(path, net.state_dict())
    atomic_write_text(config_path(path), net.config.to_json())
    log.debug(f'checkpoint {path}: {net.param_count()} parameters')


def read_config(path) -> ModelConfig:
    sidecar = config_path(path)
    if not os.path.exists(sidecar):
        raise IntegrityError(f'{path}: config sidecar {sidecar} not found')
    try:
        return ModelConfig.load(sidecar)
    except (ValueError, TypeError, json.JSONDecodeError) as E:
        raise IntegrityError(f'{sidecar}: invalid model config: {E}') from E


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> ImplantNet:
    """ rebuild the network from its sidecar config; `expected` must match it when given """
    config = read_config(path)
    if expected is not None and expected != config:
        diff = sorted(k for k, v in expected.to_dict().items() if config.to_dict()[k] != v)
        raise IntegrityError(f'{path}: checkpoint config differs in {diff}')
    state = container.load(path)
    try:
        net = ImplantNet(config)
    except ContractError as E:
        raise IntegrityError(f'{path}: {E}') from E
    net.load_state_dict(state)
    return net
