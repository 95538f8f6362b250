import os
import time
from typing import Optional

from ..net.config import preset
from ..phantom.dataset import Manifest
from ..ssm.kernels import configure_threads
from ..util import Log, worker_count
from ..servers.config import RunConfig
from ..util.exceptions import ContractError
from ..util.variables import LOG

log = Log.getLogger(LOG.Cli.value)


class HarnessBase:
    """
    Resolves the RunConfig of one command: JSON config file first, then the preset, then CLI overrides.
    Used as a context manager around the command body.
    """

    def __init__(self, config_path: Optional[str] = None, preset_name: Optional[str] = None, threads=None,
                 seed=None, model_overrides=None, **overrides):
        config = RunConfig.load(config_path) if config_path else RunConfig()
        model = preset(preset_name) if preset_name else config.model
        if model_overrides:
            model = model.with_(**{k: v for k, v in model_overrides.items() if v is not None})
        changes = {k: v for k, v in overrides.items() if v is not None}
        if seed is not None:
            changes['seed'] = seed
        if threads is not None:
            changes['workers'] = threads
        self.config: RunConfig = config.with_(model=model, **changes)
        self.threads = worker_count(self.config.workers)
        self.started = None

    def __enter__(self):
        configure_threads(self.threads)
        self.started = time.perf_counter()
        log.debug(f'run config: {self.config.to_json(indent=None)}')
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        elapsed = time.perf_counter() - self.started
        if exc_type is None:
            log.debug(f'finished in {elapsed:.1f}s')
        else:
            log.debug(f'aborted after {elapsed:.1f}s: {exc_val}')

    def manifest(self) -> Manifest:
        path = self.config.manifest
        if not path or not os.path.exists(path):
            raise ContractError(f'manifest {path!r} not found')
        return Manifest.load(path)

    @property
    def output_dir(self):
        os.makedirs(self.config.output_dir, exist_ok=True)
        return self.config.output_dir
