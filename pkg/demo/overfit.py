"""
小样本过拟合: trains the tiny preset on four phantoms and prints Dice every few epochs
"""
import os
import sys
sys.path.append(os.getcwd())

from implant_mamba.net.config import preset
from implant_mamba.phantom.dataset import make_dataset
from implant_mamba.servers.trainer import TrainService
from implant_mamba.util import Log
from implant_mamba.servers.config import RunConfig
from implant_mamba.util.variables import LOG

log = Log.getLogger(LOG.Train.value)


def overfit(output_dir='runs/overfit', samples=4, epochs=300):
    manifest = make_dataset(max(samples * 2, 8), master_seed=0, extent=32)
    config = RunConfig(model=preset('tiny'), epochs=epochs, batch=2, lr=2e-3, overfit=samples, eval_every=25,
                       output_dir=output_dir)
    result = TrainService(config, manifest, logger=log).run()
    print(result.final)


if __name__ == '__main__':
    overfit()
