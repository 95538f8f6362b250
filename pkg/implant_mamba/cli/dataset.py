import os

import click

from .base import HarnessBase
from .cli import Command, print_json
from ..phantom.dataset import make_dataset
from ..phantom.io import export_volume
from ..phantom.phantom import PhantomParams
from ..util import Log
from ..util.variables import DATASET_EXTENT, LOG, REFERENCE_SPLIT, Split

log = Log.getLogger(LOG.Cli.value)


@click.group()
def cli():
    """ dataset cli """


@cli.command('generate', cls=Command)
@click.option('-n', '--count', type=int, default=100, show_default=True, help='number of phantoms')
@click.option('--extent', type=int, default=DATASET_EXTENT, show_default=True, help='cube side, multiple of 16')
@click.option('--out', 'out', default='manifest.jsonl', show_default=True, help='manifest path (JSON lines)')
@click.option('--train-fraction', type=float, default=None,
              help='train share of the split (default: the 1369 / 253 reference ratio)')
@click.option('--params', 'params_path', default=None, type=click.Path(exists=True),
              help='JSON file with PhantomParams fields')
@click.option('--export', 'export_dir', default=None, help='also write every phantom as volume + sidecar here')
def generate(seed, threads, format, count, extent, out, train_fraction, params_path, export_dir):
    """
    生成合成数据集
    Write a manifest of seeded phantoms; samples are regenerated from it on demand.
    """
    with HarnessBase(threads=threads, seed=seed) as harness:
        params = PhantomParams.load(params_path) if params_path else PhantomParams()
        split = REFERENCE_SPLIT if train_fraction is None else (train_fraction, 1 - train_fraction)
        manifest = make_dataset(count, harness.config.seed, split, extent, params)
        manifest.save(out)
        summary = dict(manifest=out, samples=len(manifest), train=len(manifest.split(Split.Train)),
                       test=len(manifest.split(Split.Test)), extent=extent, master_seed=harness.config.seed)
        if export_dir:
            os.makedirs(export_dir, exist_ok=True)
            for record, phantom in zip(manifest.records, manifest.samples(manifest.records, harness.threads)):
                export_volume(phantom, os.path.join(export_dir, f'{record.split}_{record.index:05d}.imtn'))
            summary['exported'] = export_dir
            log.info(f'exported {len(manifest)} phantoms to {export_dir}')
        print_json(summary, format)
