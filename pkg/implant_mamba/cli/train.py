import click

from .base import HarnessBase
from .cli import Command, print_json
from ..phantom.dataset import Manifest
from ..servers.ablation import AblationService
from ..servers.checkpoint import load_checkpoint, read_config
from ..servers.evaluator import EvalService
from ..servers.trainer import TrainService
from ..util import Log
from ..servers.config import RunConfig
from ..util.variables import LOG, METRICS_COLUMNS, Split

log = Log.getLogger(LOG.Train.value)

PRESETS = click.Choice(['tiny', 'gradcheck', 'full', 'baseline'])


def run_options(f):
    options = [
        click.option('--config', 'config_path', type=click.Path(exists=True), default=None,
                     help='JSON file mirroring the RunConfig fields'),
        click.option('--preset', 'preset_name', type=PRESETS, default=None, help='model preset'),
        click.option('--manifest', default=None, help='dataset manifest (JSON lines)'),
        click.option('--output-dir', default=None, help='directory for metrics and checkpoints'),
        click.option('--epochs', type=int, default=None),
        click.option('--batch', type=int, default=None),
        click.option('--lr', type=float, default=None),
        click.option('--max-steps', type=int, default=None, help='stop after this many optimization steps'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


@click.group()
def cli():
    """ training cli """


@cli.command('train', cls=Command, epilog=f'metrics.csv columns: {", ".join(METRICS_COLUMNS)}')
@run_options
@click.option('--overfit', type=int, default=None, help='train and evaluate on the first N train samples, uncropped')
@click.option('--teacher-forcing-epochs', type=int, default=None,
              help='epochs that use ground-truth heatmaps for the slope branch')
def train(seed, threads, format, config_path, preset_name, manifest, output_dir, epochs, batch, lr, max_steps,
          overfit, teacher_forcing_epochs):
    """ 训练 ImplantNet; writes metrics.csv, metrics.json, checkpoint.imtn and best.imtn """
    with HarnessBase(config_path, preset_name, threads, seed, manifest=manifest, output_dir=output_dir,
                     epochs=epochs, batch=batch, lr=lr, overfit=overfit,
                     teacher_forcing_epochs=teacher_forcing_epochs) as harness:
        result = TrainService(harness.config, harness.manifest(), logger=log).run(max_steps=max_steps)
        print_json(dict(result.final, checkpoint=result.checkpoint, best_checkpoint=result.best_checkpoint,
                        steps=len(result.steps)), format)


@cli.command('eval', cls=Command)
@click.option('--checkpoint', required=True, type=click.Path(exists=True))
@click.option('--manifest', required=True, type=click.Path(exists=True))
@click.option('--split', type=click.Choice([s.value for s in Split]), default=Split.Test.value, show_default=True)
@click.option('--output-dir', default='.', show_default=True)
@click.option('--config', 'config_path', type=click.Path(exists=True), default=None,
              help='RunConfig whose model section must match the checkpoint')
@click.option('--context-only', is_flag=True, help='zero every voxel outside the gap neighbourhood first')
def evaluate(seed, threads, format, checkpoint, manifest, split, output_dir, config_path, context_only):
    """ 评估 a checkpoint: mean Dice, IoU, slope MAE and angular error over a split """
    expected = RunConfig.load(config_path).model if config_path else None
    with HarnessBase(threads=threads, seed=seed) as harness:
        net = load_checkpoint(checkpoint, expected)
        service = EvalService(net, logger=log)
        summary = service.evaluate_manifest(Manifest.load(manifest), split, context_only, harness.threads)
        prefix = 'eval_context' if context_only else 'eval'
        service.write(summary, output_dir, prefix)
        print_json(summary.row(), format)


@cli.command('ablate', cls=Command)
@run_options
@click.option('--dry-run', is_flag=True, help='only count parameters per row')
def ablate(seed, threads, format, config_path, preset_name, manifest, output_dir, epochs, batch, lr, max_steps,
           dry_run):
    """ 消融: the nine Conv-Mamba placement x SCP rows; writes ablation.csv """
    with HarnessBase(config_path, preset_name, threads, seed, manifest=manifest, output_dir=output_dir,
                     epochs=epochs, batch=batch, lr=lr) as harness:
        dataset = harness.manifest() if not dry_run else Manifest()
        rows = AblationService(harness.config, dataset, logger=log).run(dry_run=dry_run, max_steps=max_steps)
        print_json(dict(rows=[r.to_dict() for r in rows]) if format == 'json'
                   else '\n'.join(str(r.to_dict()) for r in rows), format)


@cli.command('config', cls=Command)
@click.option('--preset', 'preset_name', type=PRESETS, default=None)
@click.option('--checkpoint', type=click.Path(exists=True), default=None, help='print the config of a checkpoint')
def show_config(seed, threads, format, preset_name, checkpoint):
    """ print a RunConfig (or a checkpoint's ModelConfig) as JSON """
    if checkpoint:
        print_json(read_config(checkpoint).to_dict(), 'json')
        return
    with HarnessBase(preset_name=preset_name, threads=threads, seed=seed) as harness:
        print_json(harness.config.to_dict(), 'json')
