import click

from .base import HarnessBase
from .cli import Command, print_json
from ..net.implantnet import param_breakdown
from ..servers.bench import DEFAULT_L, VARIANTS, ScanBenchService
from ..servers.checker import SUITES, GradCheckService
from ..util import Log
from ..util.exceptions import GradCheckError
from ..util.variables import BENCH_COLUMNS, LOG

log = Log.getLogger(LOG.Check.value)


@click.group()
def cli():
    """ verification cli """


@cli.command('gradcheck', cls=Command)
@click.option('--suite', 'suites', multiple=True, type=click.Choice(SUITES), help='default: every suite')
@click.option('--tol', type=float, default=1e-4, show_default=True, help='relative error bound')
def gradcheck(seed, threads, format, suites, tol):
    """ 梯度检查 of every primitive, the scan, the Mamba layer and the 16^3 network (f64) """
    with HarnessBase(threads=threads, seed=seed) as harness:
        service = GradCheckService(seed=harness.config.seed, tol=tol, logger=log)
        result = service.run(suites or SUITES)
        if format == 'json':
            print_json(result.to_dict(), format)
        else:
            for report in result.reports:
                print(f'{report.name:<28} {report.max_rel_err:.2e}  {"ok" if report.passed else "FAILED"}')
            print(f'{len(result.reports)} checks in {result.seconds:.1f}s')
        if not result.passed:
            names = ', '.join(r.name for r in result.failures)
            raise GradCheckError(f'{len(result.failures)} gradient checks failed: {names}')


@cli.command('param-count', cls=Command)
@click.option('--preset', 'preset_name', type=click.Choice(['tiny', 'gradcheck', 'full', 'baseline']),
              default='tiny', show_default=True)
@click.option('--config', 'config_path', type=click.Path(exists=True), default=None)
def param_count(seed, threads, format, preset_name, config_path):
    """ trainable parameters per part (encoder / mamba / decoder / scp) and in total """
    with HarnessBase(config_path, None if config_path else preset_name, threads, seed) as harness:
        parts = param_breakdown(harness.config.model)
        print_json(dict(parts, total=sum(parts.values())), format)


@cli.command('bench-scan', cls=Command, epilog=f'CSV columns: {", ".join(BENCH_COLUMNS)}')
@click.option('--L', 'lengths', type=int, multiple=True, help=f'sequence lengths (default {list(DEFAULT_L)})')
@click.option('--N', 'states', type=int, multiple=True, help='state sizes (default 16)')
@click.option('--variant', 'variants', type=click.Choice(VARIANTS), multiple=True)
@click.option('--channels', type=int, default=16, show_default=True)
@click.option('--chunk', type=int, default=64, show_default=True)
@click.option('--out', default='bench_scan.csv', show_default=True)
def bench_scan(seed, threads, format, lengths, states, variants, channels, chunk, out):
    """ 性能测试: scan throughput and the log-log slope of runtime against L """
    with HarnessBase(threads=threads, seed=seed) as harness:
        service = ScanBenchService(channels=channels, chunk=chunk, seed=harness.config.seed, threads=harness.threads,
                                   logger=log)
        report = service.run(lengths or DEFAULT_L, states or (16,), variants or VARIANTS)
        service.write(report, out)
        if format == 'json':
            print_json(report.to_dict(), format)
        else:
            for variant, slope in report.slopes.items():
                print(f'{variant}: log-log slope {slope:.3f}')
