"""
@Date    : 2026-10-18
命令行: exit codes and output files of every subcommand
"""
import json
import os

from click.testing import CliRunner

from implant_mamba.main import commands
from implant_mamba.net.config import ModelConfig, preset
from implant_mamba.net.implantnet import ImplantNet, param_count
from implant_mamba.phantom.dataset import Manifest, make_dataset
from implant_mamba.servers.checkpoint import save_checkpoint
from implant_mamba.ssm import selective_scan as scan
from implant_mamba.servers.config import RunConfig
from implant_mamba.util.utils import read_csv
from implant_mamba.util.variables import ABLATION_COLUMNS, BENCH_COLUMNS, ErrorCode, METRICS_COLUMNS

SMALL = ModelConfig(base_channels=4, input_extent=16, scp_channels=4, attention_channels=2, d_state=4, scan_chunk=8)


def invoke(*args):
    return CliRunner().invoke(commands, [str(a) for a in args], catch_exceptions=False)


def test_generate_manifest(tmp_path):
    out = tmp_path / 'manifest.jsonl'
    result = invoke('generate', '-n', 100, '--out', out, '--seed', 3, '--format', 'json')
    assert result.exit_code == 0
    summary = json.loads(result.output)
    assert (summary['train'], summary['test'], summary['master_seed']) == (84, 16, 3)
    assert len(Manifest.load(str(out))) == 100
    assert summary['extent'] == 48
    assert {r.params['extent'] for r in Manifest.load(str(out)).records} == {48}


def test_generate_export(tmp_path):
    out, export = tmp_path / 'manifest.jsonl', tmp_path / 'volumes'
    result = invoke('generate', '-n', 3, '--extent', 16, '--out', out, '--export', export)
    assert result.exit_code == 0
    names = sorted(os.listdir(export))
    assert 'train_00000.imtn' in names and 'test_00002.imtn.json' in names


def test_generate_rejects_bad_extent(tmp_path):
    result = invoke('generate', '-n', 4, '--extent', 20, '--out', tmp_path / 'm.jsonl')
    assert result.exit_code == ErrorCode.CONTRACT


def test_train_without_manifest(tmp_path):
    result = invoke('train', '--manifest', tmp_path / 'missing.jsonl', '--output-dir', tmp_path / 'run')
    assert result.exit_code == ErrorCode.CONTRACT == 10


def test_train_and_eval(tmp_path):
    manifest = str(tmp_path / 'manifest.jsonl')
    make_dataset(4, 0, extent=16).save(manifest)
    config = str(tmp_path / 'run.json')
    RunConfig(model=SMALL).save(config)
    run = tmp_path / 'run'
    result = invoke('train', '--config', config, '--manifest', manifest, '--output-dir', run, '--epochs', 1,
                    '--lr', 1e-3, '--max-steps', 2, '--format', 'json')
    assert result.exit_code == 0
    assert json.loads(result.output)['steps'] == 2
    assert list(read_csv(str(run / 'metrics.csv'))[0]) == list(METRICS_COLUMNS)

    result = invoke('eval', '--checkpoint', run / 'checkpoint.imtn', '--manifest', manifest,
                    '--output-dir', tmp_path / 'eval', '--config', config, '--format', 'json')
    assert result.exit_code == 0
    assert json.loads(result.output)['split'] == 'test'
    assert os.path.exists(tmp_path / 'eval' / 'eval.csv')


def test_eval_config_mismatch(tmp_path):
    manifest = str(tmp_path / 'manifest.jsonl')
    make_dataset(4, 0, extent=16).save(manifest)
    checkpoint = str(tmp_path / 'model.imtn')
    save_checkpoint(checkpoint, ImplantNet(SMALL))
    config = str(tmp_path / 'other.json')
    RunConfig(model=SMALL.with_(d_state=8)).save(config)
    result = invoke('eval', '--checkpoint', checkpoint, '--manifest', manifest, '--config', config,
                    '--output-dir', tmp_path)
    assert result.exit_code == ErrorCode.INTEGRITY


def test_param_count(tmp_path):
    result = invoke('param-count', '--preset', 'baseline', '--format', 'json')
    assert result.exit_code == 0
    parts = json.loads(result.output)
    assert parts['total'] == param_count(preset('baseline')) and parts['mamba'] == 0 and parts['scp'] == 0


def test_show_config():
    result = invoke('config', '--preset', 'gradcheck')
    assert result.exit_code == 0
    assert json.loads(result.output)['model']['input_extent'] == 16


def test_ablate_dry_run(tmp_path):
    result = invoke('ablate', '--dry-run', '--output-dir', tmp_path / 'ablation')
    assert result.exit_code == 0
    table = read_csv(str(tmp_path / 'ablation' / 'ablation.csv'))
    assert list(table[0]) == list(ABLATION_COLUMNS)
    assert [(r['layer1'], r['scp']) for r in table] == [('False', 'False')] + [('True', 'False')] * 4 + \
        [('True', 'True')] * 4


def test_gradcheck_scan_suite():
    result = invoke('gradcheck', '--suite', 'scan')
    assert result.exit_code == 0
    assert 'selective_scan_chunk3' in result.output


def test_gradcheck_exit_code_on_failure(monkeypatch):
    original = scan.scan_backward_arrays

    def flipped(arrays, h0, chunk, y_grad):
        grads = original(arrays, h0, chunk, y_grad)
        return grads._replace(Bmat=-grads.Bmat)

    monkeypatch.setattr(scan, 'scan_backward_arrays', flipped)
    result = invoke('gradcheck', '--suite', 'scan', '--format', 'json')
    assert result.exit_code == ErrorCode.GRADCHECK


def test_bench_scan(tmp_path):
    out = tmp_path / 'bench.csv'
    result = invoke('bench-scan', '--L', 64, '--L', 128, '--N', 4, '--channels', 4, '--chunk', 16, '--out', out)
    assert result.exit_code == 0
    assert 'log-log slope' in result.output
    rows = read_csv(str(out))
    assert list(rows[0]) == list(BENCH_COLUMNS) and len(rows) == 4


def test_help_lists_metrics_columns():
    result = invoke('train', '--help')
    assert result.exit_code == 0
    assert 'eval_angular_err_deg' in result.output
