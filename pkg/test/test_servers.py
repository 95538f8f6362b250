"""
@Date    : 2026-10-18
服务: metrics, checkpoints, training, ablation, gradient-check suites, scan benchmark
"""
import json
import math
import os

import numpy as np
import pytest

from implant_mamba.core.tensor import Tensor
from implant_mamba.net.config import ModelConfig, preset
from implant_mamba.net.implantnet import ImplantNet, param_count
from implant_mamba.net.losses import soft_dice
from implant_mamba.phantom.dataset import Manifest, make_dataset
from implant_mamba.phantom.phantom import generate
from implant_mamba.servers.ablation import ABLATION_GRID, AblationService, row_config
from implant_mamba.servers.bench import DEFAULT_L, ScanBenchService, loglog_slope
from implant_mamba.servers.checker import GradCheckService
from implant_mamba.servers.checkpoint import load_checkpoint, read_config, save_checkpoint
from implant_mamba.servers.evaluator import EvalService, EvalSummary, SampleMetrics, binary_dice, binary_iou
from implant_mamba.servers.trainer import TrainService, crop_seed
from implant_mamba.servers.config import RunConfig
from implant_mamba.util.exceptions import ContractError, GradCheckError, IntegrityError, NonFiniteLossError
from implant_mamba.util.utils import read_csv
from implant_mamba.util.variables import ABLATION_COLUMNS, BENCH_COLUMNS, EVAL_COLUMNS, METRICS_COLUMNS

SMALL = ModelConfig(base_channels=4, input_extent=16, scp_channels=4, attention_channels=2, d_state=4, scan_chunk=8)


def all_masks():
    """ the 256 binary 2x2x2 masks, flattened """
    return ((np.arange(256)[:, None] >> np.arange(8)) & 1).astype(bool)


def small_run(tmp_path, **changes):
    config = RunConfig(model=SMALL, epochs=3, batch=2, lr=1e-3, seed=1, output_dir=str(tmp_path / 'run'))
    return config.with_(**changes)


def test_metric_oracle_exhaustive():
    masks = all_masks()
    pred = np.broadcast_to(masks[:, None], (256, 256, 8))
    truth = np.broadcast_to(masks[None], (256, 256, 8))
    dice = binary_dice(pred, truth, axis=2)
    iou = binary_iou(pred, truth, axis=2)
    sets = [set(np.flatnonzero(m)) for m in masks]
    for i, a in enumerate(sets):
        for j, b in enumerate(sets):
            union = len(a | b)
            assert dice[i, j] == (1.0 if union == 0 else 2 * len(a & b) / (len(a) + len(b)))
            assert iou[i, j] == (1.0 if union == 0 else len(a & b) / union)


def test_dice_loss_matches_iou_relation():
    masks = all_masks().astype(np.float64)
    pred = np.repeat(masks, 256, axis=0)
    truth = np.tile(masks, (256, 1))
    iou = binary_iou(pred, truth, axis=1)
    dice = soft_dice(Tensor(pred), Tensor(truth), eps=1e-15, axis=1).data
    assert np.max(np.abs(dice - 2 * iou / (1 + iou))) <= 1e-12


def test_metric_examples():
    truth = np.array([1, 1, 0, 0], dtype=bool)
    assert binary_dice(truth, truth) == 1.0 and binary_iou(truth, truth) == 1.0
    pred = np.array([1, 0, 1, 0], dtype=bool)
    assert binary_dice(pred, truth) == 0.5
    assert binary_iou(pred, truth) == pytest.approx(1 / 3)
    with pytest.raises(ContractError):
        binary_dice(np.ones(3), np.ones(4))


def test_summary_skips_missing_slope_metrics():
    summary = EvalSummary('test', [SampleMetrics(0, 0.5, 0.25, float('nan'), float('nan'), False),
                                   SampleMetrics(1, 1.0, 1.0, float('nan'), float('nan'), True)])
    assert summary.eval_dice == 0.75 and summary.degenerate_sample_count == 1
    assert math.isnan(summary.eval_slope_mae)
    assert summary.to_dict()['eval_slope_mae'] is None


def test_evaluate_and_write(tmp_path):
    net = ImplantNet(SMALL)
    phantoms = [generate(seed, 16) for seed in (1, 2, 3)]
    summary = EvalService(net).evaluate(phantoms, [10, 11, 12])
    assert [s.index for s in summary.samples] == [10, 11, 12]
    assert all(0 <= s.dice <= 1 and 0 <= s.iou <= 1 for s in summary.samples)
    assert all(not math.isnan(s.slope_mae) for s in summary.samples)
    EvalService.write(summary, str(tmp_path), 'eval')
    rows = read_csv(str(tmp_path / 'eval.csv'))
    assert list(rows[0]) == list(EVAL_COLUMNS) and rows[0]['samples'] == '3'
    assert len(read_csv(str(tmp_path / 'eval_samples.csv'))) == 3
    with open(tmp_path / 'eval.json', encoding='utf8') as f:
        assert len(json.load(f)['per_sample']) == 3


def test_context_only_evaluation():
    net = ImplantNet(SMALL)
    manifest = make_dataset(4, 0, extent=16)
    summary = EvalService(net).evaluate_manifest(manifest, 'test', context=True)
    assert summary.split == 'test' and len(summary.samples) == len(manifest.split('test'))


def test_checkpoint_round_trip(tmp_path):
    net = ImplantNet(SMALL, seed=4)
    path = str(tmp_path / 'model.imtn')
    save_checkpoint(path, net)
    assert read_config(path) == SMALL
    loaded = load_checkpoint(path, expected=SMALL)
    for (name, a), (_, b) in zip(net.named_parameters(), loaded.named_parameters()):
        assert np.array_equal(a.data, b.data), name


def test_checkpoint_config_mismatch(tmp_path):
    path = str(tmp_path / 'model.imtn')
    save_checkpoint(path, ImplantNet(SMALL))
    with pytest.raises(IntegrityError) as info:
        load_checkpoint(path, expected=SMALL.with_(scp_enabled=False))
    assert 'scp_enabled' in str(info.value)
    os.remove(path + '.json')
    with pytest.raises(IntegrityError):
        read_config(path)


def test_run_config_json_round_trip(tmp_path):
    config = RunConfig(model=preset('gradcheck'), epochs=7, lr=3e-4, manifest='m.jsonl')
    path = str(tmp_path / 'run.json')
    config.save(path)
    loaded = RunConfig.load(path)
    assert loaded == config and isinstance(loaded.model, ModelConfig)


def test_run_config_validation():
    with pytest.raises(ContractError):
        RunConfig(lr=0.0)
    with pytest.raises(ContractError):
        RunConfig(crop=16)
    with pytest.raises(ContractError):
        RunConfig(warmup_frac=1.0)
    with pytest.raises(ContractError):
        RunConfig.from_dict({'epochs': 3, 'learning_rate': 0.1})


def test_crop_seeds_differ_per_epoch_and_sample():
    assert crop_seed(0, 1, 2) == crop_seed(0, 1, 2)
    assert len({crop_seed(0, e, i) for e in range(5) for i in range(5)}) == 25


def test_default_dataset_crops_move_between_epochs(tmp_path):
    manifest = make_dataset(4, 6)
    service = TrainService(RunConfig(seed=2, output_dir=str(tmp_path / 'run')), manifest)
    offsets = set()
    for epoch in range(3):
        crops = service.crops(epoch)
        assert {c.extent for c in crops} == {32}
        offsets.update(tuple(c.meta['crop_offset']) for c in crops)
    assert len(offsets) > 1


def test_first_ten_steps_are_deterministic(tmp_path):
    manifest = make_dataset(8, 5, extent=16)
    config = small_run(tmp_path)
    first = TrainService(config, manifest).run(max_steps=10, write=False)
    second = TrainService(config, manifest).run(max_steps=10, write=False)
    assert len(first.steps) == 10
    assert first.steps == second.steps
    assert json.dumps(first.rows) == json.dumps(second.rows)


def test_cropped_training_is_deterministic(tmp_path):
    manifest = make_dataset(4, 2, extent=48)
    config = small_run(tmp_path, epochs=2, model=SMALL.with_(input_extent=32))
    first = TrainService(config, manifest).run(write=False)
    second = TrainService(config, manifest).run(write=False)
    assert first.steps == second.steps


def test_training_writes_metrics_and_checkpoints(tmp_path):
    manifest = make_dataset(4, 3, extent=16)
    config = small_run(tmp_path, epochs=2)
    result = TrainService(config, manifest).run()
    out = tmp_path / 'run'
    rows = read_csv(str(out / 'metrics.csv'))
    assert list(rows[0]) == list(METRICS_COLUMNS) and len(rows) == 2
    assert os.path.exists(result.checkpoint) and os.path.exists(result.best_checkpoint)
    assert RunConfig.load(str(out / 'run_config.json')) == config
    assert load_checkpoint(result.checkpoint, expected=SMALL).param_count() == param_count(SMALL)
    assert 0 <= result.final['eval_dice'] <= 1


def test_learning_rate_follows_schedule(tmp_path):
    manifest = make_dataset(8, 5, extent=16)
    service = TrainService(small_run(tmp_path), manifest)
    result = service.run(write=False)
    assert service.total_steps == 12 and len(result.steps) == 12
    assert result.steps[0].lr == 0.0
    assert max(s.lr for s in result.steps) == pytest.approx(1e-3, rel=0.1)


def test_overfit_mode_evaluates_on_training_samples(tmp_path):
    manifest = make_dataset(8, 5, extent=16)
    service = TrainService(small_run(tmp_path, overfit=2), manifest)
    assert service.eval_records == service.train_records and len(service.train_records) == 2
    with pytest.raises(ContractError):
        TrainService(small_run(tmp_path, overfit=20), manifest)


def test_non_finite_loss_aborts(tmp_path):
    manifest = make_dataset(4, 3, extent=16)
    service = TrainService(small_run(tmp_path), manifest)
    service.net.head.bias.data[...] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        service.run(write=False)
    assert info.value.step == 0
    assert 'head.bias' in info.value.param_norms


def test_missing_manifest(tmp_path):
    with pytest.raises(ContractError):
        TrainService(small_run(tmp_path, manifest=str(tmp_path / 'missing.jsonl')))


def test_ablation_grid_rows():
    patterns = [(flags, scp) for flags, scp in ABLATION_GRID]
    assert len(patterns) == len(set(patterns)) == 9
    assert patterns[0] == ((False,) * 4, False)
    cumulative = [tuple(i < k for i in range(4)) for k in range(1, 5)]
    assert [p[0] for p in patterns[1:5]] == cumulative and not any(p[1] for p in patterns[:5])
    assert [p[0] for p in patterns[5:]] == cumulative and all(p[1] for p in patterns[5:])


def test_ablation_dry_run(tmp_path):
    base = RunConfig(output_dir=str(tmp_path / 'ablation'))
    rows = AblationService(base, Manifest()).run(dry_run=True)
    assert [r.row for r in rows] == list(range(1, 10))
    assert rows[0].params == param_count(preset('baseline'))
    assert rows[-1].params > rows[4].params
    table = read_csv(str(tmp_path / 'ablation' / 'ablation.csv'))
    assert list(table[0]) == list(ABLATION_COLUMNS) and len(table) == 9
    assert table[0]['dice'] == ''


def test_ablation_rows_share_the_seed(tmp_path):
    base = RunConfig(seed=17, output_dir=str(tmp_path))
    configs = [row_config(base, row) for row in range(1, 10)]
    assert {c.seed for c in configs} == {17}
    assert configs[8].model.mamba_enabled == (True,) * 4 and configs[8].model.scp_enabled
    assert configs[2].output_dir.endswith('row3')


def test_primitive_suite_passes():
    result = GradCheckService(seed=0).run(['primitives'])
    assert result.passed, [r.to_dict() for r in result.failures]
    assert len(result.reports) > 30


def test_unknown_suite():
    with pytest.raises(GradCheckError):
        GradCheckService().cases(['everything'])


def test_loglog_slope():
    lengths = [1024, 4096, 16384]
    assert loglog_slope(lengths, [2e-6 * L for L in lengths]) == pytest.approx(1.0)
    assert loglog_slope(lengths, [1e-9 * L * L for L in lengths]) == pytest.approx(2.0)


def test_bench_writes_csv(tmp_path):
    service = ScanBenchService(channels=4, chunk=16, min_time=0.0, repeats=1)
    report = service.run([64, 256], [4])
    assert len(report.rows) == 4 and set(report.slopes) == {'sequential', 'chunked'}
    path = str(tmp_path / 'bench.csv')
    service.write(report, path)
    rows = read_csv(path)
    assert list(rows[0]) == list(BENCH_COLUMNS) and len(rows) == 4
    with pytest.raises(ContractError):
        service.run([0], [4])
    with pytest.raises(ContractError):
        service.run([64], [4], ['parallel'])


@pytest.mark.slow
def test_bench_runtime_is_linear_in_length():
    report = ScanBenchService(threads=1).run(DEFAULT_L, [16])
    for variant, slope in report.slopes.items():
        assert 0.8 <= slope <= 1.2, (variant, slope)


@pytest.mark.slow
def test_overfit_smoke(tmp_path):
    manifest = make_dataset(8, 0, extent=32)
    config = RunConfig(model=preset('tiny'), epochs=300, batch=2, lr=2e-3, overfit=4, eval_every=25,
                       output_dir=str(tmp_path / 'overfit'))
    result = TrainService(config, manifest).run()
    assert result.final['eval_dice'] >= 0.90


@pytest.mark.slow
def test_full_ablation_runs(tmp_path):
    manifest = make_dataset(6, 0, extent=16)
    base = RunConfig(model=SMALL, epochs=1, batch=2, output_dir=str(tmp_path / 'ablation'))
    rows = AblationService(base, manifest).run(max_steps=2)
    assert len(rows) == 9 and all(0 <= r.dice <= 1 for r in rows)
