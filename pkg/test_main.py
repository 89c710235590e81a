"""
Tests for the experiment pipeline and the command-line entry point
"""
import csv
import dataclasses
import json
import math

import pytest

import main
from config import DIRS, EXPERIMENT_CONFIG
from logger import ExperimentError, OracleSizeError, ValidationError
from main import (
    ExperimentSpec, aggregate_rows, allocation_diagnostics, apply_sweep, emit_results, parse_sweep,
    realization_seeds, run_experiment, sweep_summary
)
from scenario import NetworkConfig, load_config

TINY = DIRS['configs'] / 'tiny.yaml'


def result_row(value, mode, realization, r_avg):
    row = dict.fromkeys(EXPERIMENT_CONFIG['result_columns'])
    row.update({'sweep_value': value, 'mode': mode, 'realization': realization,
                'r_avg_bps': r_avg, 'r_sum_bps': 4 * r_avg})
    return row


def test_parse_sweep():
    assert parse_sweep('d_dd_m=10,20,30') == ('d_dd_m', [10.0, 20.0, 30.0])
    assert parse_sweep('xi = 0, 0.25,') == ('xi', [0.0, 0.25])
    for bad in ('d_dd_m', 'd_dd_m=', 'height=1,2', 'xi=a,b'):
        with pytest.raises(ExperimentError):
            parse_sweep(bad)


def test_apply_sweep():
    cfg = NetworkConfig(num_relays=2, num_cues=2, num_d2d_pairs=2, rb_count=4)
    assert apply_sweep(cfg, None, None) is cfg
    assert apply_sweep(cfg, 'xi', 0.25).xi == (0.25, 0.25, 0.25, 0.25)
    assert apply_sweep(cfg, 'd_dd_m', 30).d_dd_m == 30.0

    grown = apply_sweep(cfg, 'num_ues', 8)
    assert (grown.num_cues, grown.num_d2d_pairs) == (4, 4)

    with pytest.raises(ValidationError):
        apply_sweep(cfg, 'num_ues', 7.5)
    with pytest.raises(ValidationError):
        apply_sweep(cfg, 'd_dd_m', 700.0)


def test_spec_validation():
    cfg = load_config(TINY)
    with pytest.raises(ExperimentError):
        ExperimentSpec(config=cfg, modes=['reference'])
    with pytest.raises(ExperimentError):
        ExperimentSpec(config=cfg, modes=['proposed', 'magic'])
    with pytest.raises(ExperimentError):
        ExperimentSpec(config=cfg, fmt='xlsx')
    with pytest.raises(ExperimentError):
        ExperimentSpec(config=cfg, sweep_axis='height')

    spec = ExperimentSpec(config=cfg, realizations=2)
    assert spec.realization_count == 2
    assert spec.base_seed == 7
    assert spec.values == [None]


def test_realization_seeds():
    assert realization_seeds(0, 3) == realization_seeds(0, 3)
    assert realization_seeds(0, 3) != realization_seeds(0, 4)
    assert realization_seeds(0, 3) != realization_seeds(1, 3)
    topology_seed, channel_seed = realization_seeds(5, 0)
    assert topology_seed != channel_seed


def test_emit_empty_csv_is_header_only(tmp_path):
    path = emit_results([], tmp_path / 'empty.csv')
    assert path.read_text(encoding='utf-8').strip() == ','.join(EXPERIMENT_CONFIG['result_columns'])


def test_emit_csv_and_json(tmp_path):
    row = result_row(30.0, 'proposed', 0, 1.5e5)
    row['rate_gain_pct'] = math.inf

    with open(emit_results([row], tmp_path / 'one.csv'), newline='', encoding='utf-8') as f:
        lines = list(csv.DictReader(f))
    assert len(lines) == 1
    assert lines[0]['mode'] == 'proposed'
    assert lines[0]['efficiency'] == ''

    document = json.loads(emit_results([row], tmp_path / 'one.json', 'json').read_text(encoding='utf-8'))
    assert list(document[0]) == EXPERIMENT_CONFIG['result_columns']
    assert document[0]['r_avg_bps'] == 1.5e5
    assert document[0]['rate_gain_pct'] is None


def test_emit_unwritable_path(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('x', encoding='utf-8')
    with pytest.raises(ExperimentError):
        emit_results([], blocker / 'results.csv')


def test_aggregate_rows():
    rows = [result_row(10.0, 'proposed', r, v) for r, v in enumerate((1.0, 3.0))]
    mean, std = aggregate_rows(rows)
    assert (mean['realization'], mean['r_avg_bps']) == ('mean', 2.0)
    assert (std['realization'], std['r_avg_bps']) == ('std', 1.0)
    assert mean['efficiency'] is None


def test_sweep_summary_crossover():
    gains = {10.0: (0.8, 1.0), 30.0: (0.9, 1.0), 50.0: (1.2, 1.0), 70.0: (1.5, 1.0)}
    rows = []
    for value, (prop, ref) in gains.items():
        rows += [result_row(value, 'proposed', 0, prop), result_row(value, 'reference', 0, ref)]
    rows += aggregate_rows(rows)

    summary = sweep_summary(rows)
    assert summary['crossover'] == 50.0
    assert [e['sweep_value'] for e in summary['rows']] == [10.0, 30.0, 50.0, 70.0]
    assert summary['rows'][0]['rate_gain_pct'] == pytest.approx(-20.0)

    positive = [result_row(v, m, 0, 2.0 if m == 'proposed' else 1.0)
                for v in (10.0, 20.0) for m in ('proposed', 'reference')]
    assert sweep_summary(positive)['crossover'] == 10.0


def test_sweep_summary_uses_d2d_rates():
    # CUE rates lift the proposed all-UE average, but the D2D UEs lost rate
    rows = [result_row(10.0, 'proposed', 0, 5.0), result_row(10.0, 'reference', 0, 4.0)]
    rows[0]['r_d2d_avg_bps'] = 1.0
    rows[1]['r_d2d_avg_bps'] = 2.0
    entry = sweep_summary(rows)['rows'][0]
    assert (entry['r_d2d_proposed'], entry['r_d2d_reference']) == (1.0, 2.0)
    assert entry['rate_gain_pct'] == pytest.approx(-50.0)
    assert sweep_summary(rows)['crossover'] is None


def test_sweep_summary_edge_cases():
    with pytest.raises(ExperimentError):
        sweep_summary([result_row(10.0, 'proposed', 0, 1.0)])

    rows = [result_row(10.0, 'proposed', 0, 1.0), result_row(10.0, 'reference', 0, 0.0),
            result_row(10.0, 'oracle', 0, 2.0)]
    entry = sweep_summary(rows)['rows'][0]
    assert entry['rate_gain_pct'] == math.inf
    assert entry['efficiency'] == 0.5


def test_tiny_run_is_reproducible(tmp_path):
    cfg = load_config(TINY)
    files = []
    for name in ('first.csv', 'second.csv'):
        spec = ExperimentSpec(config=cfg, modes=['proposed', 'reference', 'oracle'], realizations=1,
                              out=tmp_path / name, quiet=True)
        result = run_experiment(spec, parallel=False)
        files.append(result.files[0])

    assert files[0].read_bytes() == files[1].read_bytes()
    modes = [row['mode'] for row in result.rows if row['realization'] == 0]
    assert modes == ['proposed', 'reference', 'oracle']
    proposed = result.rows[0]
    assert 0.0 < proposed['efficiency'] <= 1.0 + 1e-9
    assert proposed['rate_gain_pct'] is not None or result.rows[1]['r_d2d_avg_bps'] in (None, 0.0)
    assert len(result.rows) == 3 + 3 * 2


def test_diagnostics_cover_proposed_runs():
    spec = ExperimentSpec(config=load_config(TINY), realizations=2, quiet=True)
    result = run_experiment(spec, parallel=False)
    diagnostics = result.diagnostics

    runs = [r for r in result.rows if r['mode'] == 'proposed' and r['realization'] in (0, 1)]
    assert diagnostics['realizations'] == 2
    assert diagnostics['converged'] == sum(bool(r['converged']) for r in runs)
    assert diagnostics['mean_iterations'] == pytest.approx(sum(r['iterations'] for r in runs) / 2)
    assert 'ue_power' in diagnostics['constraint_slack']
    assert 'qos' not in diagnostics['constraint_slack']
    for family, value in diagnostics['constraint_slack'].items():
        assert value == min(r['constraint_slack'][family] for r in runs)


def test_diagnostics_of_hand_rows():
    rows = [result_row(None, 'proposed', r, 1.0) for r in range(3)]
    for row, (converged, iterations, slack) in zip(rows, [(True, 4, 0.5), (False, 50, -0.1), (True, 6, 0.2)]):
        row.update({'converged': converged, 'iterations': iterations, 'constraint_slack': {'ue_power': slack}})
    rows += aggregate_rows(rows)
    diagnostics = allocation_diagnostics(rows)
    assert (diagnostics['realizations'], diagnostics['converged']) == (3, 2)
    assert diagnostics['mean_iterations'] == 20.0
    assert diagnostics['constraint_slack'] == {'ue_power': -0.1}


def test_parallel_realizations_match_sequential():
    cfg = load_config(TINY)
    spec = ExperimentSpec(config=cfg, realizations=3, quiet=True)
    sequential = run_experiment(spec, parallel=False).rows
    parallel = run_experiment(spec, parallel=True).rows
    assert sequential == parallel


def test_oracle_guard_before_any_run(monkeypatch):
    def fail(*args, **kwargs):
        raise AssertionError("a realization ran")

    monkeypatch.setattr(main, 'run_realization', fail)
    cfg = NetworkConfig(num_relays=1, num_cues=4, num_d2d_pairs=4, rb_count=8)
    spec = ExperimentSpec(config=cfg, modes=['proposed', 'oracle'], realizations=1, quiet=True)
    with pytest.raises(OracleSizeError):
        run_experiment(spec)


def test_sweep_writes_traces_and_summary(tmp_path):
    cfg = load_config(TINY)
    spec = ExperimentSpec(config=cfg, sweep_axis='d_dd_m', sweep_values=[20.0, 40.0], realizations=1,
                          trace_path=tmp_path / 'trace.csv', quiet=True)
    result = run_experiment(spec, parallel=False)

    assert [e['sweep_value'] for e in result.summary['rows']] == [20.0, 40.0]
    assert (tmp_path / 'trace_d_dd_m_0.csv').exists()
    assert (tmp_path / 'trace_d_dd_m_1.csv').exists()
    assert result.files == []


def test_channel_dump_and_replay(tmp_path):
    cfg = load_config(TINY)
    dump = tmp_path / 'channel.csv'
    first = run_experiment(ExperimentSpec(config=cfg, modes=['proposed'], realizations=1,
                                          channel_dump=dump, quiet=True), parallel=False)
    replay = run_experiment(ExperimentSpec(config=cfg, modes=['proposed'], realizations=1,
                                           channel_load=dump, quiet=True), parallel=False)
    assert dump.exists()
    assert replay.rows[0]['r_sum_bps'] == first.rows[0]['r_sum_bps']


def test_main_success(tmp_path):
    out = tmp_path / 'tiny.csv'
    code = main.main(['--config', str(TINY), '--realizations', '1', '--out', str(out), '--quiet'])
    assert code == 0
    lines = out.read_text(encoding='utf-8').strip().splitlines()
    # proposed and reference rows, then mean and std of each
    assert len(lines) == 1 + 2 + 4


@pytest.mark.parametrize("argv", [
    ['--config', 'does-not-exist.yaml'],
    ['--config', str(TINY), '--sweep', 'height=1,2'],
    ['--config', str(TINY), '--realizations', '0'],
])
def test_main_failure_exit_code(argv):
    assert main.main(argv + ['--quiet']) == 1


def sweep_gains(axis, values, realizations=50, **overrides):
    base = load_config(DIRS['configs'] / 'default.yaml')
    cfg = dataclasses.replace(base, num_relays=1, num_cues=5, num_d2d_pairs=3, rb_count=8, t_max=30, **overrides)
    spec = ExperimentSpec(config=cfg, sweep_axis=axis, sweep_values=values, realizations=realizations,
                          seed=2, quiet=True)
    summary = run_experiment(spec).summary
    assert [e['sweep_value'] for e in summary['rows']] == values
    return [e['rate_gain_pct'] for e in summary['rows']], summary['crossover']


@pytest.mark.slow
def test_gain_changes_sign_once_over_pair_distance():
    values = [10.0, 40.0, 70.0, 100.0]
    gains, crossover = sweep_gains('d_dd_m', values)
    assert gains[0] < 0 < gains[-1]
    signs = [g > 0 for g in gains]
    assert sum(a != b for a, b in zip(signs, signs[1:])) == 1
    assert crossover == values[signs.index(True)]


@pytest.mark.slow
def test_gain_shrinks_with_uncertainty():
    gains, _ = sweep_gains('xi', [0.0, 0.25, 0.5], d_dd_m=70.0)
    assert gains[0] > gains[1] > gains[2]
