"""
Experiment Pipeline
Runs the relay-aided allocation, the direct reference scheme and the oracle
over parameter sweeps and realizations, and writes result tables
"""
import csv
import dataclasses
import json
import math
import time
import uuid
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import DIRS, EXPERIMENT_CONFIG, ORACLE_CONFIG, SIMULATION_CONFIG, get_output_filename, validate_config
from logger import logger, ExperimentError, SimulationError, ValidationError
from allocator import reference_direct, run_network, write_trace
from channel import associate, dump_channel, load_channel, sample_link_gains
from metrics import build_report, d2d_average, rate_gain, summarize
from oracle import build_instance, check_guard, optimal_rate
from scenario import NetworkConfig, generate_topology, load_config

AGGREGATES = ('mean', 'std')
NUMERIC_COLUMNS = (
    'r_avg_bps', 'r_sum_bps', 'rate_gain_pct', 'efficiency',
    'iterations', 'messages_matching', 'messages_x2'
)


@dataclass
class ExperimentSpec:
    """One batch of runs: a base configuration, an optional sweep and the schemes to compare"""
    config: NetworkConfig
    config_source: str = 'inline'
    sweep_axis: Optional[str] = None
    sweep_values: List[float] = field(default_factory=list)
    modes: List[str] = field(default_factory=lambda: ['proposed', 'reference'])
    out: Optional[Path] = None
    fmt: str = 'csv'
    seed: Optional[int] = None
    realizations: Optional[int] = None
    trace_path: Optional[Path] = None
    channel_dump: Optional[Path] = None
    channel_load: Optional[Path] = None
    quiet: bool = False

    def __post_init__(self):
        unknown = [m for m in self.modes if m not in EXPERIMENT_CONFIG['modes']]
        if unknown:
            raise ExperimentError(f"unknown modes {unknown}; choose from {EXPERIMENT_CONFIG['modes']}")
        if 'proposed' not in self.modes:
            raise ExperimentError("the 'proposed' mode is required (other modes are measured against it)")
        if self.fmt not in EXPERIMENT_CONFIG['formats']:
            raise ExperimentError(f"unknown format {self.fmt!r}; choose from {EXPERIMENT_CONFIG['formats']}")
        if self.sweep_axis is not None and self.sweep_axis not in EXPERIMENT_CONFIG['sweep_axes']:
            raise ExperimentError(
                f"unknown sweep axis {self.sweep_axis!r}; choose from {EXPERIMENT_CONFIG['sweep_axes']}"
            )

    @property
    def base_seed(self) -> int:
        return self.config.seed if self.seed is None else self.seed

    @property
    def realization_count(self) -> int:
        return self.config.realizations if self.realizations is None else self.realizations

    @property
    def values(self) -> List[Optional[float]]:
        return list(self.sweep_values) if self.sweep_axis else [None]


@dataclass
class ExperimentResult:
    rows: List[dict]
    summary: Optional[dict]
    files: List[Path]
    diagnostics: dict = field(default_factory=dict)


def parse_sweep(text: str) -> Tuple[str, List[float]]:
    """
    Parse '<axis>=<v1,v2,...>'

    Raises:
        ExperimentError: Malformed expression or unknown axis
    """
    axis, sep, values = text.partition('=')
    axis = axis.strip()
    if not sep or not values.strip():
        raise ExperimentError(f"sweep must look like <axis>=<v1,v2,...>, got {text!r}")
    if axis not in EXPERIMENT_CONFIG['sweep_axes']:
        raise ExperimentError(f"unknown sweep axis {axis!r}; choose from {EXPERIMENT_CONFIG['sweep_axes']}")
    try:
        parsed = [float(v) for v in values.split(',') if v.strip()]
    except ValueError as e:
        raise ExperimentError(f"sweep values must be numbers: {values!r}") from e
    return axis, parsed


def apply_sweep(cfg: NetworkConfig, axis: Optional[str], value: Optional[float]) -> NetworkConfig:
    """
    Configuration of one sweep point. 'xi' sets all four bounds; 'num_ues' keeps
    the CUE to D2D ratio of the base configuration.

    Raises:
        ValidationError: The swept value violates a configuration invariant
    """
    if axis is None:
        return cfg
    if axis == 'xi':
        return dataclasses.replace(cfg, xi1=value, xi2=value, xi3=value, xi4=value)
    if axis == 'num_ues':
        if not float(value).is_integer():
            raise ValidationError(f"num_ues must be an integer, got {value}")
        total = int(value)
        cues = int(round(total * cfg.num_cues / cfg.num_ues))
        return dataclasses.replace(cfg, num_cues=cues, num_d2d_pairs=total - cues)
    return dataclasses.replace(cfg, **{axis: float(value)})


def realization_seeds(base_seed: int, realization: int) -> Tuple[int, int]:
    """Independent (topology, channel) seeds, shared by every sweep value"""
    topology_seq, channel_seq = np.random.SeedSequence([base_seed, realization]).spawn(2)
    return int(topology_seq.generate_state(1)[0]), int(channel_seq.generate_state(1)[0])


def _oracle_sum_rate(cfg: NetworkConfig, proposed) -> float:
    total = 0.0
    for relay in range(proposed.channel.num_relays):
        inst = build_instance(cfg, proposed.channel, relay, background=proposed.context)
        total += optimal_rate(inst, 'robust').best_rate
    return total


def run_realization(spec: ExperimentSpec, index: int, value: Optional[float], realization: int) -> List[dict]:
    """All modes of one (sweep value, realization) pair, as result rows"""
    cfg = apply_sweep(spec.config, spec.sweep_axis, value)
    topology_seed, channel_seed = realization_seeds(spec.base_seed, realization)
    topology = generate_topology(cfg, topology_seed)
    if spec.channel_load:
        channel = load_channel(spec.channel_load, topology, cfg)
    else:
        channel = sample_link_gains(topology, cfg, channel_seed)
    topology = associate(topology, channel)

    first_run = index == 0 and realization == 0
    if spec.channel_dump and first_run:
        dump_channel(channel, spec.channel_dump)

    proposed = run_network(cfg, topology, channel)
    if spec.trace_path and realization == 0:
        write_trace(proposed, _trace_path(spec, index))

    num_ues = cfg.num_ues
    reference = None
    if 'reference' in spec.modes:
        reference = reference_direct(cfg, topology, channel, proposed)
    r_optm = _oracle_sum_rate(cfg, proposed) if 'oracle' in spec.modes else None

    d2d = topology.is_d2d
    r_ref_d2d = None if reference is None else d2d_average(reference.ue_rates, d2d)
    slack = proposed.constraints('robust').slacks()
    report = build_report(proposed.ue_rates, num_ues, proposed, r_ref_d2d, r_optm, d2d, slack)
    rows = [report.to_row(value, 'proposed', realization)]
    if reference is not None:
        rows.append(build_report(reference.ue_rates, num_ues, d2d=d2d).to_row(value, 'reference', realization))
    if r_optm is not None:
        row = build_report(np.zeros(num_ues), num_ues).to_row(value, 'oracle', realization)
        row.update({'r_avg_bps': r_optm / num_ues, 'r_sum_bps': r_optm})
        rows.append(row)
    return rows


def _trace_path(spec: ExperimentSpec, index: int) -> Path:
    path = Path(spec.trace_path)
    if len(spec.values) == 1:
        return path
    return path.with_name(f"{path.stem}_{spec.sweep_axis}_{index}{path.suffix}")


def aggregate_rows(rows: List[dict]) -> List[dict]:
    """Mean and standard deviation rows per (sweep value, mode)"""
    groups: Dict[tuple, List[dict]] = {}
    for row in rows:
        groups.setdefault((row['sweep_value'], row['mode']), []).append(row)

    aggregates = []
    for (value, mode), group in groups.items():
        stats = {column: summarize(r[column] for r in group) for column in NUMERIC_COLUMNS}
        for position, name in enumerate(AGGREGATES):
            row = {'sweep_value': value, 'mode': mode, 'realization': name}
            row.update({column: stats[column][position] for column in NUMERIC_COLUMNS})
            aggregates.append(row)
    return aggregates


def allocation_diagnostics(rows: Sequence[dict]) -> dict:
    """Iterations, convergence and the smallest worst-case slack per family over the proposed runs"""
    runs = [r for r in rows if r['mode'] == 'proposed' and r['realization'] not in AGGREGATES]
    slack: Dict[str, float] = {}
    for run in runs:
        for family, value in (run.get('constraint_slack') or {}).items():
            slack[family] = min(value, slack.get(family, math.inf))
    iterations = [r['iterations'] for r in runs if r['iterations'] is not None]
    return {
        'realizations': len(runs),
        'converged': sum(1 for r in runs if r.get('converged')),
        'mean_iterations': float(np.mean(iterations)) if iterations else 0.0,
        'constraint_slack': slack
    }


def _row_key(item) -> tuple:
    (index, realization), row = item
    return index, realization, EXPERIMENT_CONFIG['modes'].index(row['mode'])


def run_experiment(spec: ExperimentSpec, parallel: Optional[bool] = None) -> ExperimentResult:
    """
    Run every sweep value x realization, aggregate and write the result files

    Raises:
        OracleSizeError: Oracle mode requested on an instance beyond the guard
        ExperimentError: Result files cannot be written
    """
    parallel = SIMULATION_CONFIG['parallel_realizations'] if parallel is None else parallel
    configs = [apply_sweep(spec.config, spec.sweep_axis, v) for v in spec.values]
    if 'oracle' in spec.modes:
        for cfg in configs:
            check_guard(cfg.num_ues, cfg.rb_count, ORACLE_CONFIG['grid_levels'])

    jobs = [(index, realization) for index in range(len(spec.values)) for realization in range(spec.realization_count)]
    collected: List[Tuple[Tuple[int, int], dict]] = []
    progress = tqdm(total=len(jobs), desc='Realizations', disable=spec.quiet)

    if parallel and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=SIMULATION_CONFIG['max_workers']) as executor:
            future_to_job = {
                executor.submit(run_realization, spec, index, spec.values[index], realization): (index, realization)
                for index, realization in jobs
            }
            for future in as_completed(future_to_job):
                job = future_to_job[future]
                collected.extend((job, row) for row in future.result())
                progress.update(1)
    else:
        for index, realization in jobs:
            collected.extend(((index, realization), row) for row in run_realization(spec, index, spec.values[index], realization))
            progress.update(1)
    progress.close()

    rows = [row for _, row in sorted(collected, key=_row_key)]
    rows.extend(aggregate_rows(rows))

    summary = None
    if spec.sweep_axis and 'reference' in spec.modes:
        summary = sweep_summary(rows)
        logger.info(f"Crossover {spec.sweep_axis}: {summary['crossover']}")

    files = []
    if spec.out is not None:
        files.append(emit_results(rows, spec.out, spec.fmt))
    return ExperimentResult(rows=rows, summary=summary, files=files, diagnostics=allocation_diagnostics(rows))


def _d2d_rate(row: dict) -> float:
    # rows without D2D UEs fall back to the average over all UEs
    value = row.get('r_d2d_avg_bps')
    return row['r_avg_bps'] if value is None else value


def sweep_summary(rows: Sequence[dict]) -> dict:
    """
    Per-value rate gain of the proposed over the reference scheme on the D2D UEs, the
    efficiency when oracle rows exist, and the smallest value with a positive gain

    Raises:
        ExperimentError: A sweep value lacks the proposed or the reference rows
    """
    per_value: Dict[float, Dict[str, List[dict]]] = {}
    for row in rows:
        if row['realization'] in AGGREGATES:
            continue
        per_value.setdefault(row['sweep_value'], {}).setdefault(row['mode'], []).append(row)

    table = []
    for value in sorted(per_value, key=lambda v: (v is None, v)):
        modes = per_value[value]
        for required in ('proposed', 'reference'):
            if required not in modes:
                raise ExperimentError(f"sweep value {value} has no {required} rows")
        r_prop = float(np.mean([_d2d_rate(r) for r in modes['proposed']]))
        r_ref = float(np.mean([_d2d_rate(r) for r in modes['reference']]))
        if r_ref > 0:
            gain = rate_gain(r_prop, r_ref)
        else:
            gain = math.inf if r_prop > 0 else math.nan
        entry = {'sweep_value': value, 'r_d2d_proposed': r_prop, 'r_d2d_reference': r_ref, 'rate_gain_pct': gain}
        if 'oracle' in modes:
            r_avg = float(np.mean([r['r_avg_bps'] for r in modes['proposed']]))
            r_optm = float(np.mean([r['r_avg_bps'] for r in modes['oracle']]))
            entry['efficiency'] = r_avg / r_optm if r_optm > 0 else math.nan
        table.append(entry)

    crossover = next((e['sweep_value'] for e in table if e['rate_gain_pct'] > 0), None)
    return {'rows': table, 'crossover': crossover}


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, np.generic):
        return value.item()
    return value


def emit_results(rows: Sequence[dict], path: Path, fmt: str = 'csv') -> Path:
    """
    Write result rows with the fixed column set

    Raises:
        ExperimentError: Unknown format or the file cannot be written
    """
    path = Path(path)
    columns = EXPERIMENT_CONFIG['result_columns']
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == 'csv':
            with open(path, 'w', newline='', encoding='utf-8') as f:
                writer = csv.DictWriter(f, fieldnames=columns)
                writer.writeheader()
                for row in rows:
                    writer.writerow({c: '' if row.get(c) is None else row[c] for c in columns})
        elif fmt == 'json':
            document = [{c: _json_value(row.get(c)) for c in columns} for row in rows]
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(document, f, indent=2)
        else:
            raise ExperimentError(f"unknown format {fmt!r}; choose from {EXPERIMENT_CONFIG['formats']}")
    except OSError as e:
        raise ExperimentError(f"cannot write results to {path}: {e}") from e

    logger.info(f"Results written: {path} ({len(rows)} rows)")
    return path


def generate_run_id() -> str:
    """Generate unique run identifier"""
    return f"{datetime.now().strftime('%Y%m%d_%H%M%S')}_{uuid.uuid4().hex[:8]}"


def build_spec(args) -> ExperimentSpec:
    """Turn parsed command-line arguments into an ExperimentSpec"""
    config_path = Path(args.config)
    cfg = load_config(config_path)
    axis, values = parse_sweep(args.sweep) if args.sweep else (None, [])
    out = Path(args.out) if args.out else DIRS['results'] / get_output_filename(config_path.stem, args.format, axis)
    return ExperimentSpec(
        config=cfg,
        config_source=str(config_path),
        sweep_axis=axis,
        sweep_values=values,
        modes=args.modes,
        out=out,
        fmt=args.format,
        seed=args.seed,
        realizations=args.realizations,
        trace_path=Path(args.trace) if args.trace else None,
        channel_dump=Path(args.channel_dump) if args.channel_dump else None,
        channel_load=Path(args.channel_load) if args.channel_load else None,
        quiet=args.quiet
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for command-line usage"""
    import argparse

    parser = argparse.ArgumentParser(
        description='Relay-Aided D2D Resource Allocation Simulator',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py --config configs/default.yaml
  python main.py --config configs/default.yaml --sweep d_dd_m=10,20,30,40,50 --realizations 50
  python main.py --config configs/tiny.yaml --modes proposed oracle --format json
        """
    )

    parser.add_argument('--config', default=str(DIRS['configs'] / 'default.yaml'), help='Experiment YAML file')
    parser.add_argument('--sweep', help='Sweep expression <axis>=<v1,v2,...> (axes: d_dd_m, d_rd_m, xi, num_ues)')
    parser.add_argument(
        '--modes',
        nargs='+',
        choices=EXPERIMENT_CONFIG['modes'],
        default=['proposed', 'reference'],
        help='Schemes to run (default: proposed reference)'
    )
    parser.add_argument('--out', help='Result file (default: results/<config>[_sweep_<axis>].<format>)')
    parser.add_argument('--format', choices=EXPERIMENT_CONFIG['formats'], default='csv', help='Result format')
    parser.add_argument('--seed', type=int, help='Override the configured seed')
    parser.add_argument('--realizations', type=int, help='Override the configured realization count')
    parser.add_argument('--channel-dump', help='Write the first realization channel to this CSV')
    parser.add_argument('--channel-load', help='Replay a dumped channel instead of sampling')
    parser.add_argument('--trace', help='Write the per-iteration sum-rate trace to this CSV')
    parser.add_argument('--quiet', action='store_true', help='Disable progress bars')

    args = parser.parse_args(argv)

    print("\n" + "=" * 80)
    print("RELAY-AIDED D2D RESOURCE ALLOCATION SIMULATOR")
    print("=" * 80 + "\n")

    run_id = generate_run_id()
    start_time = time.time()
    stage = 'configuration'
    try:
        validate_config()
        spec = build_spec(args)
        if spec.realization_count < 1:
            raise ExperimentError(f"realizations must be >= 1, got {spec.realization_count}")
        logger.log_experiment_start(spec.config_source, args.sweep, spec.modes)

        stage = 'simulation'
        result = run_experiment(spec)
        elapsed = time.time() - start_time

        diagnostics = result.diagnostics
        logger.log_experiment_complete(result.files, diagnostics)
        details = {
            'config': spec.config_source,
            'sweep': args.sweep or 'none',
            'modes': ', '.join(spec.modes),
            'realizations': spec.realization_count,
            'rows': len(result.rows),
            'converged': f"{diagnostics['converged']}/{diagnostics['realizations']}",
            'mean_iterations': f"{diagnostics['mean_iterations']:.1f}",
            'files': ', '.join(str(f) for f in result.files),
            'processing_time': f"{elapsed:.1f}s"
        }
        if result.summary is not None:
            details['crossover'] = result.summary['crossover']
        report = logger.create_run_report(run_id, 'success', details, slack=diagnostics['constraint_slack'])

        print("\n" + "=" * 80)
        print("EXPERIMENT COMPLETED SUCCESSFULLY!")
        print("=" * 80)
        print(f"\nRun ID: {run_id}")
        print(f"Rows: {len(result.rows)}")
        print(f"Converged: {diagnostics['converged']}/{diagnostics['realizations']} allocations, "
              f"{diagnostics['mean_iterations']:.1f} iterations on average")
        for path in result.files:
            print(f"  - {path}")
        if result.summary is not None:
            print(f"Crossover {spec.sweep_axis}: {result.summary['crossover']}")
        print(f"\nReport: {report}")
        print("\n" + "=" * 80 + "\n")

    except (SimulationError, EnvironmentError) as e:
        logger.log_experiment_error(e, stage)
        logger.create_run_report(run_id, 'failed', {
            'error': str(e),
            'error_type': type(e).__name__,
            'stage': stage,
            'processing_time': f"{time.time() - start_time:.1f}s"
        })
        print("\n" + "=" * 80)
        print("EXPERIMENT FAILED!")
        print("=" * 80)
        print(f"\nError: {e}")
        print("\nCheck the log file for more details:")
        print(f"  {DIRS['logs'] / 'simulation.log'}")
        print("\n" + "=" * 80 + "\n")
        return 1

    return 0


if __name__ == '__main__':
    exit(main())
