"""Command-line entry point: ``python -m aircomp_bench <command> [options]``."""
import argparse
import json
import logging
import sys
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from .aircomp_core import mean_estimate_mse
from .config import parse_config, setup_logging
from .error_handler import AirCompError, ConfigError
from .experiments import CsvRecordSink, ProgressTracker, aggregate, derive_seed, emit, run_sweep, solve_point, validate_mode
from .schemas import Algorithm, ExperimentConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_VALIDATION_FAILED = 3

SWEEP_AXES = {'sweep-antennas': 'antennas', 'sweep-devices': 'devices'}


def _algorithm_list(text: str) -> List[str]:
    names = [item.strip() for item in text.split(',') if item.strip()]
    known = {algorithm.value for algorithm in Algorithm}
    unknown = [name for name in names if name not in known]
    if unknown or not names:
        raise argparse.ArgumentTypeError(
            f"unknown algorithms {unknown or text!r}; choose from {', '.join(sorted(known))}")
    return names


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='key=value configuration file (defaults apply when omitted)')
    common.add_argument('--seed', type=int, help='master seed override')
    common.add_argument('--output', help='result file; stdout when omitted')
    common.add_argument('--format', choices=('csv', 'json'), default='csv', dest='fmt')
    common.add_argument('--algorithms', type=_algorithm_list, help='comma list of algorithms to run')
    common.add_argument('--jobs', type=int, help='parallel workers for sweeps')
    common.add_argument('--debug', action='store_true', help='emit the channel digest column')
    common.add_argument('--log-level', default=None, help='overrides AIRCOMP_LOG_LEVEL')

    parser = argparse.ArgumentParser(prog='aircomp_bench', description='AirComp receive beamforming benchmark')
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('solve', parents=[common], help='solve one channel realization and print a summary')
    for name in SWEEP_AXES:
        sweep = commands.add_parser(name, parents=[common], help=f'sweep over {SWEEP_AXES[name]}')
        sweep.add_argument('--aggregate', action='store_true', help='emit per-cell means instead of raw records')
    validate = commands.add_parser('validate', parents=[common], help='Monte Carlo check of the analytic MSE')
    validate.add_argument('--samples', type=int, help='transmissions per realization')
    validate.add_argument('--realizations', type=int, help='number of channel realizations')
    validate.add_argument('--noiseless', action='store_true', help='zero receiver noise')
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = parse_config(args.config, sweep_axis=SWEEP_AXES.get(args.command, 'antennas'))
    overrides = {'master_seed': args.seed, 'algorithms': args.algorithms, 'jobs': args.jobs}
    if args.command == 'validate' and args.algorithms is not None:
        if len(args.algorithms) != 1:
            raise ConfigError(f"validate runs exactly one algorithm, got {', '.join(args.algorithms)}",
                              key='algorithms')
        overrides['validation_algorithm'] = args.algorithms[0]
    try:
        for field_name, value in overrides.items():
            if value is not None:
                setattr(config, field_name, value)
        if args.debug:
            config.debug = True
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"Invalid command-line value: {first.get('msg', e)}",
                          key='.'.join(str(part) for part in first.get('loc', ()))) from e
    return config


def _write(text: str, output: Optional[str]):
    if output is None:
        sys.stdout.write(text)


def _cmd_solve(config: ExperimentConfig, args: argparse.Namespace) -> int:
    system = config.system
    seed = derive_seed(config.master_seed, "instance", system.num_antennas, 0)
    result = solve_point(system, config.algorithms, seed, 0, debug=config.debug)
    summary = []
    for record in result.records:
        solution = result.solutions.get(Algorithm(record.algorithm))
        summary.append({
            'algorithm': record.algorithm,
            'status': record.status,
            'mse': record.mse,
            'mean_target_mse': None if record.mse is None else mean_estimate_mse(record.mse, record.devices),
            'iterations': record.iterations,
            'solve_seconds': record.solve_seconds,
            'init_seconds': record.init_seconds,
            'sdp_gap': record.sdp_gap,
            'rank_ratio': None if solution is None else solution.diagnostics.rank_ratio,
        })
    if args.output is not None:
        emit(result.records, args.fmt, args.output, include_digest=config.debug)
    if args.fmt == 'json':
        sys.stdout.write(json.dumps({'seed': seed, 'antennas': system.num_antennas,
                                     'devices': system.num_devices, 'results': summary}, indent=2) + '\n')
    else:
        sys.stdout.write(f"seed={seed} antennas={system.num_antennas} devices={system.num_devices}\n")
        sys.stdout.write(pd.DataFrame(summary).to_string(index=False) + '\n')
    return EXIT_OK


def _cmd_sweep(config: ExperimentConfig, args: argparse.Namespace) -> int:
    output = args.output or (str(config.output_path) if config.output_path else None)
    total = len(config.sweep_values) * config.system.realizations
    stream_csv = output is not None and args.fmt == 'csv' and not args.aggregate

    with ProgressTracker(total, f"sweep-{config.sweep_axis}") as progress:
        if stream_csv:
            with CsvRecordSink(output, include_digest=config.debug) as sink:
                run_sweep(config, progress=progress, sink=sink)
            logger.info("Streamed %d records to %s", sink.rows_written, output)
            return EXIT_OK
        records = run_sweep(config, progress=progress)

    data = aggregate(records) if args.aggregate else records
    _write(emit(data, args.fmt, output, include_digest=config.debug and not args.aggregate), output)
    return EXIT_OK


def _cmd_validate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    report = validate_mode(config, samples=args.samples, noiseless=args.noiseless, realizations=args.realizations)
    if args.fmt == 'json' or args.output is None:
        text = report.model_dump_json(indent=2) + '\n'
        if args.output is not None:
            emit(pd.DataFrame([row.model_dump() for row in report.rows]), 'json', args.output)
    else:
        text = emit(pd.DataFrame([row.model_dump() for row in report.rows]), 'csv', args.output)
    _write(text, args.output)
    sys.stderr.write(f"validation mean_relative_gap={report.mean_relative_gap:.6g} "
                     f"threshold={report.threshold} passed={str(report.passed).lower()}\n")
    return EXIT_OK if report.passed else EXIT_VALIDATION_FAILED


COMMANDS = {
    'solve': _cmd_solve,
    'sweep-antennas': _cmd_sweep,
    'sweep-devices': _cmd_sweep,
    'validate': _cmd_validate,
}


def _report_error(error: BaseException):
    message = str(error).replace('"', "'").replace('\n', ' ')
    sys.stderr.write(f'error type={type(error).__name__} message="{message}"\n')


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        config = _load_config(args)
        return COMMANDS[args.command](config, args)
    except ConfigError as e:
        _report_error(e)
        return EXIT_CONFIG
    except AirCompError as e:
        _report_error(e)
        return EXIT_FAILURE
    except Exception as e:
        logger.exception("Unexpected failure in %s", args.command)
        _report_error(e)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
