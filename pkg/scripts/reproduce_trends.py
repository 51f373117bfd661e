#!/usr/bin/env python3
"""
Reproduce the MSE and computation-time trends of the four beamforming algorithms.

Runs an antenna sweep at a fixed number of devices and a device sweep at a
fixed number of antennas, then writes one aggregate CSV per trend into the
output directory for external plotting.
"""

import argparse
import os
import sys
from pathlib import Path

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from aircomp_bench.config import parse_config, setup_logging
from aircomp_bench.experiments import ProgressTracker, aggregate, emit, run_sweep


KEY_COLUMNS = ['algorithm', 'antennas', 'devices', 'ok_count', 'failed_count']
MSE_COLUMNS = KEY_COLUMNS + ['mse_mean', 'mse_sem']
TIME_COLUMNS = KEY_COLUMNS + ['solve_seconds_mean', 'init_seconds_mean', 'total_seconds_mean', 'total_seconds_sem']


def run_trend(config_path, axis, fixed_dimension, jobs, output_dir: Path):
    config = parse_config(config_path, sweep_axis=axis)
    if axis == 'antennas':
        config.system = config.system.with_dimensions(num_devices=fixed_dimension)
    else:
        config.system = config.system.with_dimensions(num_antennas=fixed_dimension)
    if jobs is not None:
        config.jobs = jobs

    total = len(config.sweep_values) * config.system.realizations
    print(f"Sweeping {axis} over {config.sweep_values} ({total} points, {config.jobs} jobs)...")
    with ProgressTracker(total, f"trend-{axis}") as progress:
        frame = aggregate(run_sweep(config, progress=progress))

    emit(frame[MSE_COLUMNS], 'csv', output_dir / f"mse_vs_{axis}.csv")
    emit(frame[TIME_COLUMNS], 'csv', output_dir / f"time_vs_{axis}.csv")
    print(f"Wrote mse_vs_{axis}.csv and time_vs_{axis}.csv to {output_dir}")
    return frame


def main():
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument('--config', default='configs/full_scale.conf')
    parser.add_argument('--output-dir', default='results')
    parser.add_argument('--devices', type=int, default=10, help='K held fixed in the antenna sweep')
    parser.add_argument('--antennas', type=int, default=120, help='N held fixed in the device sweep')
    parser.add_argument('--jobs', type=int, default=None)
    args = parser.parse_args()

    setup_logging()
    output_dir = Path(args.output_dir)
    run_trend(args.config, 'antennas', args.devices, args.jobs, output_dir)
    run_trend(args.config, 'devices', args.antennas, args.jobs, output_dir)
    print("Done.")


if __name__ == "__main__":
    main()
