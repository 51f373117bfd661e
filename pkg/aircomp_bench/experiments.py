"""
Sweep orchestration, aggregation and result files for the AirComp benchmark.

This module provides:
- Deterministic per-realization seeds and paired channel draws
- Parallel sweeps with an order-restoring merge
- Aggregation into per-cell means and standard errors (pandas)
- CSV/JSON emission, incremental CSV flushing and read-back
- The Monte Carlo validation mode
"""
import hashlib
import json
import logging
import math
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextvars import copy_context
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from .aircomp_core import BeamformingSolution, analytic_mse, mean_estimate_mse, simulate_transmission
from .algorithms import SCA_INITIALIZERS, run_algorithm
from .channel import ChannelSet, channel_digest, sample_channel
from .config import run_id_var
from .error_handler import ErrorHandler, InvalidArgumentError, OutputError
from .schemas import (
    ALGORITHM_ORDER,
    RECORD_COLUMNS,
    Algorithm,
    ExperimentConfig,
    ExperimentRecord,
    SystemConfig,
    ValidationReport,
    ValidationRow,
)

logger = logging.getLogger(__name__)

# Rows with these statuses carry a usable MSE and enter the aggregates.
SUCCESS_STATUSES = ("ok", "max-iterations")

AGGREGATE_COLUMNS: Tuple[str, ...] = (
    "algorithm", "antennas", "devices", "count", "ok_count", "failed_count", "all_failed",
    "mse_mean", "mse_sem", "solve_seconds_mean", "solve_seconds_sem",
    "init_seconds_mean", "total_seconds_mean", "total_seconds_sem", "iterations_mean",
)

VALIDATION_STREAM = 0x5EED


def derive_seed(master_seed: int, axis: str, value: int, realization: int) -> int:
    """63-bit child seed mixed from the master seed and the point coordinates."""
    payload = f"{master_seed}:{axis}:{value}:{realization}".encode('utf-8')
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, 'big') & (2**63 - 1)


class ProgressTracker:
    """Track progress of a sweep; safe to update from several threads."""

    def __init__(self, total_steps: int, operation_name: str = "Sweep"):
        self.total_steps = max(total_steps, 1)
        self.current_step = 0
        self.operation_name = operation_name
        self._lock = threading.Lock()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            self.complete()

    def update(self, step_description: str, step_increment: int = 1):
        """Update progress with description"""
        with self._lock:
            self.current_step += step_increment
            step = self.current_step
        logger.debug("Progress: %d/%d - %s", step, self.total_steps, step_description)

    def complete(self, final_message: str = "Complete!"):
        with self._lock:
            self.current_step = self.total_steps
        logger.info("%s completed: %s", self.operation_name, final_message)


@dataclass
class PointResult:
    """Records of one (sweep value, realization) point plus the solutions behind them."""

    records: List[ExperimentRecord]
    solutions: Dict[Algorithm, Optional[BeamformingSolution]]
    channels: Optional[ChannelSet] = None


def _algorithm_rng(seed: int, algorithm: Algorithm) -> np.random.Generator:
    # Indexed by canonical position so a selection never shifts another algorithm's stream.
    return np.random.default_rng([seed, ALGORITHM_ORDER.index(algorithm)])


def _record(
    realization: int,
    seed: int,
    algorithm: Algorithm,
    system: SystemConfig,
    solution: Optional[BeamformingSolution],
    status: str,
    digest: Optional[str],
) -> ExperimentRecord:
    if solution is None:
        return ExperimentRecord(
            realization=realization, seed=seed, algorithm=algorithm.value,
            antennas=system.num_antennas, devices=system.num_devices,
            status=status, channel_digest=digest,
        )
    diagnostics = solution.diagnostics
    return ExperimentRecord(
        realization=realization,
        seed=seed,
        algorithm=algorithm.value,
        antennas=system.num_antennas,
        devices=system.num_devices,
        mse=solution.mse,
        solve_seconds=diagnostics.solve_seconds,
        init_seconds=diagnostics.init_seconds,
        iterations=diagnostics.iterations,
        sdp_gap=diagnostics.sdp_gap,
        status="max-iterations" if diagnostics.status == "max-iterations" else "ok",
        channel_digest=digest,
    )


def solve_point(
    system: SystemConfig,
    algorithms: Sequence[Algorithm],
    seed: int,
    realization: int,
    debug: bool = False,
    error_handler: Optional[ErrorHandler] = None,
) -> PointResult:
    """
    Draws one channel and runs every selected algorithm on it.

    SCA variants start from their relaxation's solution at the same point;
    when that relaxation is not selected it is computed with its own stream
    so the SCA result does not depend on the selection.
    """
    error_handler = error_handler or ErrorHandler()
    selected = [algorithm for algorithm in ALGORITHM_ORDER if algorithm in set(algorithms)]
    solutions: Dict[Algorithm, Optional[BeamformingSolution]] = {}
    records: List[ExperimentRecord] = []

    channels = None
    with error_handler.handle_errors("sample_channel") as outcome:
        channels = sample_channel(system.geometry, system.fading, system.num_antennas,
                                  system.num_devices, np.random.default_rng(seed))
    if not outcome.ok:
        for algorithm in selected:
            records.append(_record(realization, seed, algorithm, system, None, outcome.status, None))
        return PointResult(records=records, solutions={a: None for a in selected})

    digest = channel_digest(channels) if debug else None
    for algorithm in selected:
        solution = None
        with error_handler.handle_errors(algorithm.value) as outcome:
            init = None
            initializer = SCA_INITIALIZERS.get(algorithm)
            if initializer is not None:
                init = solutions.get(initializer)
                if init is None:
                    init = run_algorithm(initializer, channels, system, _algorithm_rng(seed, initializer))
            solution = run_algorithm(algorithm, channels, system, _algorithm_rng(seed, algorithm), init=init)
        solutions[algorithm] = solution
        records.append(_record(realization, seed, algorithm, system, solution, outcome.status, digest))
    return PointResult(records=records, solutions=solutions, channels=channels)


def run_sweep(
    config: ExperimentConfig,
    progress: Optional[ProgressTracker] = None,
    sink: Optional["CsvRecordSink"] = None,
) -> List[ExperimentRecord]:
    """
    Runs every (sweep value, realization) point and returns records in sweep order.

    Points execute on a thread pool of ``config.jobs`` workers; results are
    released strictly in submission order, so the output (time fields
    aside) does not depend on the degree of parallelism. Failures become
    status rows.
    """
    run_id_var.set(f"sweep-{uuid.uuid4().hex[:8]}")
    realizations = config.system.realizations
    tasks = [(value, r) for value in config.sweep_values for r in range(realizations)]
    error_handler = ErrorHandler()
    logger.info("Sweep over %s %s: %d points, algorithms %s, %d jobs",
                config.sweep_axis, config.sweep_values, len(tasks),
                [a.value for a in config.algorithms], config.jobs)

    def run_task(value: int, realization: int) -> List[ExperimentRecord]:
        seed = derive_seed(config.master_seed, config.sweep_axis, value, realization)
        result = solve_point(config.system_at(value), config.algorithms, seed, realization,
                             config.debug, error_handler)
        return result.records

    if config.warm_up and tasks:
        # Discarded: first calls pay for imports and BLAS initialization.
        run_task(*tasks[0])
        error_handler.clear_error_counts()

    records: List[ExperimentRecord] = []
    with ThreadPoolExecutor(max_workers=config.jobs) as executor:
        futures = [executor.submit(copy_context().run, run_task, value, r) for value, r in tasks]
        for (value, r), future in zip(tasks, futures):
            point_records = future.result()
            records.extend(point_records)
            if sink is not None:
                sink.write(point_records)
            if progress is not None:
                progress.update(f"{config.sweep_axis}={value} realization {r}")

    summary = error_handler.get_error_summary()
    if summary['total_errors']:
        logger.warning("Sweep finished with %d failed operations: %s",
                       summary['total_errors'], summary['error_types'])
    logger.info("Sweep produced %d records", len(records))
    return records


def _sem(values: pd.Series) -> float:
    if len(values) < 2:
        return math.nan
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def aggregate(records: Sequence[ExperimentRecord]) -> pd.DataFrame:
    """
    Per-(algorithm, N, K) means and standard errors over successful rows.

    Cells where every row failed are kept with ``all_failed`` set. The
    result does not depend on the order of ``records``.
    """
    if not records:
        return pd.DataFrame(columns=list(AGGREGATE_COLUMNS))

    frame = pd.DataFrame([record.model_dump() for record in records])
    order = {algorithm.value: index for index, algorithm in enumerate(ALGORITHM_ORDER)}
    frame['_order'] = frame['algorithm'].map(lambda name: order.get(name, len(order)))
    frame = frame.sort_values(['_order', 'algorithm', 'antennas', 'devices', 'realization', 'seed'],
                              kind='mergesort').reset_index(drop=True)
    frame['init_seconds'] = pd.to_numeric(frame['init_seconds'], errors='coerce')
    frame['_total'] = frame['solve_seconds'] + frame['init_seconds'].fillna(0.0)

    rows = []
    for (_, algorithm, antennas, devices), cell in frame.groupby(['_order', 'algorithm', 'antennas', 'devices'],
                                                                  sort=True):
        ok = cell[cell['status'].isin(SUCCESS_STATUSES) & cell['mse'].notna()]
        row: Dict[str, Any] = {
            'algorithm': algorithm,
            'antennas': int(antennas),
            'devices': int(devices),
            'count': len(cell),
            'ok_count': len(ok),
            'failed_count': len(cell) - len(ok),
            'all_failed': ok.empty,
        }
        if ok.empty:
            logger.warning("All %d rows failed for %s at N=%d K=%d", len(cell), algorithm, antennas, devices)
            row.update({column: math.nan for column in AGGREGATE_COLUMNS if column not in row})
        else:
            init = ok['init_seconds'].dropna()
            row.update({
                'mse_mean': float(ok['mse'].mean()),
                'mse_sem': _sem(ok['mse']),
                'solve_seconds_mean': float(ok['solve_seconds'].mean()),
                'solve_seconds_sem': _sem(ok['solve_seconds']),
                'init_seconds_mean': float(init.mean()) if not init.empty else math.nan,
                'total_seconds_mean': float(ok['_total'].mean()),
                'total_seconds_sem': _sem(ok['_total']),
                'iterations_mean': float(ok['iterations'].mean()),
            })
        rows.append(row)
    return pd.DataFrame(rows, columns=list(AGGREGATE_COLUMNS))


# --- Result files ---

def _record_columns(include_digest: bool) -> List[str]:
    return list(RECORD_COLUMNS) + (['channel_digest'] if include_digest else [])


def _records_frame(records: Sequence[ExperimentRecord], include_digest: bool) -> pd.DataFrame:
    columns = _record_columns(include_digest)
    rows = [record.model_dump(include=set(columns)) for record in records]
    return pd.DataFrame(rows, columns=columns)


def _json_safe(value: Any) -> Any:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def emit(
    data: Union[Sequence[ExperimentRecord], pd.DataFrame],
    fmt: str = "csv",
    path: Union[str, Path, None] = None,
    include_digest: bool = False,
) -> str:
    """
    Serializes records or aggregates as CSV or JSON.

    Floats are written in shortest round-trip form and missing values as
    empty cells (CSV) or null (JSON). The text is returned and, when
    ``path`` is given, written there.
    """
    if fmt not in ("csv", "json"):
        raise InvalidArgumentError(f"unknown output format '{fmt}', expected csv or json")
    frame = data if isinstance(data, pd.DataFrame) else _records_frame(data, include_digest)

    if fmt == "csv":
        text = frame.to_csv(index=False, lineterminator='\n')
    else:
        rows = [{key: _json_safe(value) for key, value in row.items()}
                for row in frame.to_dict(orient='records')]
        text = json.dumps(rows, indent=2) + '\n'

    if path is not None:
        target = Path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding='utf-8')
        except OSError as e:
            raise OutputError(f"Cannot write results ({e.strerror or e})", str(target)) from e
        logger.info("Wrote %d rows to %s", len(frame), target)
    return text


class CsvRecordSink:
    """Appends records to a CSV file as soon as they are released, flushing each batch."""

    def __init__(self, path: Union[str, Path], include_digest: bool = False):
        self.path = Path(path)
        self.columns = _record_columns(include_digest)
        self.include_digest = include_digest
        self.rows_written = 0
        self._lock = threading.Lock()
        self._handle: Optional[TextIO] = None

    def __enter__(self):
        self.open()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def open(self):
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open('w', encoding='utf-8', newline='')
            self._handle.write(','.join(self.columns) + '\n')
            self._handle.flush()
        except OSError as e:
            raise OutputError(f"Cannot open results file ({e.strerror or e})", str(self.path)) from e

    def write(self, records: Sequence[ExperimentRecord]):
        if not records:
            return
        if self._handle is None:
            self.open()
        frame = _records_frame(records, self.include_digest)
        with self._lock:
            try:
                frame.to_csv(self._handle, index=False, header=False, lineterminator='\n')
                self._handle.flush()
            except OSError as e:
                raise OutputError(f"Cannot append results ({e.strerror or e})", str(self.path)) from e
            self.rows_written += len(records)

    def close(self):
        if self._handle is not None:
            self._handle.close()
            self._handle = None


def read_records(path: Union[str, Path]) -> List[ExperimentRecord]:
    """Parses a CSV or JSON record file written by ``emit`` or ``CsvRecordSink``."""
    source = Path(path)
    try:
        if source.suffix.lower() == '.json':
            rows = json.loads(source.read_text(encoding='utf-8'))
        else:
            frame = pd.read_csv(
                source,
                dtype={'algorithm': str, 'status': str, 'channel_digest': str},
                float_precision='round_trip',
            )
            rows = frame.to_dict(orient='records')
    except (OSError, ValueError) as e:
        raise OutputError(f"Cannot read records ({e})", str(source)) from e
    return [ExperimentRecord(**{key: _json_safe(value) for key, value in row.items()}) for row in rows]


# --- Monte Carlo validation ---

def validate_mode(
    config: ExperimentConfig,
    samples: Optional[int] = None,
    noiseless: bool = False,
    realizations: Optional[int] = None,
    threshold: float = 0.02,
) -> ValidationReport:
    """
    Compares the closed-form MSE with simulated channel uses.

    Each realization solves one instance at the base system dimensions with
    ``config.validation_algorithm`` and simulates ``samples`` transmissions.
    ``noiseless`` zeroes the receiver noise in both the analytic and the
    simulated MSE.
    """
    system = config.system
    samples = samples or config.validation_samples
    realizations = realizations or system.realizations
    algorithm = config.validation_algorithm
    noise_power = 0.0 if noiseless else system.noise_power
    error_handler = ErrorHandler()
    run_id_var.set(f"validate-{uuid.uuid4().hex[:8]}")

    rows: List[ValidationRow] = []
    for realization in range(realizations):
        seed = derive_seed(config.master_seed, "validate", system.num_antennas, realization)
        result = solve_point(system, [algorithm], seed, realization, error_handler=error_handler)
        solution = result.solutions.get(algorithm)
        if solution is None:
            failure = result.records[-1].status
            raise InvalidArgumentError(f"{algorithm.value} failed on validation realization {realization} ({failure})")

        analytic = analytic_mse(solution.m, result.channels, system.power_limit, noise_power)
        sim_rng = np.random.default_rng([seed, VALIDATION_STREAM])
        empirical = simulate_transmission(solution, result.channels, noise_power, samples, sim_rng)
        gap = abs(empirical - analytic) / analytic if analytic > 0 else abs(empirical)
        rows.append(ValidationRow(
            realization=realization,
            seed=seed,
            algorithm=algorithm.value,
            analytic_mse=analytic,
            empirical_mse=empirical,
            relative_gap=gap,
            mean_target_mse=mean_estimate_mse(analytic, system.num_devices),
            samples=samples,
        ))
        logger.debug("validation realization %d: analytic %.6g empirical %.6g gap %.3e",
                     realization, analytic, empirical, gap)

    mean_gap = float(np.mean([row.relative_gap for row in rows]))
    report = ValidationReport(rows=rows, mean_relative_gap=mean_gap, threshold=threshold,
                              passed=mean_gap <= threshold)
    logger.info("Validation over %d realizations: mean relative gap %.4f (%s)",
                realizations, mean_gap, "pass" if report.passed else "fail")
    return report
