import contextvars
import json
import logging
import math
from pathlib import Path

import pytest

from aircomp_bench.config import RunIDFilter, dbm_to_watts, parse_config, run_id_var, setup_logging, suggest_key
from aircomp_bench.error_handler import (
    ConfigError,
    DegenerateChannelError,
    ErrorHandler,
    ExtractionError,
    InfeasibleSubproblemError,
    InfiniteMseError,
    InvalidArgumentError,
    SolverError,
    status_for,
)
from aircomp_bench.schemas import Algorithm, ExperimentConfig, ExperimentRecord

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_full_scale_file():
    config = parse_config(CONFIG_DIR / "full_scale.conf")
    system = config.system
    assert system.power_limit == pytest.approx(1.0)
    assert system.noise_power == pytest.approx(1e-13)
    assert system.fading.alpha == 3
    assert system.fading.rician_beta == 3
    assert system.fading.t0 == pytest.approx(1e-3)
    assert system.sca_tolerance == pytest.approx(1e-5)
    assert system.realizations == 128
    assert config.sweep_values == [8, 16, 32, 64, 128]


def test_desk_file_and_device_axis():
    config = parse_config(CONFIG_DIR / "desk.conf", sweep_axis="devices")
    assert config.sweep_axis == "devices"
    assert config.sweep_values == [2, 4, 6, 8, 10, 12]
    assert config.jobs == 2


def test_defaults_without_file():
    config = parse_config()
    assert config.sweep_values == [8, 16, 32, 64]
    assert config.algorithms == list(Algorithm)
    assert config.system.num_antennas == 32


def test_inline_text_with_comments():
    config = parse_config(text="# comment\nnum_devices=4\n\nrician_factor=inf\nalgorithms=sca-opt,direct-sdr\n")
    assert config.system.num_devices == 4
    assert math.isinf(config.system.fading.rician_beta)
    assert config.algorithms == [Algorithm.DIRECT_SDR, Algorithm.SCA_OPT]


def test_unknown_key_suggests_replacement():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text="num_devices=4\nsigma=-100\n")
    error = excinfo.value
    assert error.key == "sigma"
    assert error.line == 2
    assert "noise_power_dbm" in str(error)


def test_empty_sweep_is_rejected():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text="antenna_sweep=\n")
    assert excinfo.value.key == "antenna_sweep"


def test_non_increasing_sweep_is_rejected():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text="device_sweep=4,2\n", sweep_axis="devices")
    assert "increasing" in str(excinfo.value)


def test_invalid_value_names_key_and_line():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text="num_antennas=8\nrealizations=0\n")
    assert excinfo.value.key == "realizations"
    assert excinfo.value.line == 2


def test_unparsable_value():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text="power_dbm=thirty\n")
    assert excinfo.value.key == "power_dbm"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.conf")


def test_unit_conversion():
    assert dbm_to_watts(30) == pytest.approx(1.0)
    assert dbm_to_watts(-100) == pytest.approx(1e-13)


def test_suggest_key_falls_back_to_close_match():
    assert suggest_key("num_antenas") == "num_antennas"
    assert suggest_key("completely_unrelated") is None


def test_record_requires_positive_mse_when_ok():
    with pytest.raises(ValueError):
        ExperimentRecord(realization=0, seed=1, algorithm="sca-opt", antennas=4, devices=2, mse=0.0)
    record = ExperimentRecord(realization=0, seed=1, algorithm="sca-opt", antennas=4, devices=2, mse="",
                              status="solver-failure")
    assert record.mse is None


def test_experiment_config_system_at():
    config = ExperimentConfig(sweep_axis="devices", sweep_values=[2, 4])
    assert config.system_at(4).num_devices == 4
    assert config.system_at(4).num_antennas == config.system.num_antennas


def test_setup_logging_emits_json_with_run_id(capsys, restore_root_logging):
    setup_logging("DEBUG")
    token = run_id_var.set("run-test")
    try:
        logging.getLogger("aircomp_bench.test").info("hello")
    finally:
        run_id_var.reset(token)
    line = capsys.readouterr().err.strip().splitlines()[-1]
    payload = json.loads(line)
    assert payload["message"] == "hello"
    assert payload["run_id"] == "run-test"


def test_run_id_filter_defaults():
    record = logging.LogRecord("x", logging.INFO, __file__, 1, "msg", None, None)
    assert contextvars.Context().run(RunIDFilter().filter, record)
    assert record.run_id == "unassigned"


@pytest.mark.parametrize("error, status", [
    (DegenerateChannelError("zero gain"), "degenerate-channel"),
    (InfiniteMseError("unbounded"), "infinite-mse"),
    (ExtractionError("no candidate"), "extraction-failure"),
    (InfeasibleSubproblemError("dual unbounded"), "solver-failure"),
    (InvalidArgumentError("bad"), "invalid-argument"),
    (RuntimeError("surprise"), "error"),
])
def test_status_for(error, status):
    assert status_for(error) == status


def test_error_handler_contains_and_counts(caplog):
    handler = ErrorHandler()
    with caplog.at_level("WARNING", logger="aircomp_bench.error_handler"):
        with handler.handle_errors("solve") as outcome:
            raise SolverError("no progress")
    assert not outcome.ok
    assert outcome.status == "solver-failure"
    assert outcome.message == "SolverError: no progress"
    assert any("Error in solve" in message for message in caplog.messages)

    with handler.handle_errors("solve") as clean:
        pass
    assert clean.ok and clean.status == "ok"

    summary = handler.get_error_summary()
    assert summary['total_errors'] == 1
    assert summary['most_common_error'] == ("solve_SolverError", 1)
    handler.clear_error_counts()
    assert handler.get_error_summary()['total_errors'] == 0


def test_config_error_message_carries_location():
    error = ConfigError("Invalid configuration value", key="jobs", line=4)
    assert str(error) == "Invalid configuration value (key 'jobs', line 4)"
    assert isinstance(error, ValueError)
