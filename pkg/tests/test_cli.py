import json

import pytest

from aircomp_bench.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, EXIT_VALIDATION_FAILED, main
from aircomp_bench.error_handler import SolverError
from aircomp_bench.experiments import AGGREGATE_COLUMNS, read_records
from aircomp_bench.schemas import RECORD_COLUMNS, ValidationReport

pytestmark = pytest.mark.usefixtures("restore_root_logging")

SMALL_CONFIG = """\
num_antennas=4
num_devices=2
realizations=1
antenna_sweep=2,4
device_sweep=1,2
randomization_candidates=20
warm_up=false
master_seed=3
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.conf"
    path.write_text(SMALL_CONFIG)
    return str(path)


def test_solve_prints_json_summary(config_file, capsys):
    assert main(['solve', '--config', config_file, '--format', 'json']) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload['antennas'] == 4 and payload['devices'] == 2
    assert [row['algorithm'] for row in payload['results']] == ['direct-sdr', 'direct-sca', 'sdr-opt', 'sca-opt']
    for row in payload['results']:
        assert row['status'] in ('ok', 'max-iterations')
        assert row['mean_target_mse'] == pytest.approx(row['mse'] / 4)


def test_solve_table_respects_algorithm_selection(config_file, capsys):
    assert main(['solve', '--config', config_file, '--algorithms', 'sca-opt']) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("seed=")
    assert "sca-opt" in out
    assert "direct-sdr" not in out


def test_sweep_streams_records_to_file(config_file, tmp_path):
    output = tmp_path / "records.csv"
    assert main(['sweep-antennas', '--config', config_file, '--output', str(output)]) == EXIT_OK
    assert output.read_text().splitlines()[0] == ",".join(RECORD_COLUMNS)
    records = read_records(output)
    assert len(records) == 2 * 4
    assert sorted({r.antennas for r in records}) == [2, 4]


def test_sweep_devices_aggregate_to_stdout(config_file, capsys):
    code = main(['sweep-devices', '--config', config_file, '--aggregate', '--algorithms', 'sdr-opt,sca-opt'])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(AGGREGATE_COLUMNS)
    assert len(lines) == 1 + 2 * 2


def test_sweep_json_with_digest(config_file, tmp_path):
    output = tmp_path / "records.json"
    assert main(['sweep-antennas', '--config', config_file, '--format', 'json', '--debug',
                 '--output', str(output)]) == EXIT_OK
    rows = json.loads(output.read_text())
    assert len(rows) == 8
    assert all(row['channel_digest'] for row in rows)


def test_unknown_config_key_exits_with_config_code(tmp_path, capsys):
    path = tmp_path / "bad.conf"
    path.write_text("sigma=-100\n")
    assert main(['solve', '--config', str(path)]) == EXIT_CONFIG
    err = capsys.readouterr().err.splitlines()[-1]
    assert err.startswith('error type=ConfigError message="')
    assert "noise_power_dbm" in err


def test_invalid_override_exits_with_config_code(config_file, capsys):
    assert main(['solve', '--config', config_file, '--seed', '-1']) == EXIT_CONFIG
    assert "master_seed" in capsys.readouterr().err


def test_unknown_algorithm_is_rejected_by_parser(config_file):
    with pytest.raises(SystemExit) as excinfo:
        main(['solve', '--config', config_file, '--algorithms', 'magic'])
    assert excinfo.value.code == 2


def test_solver_failure_exits_with_failure_code(config_file, mocker, capsys):
    mocker.patch('aircomp_bench.cli.run_sweep', side_effect=SolverError("no progress"))
    assert main(['sweep-antennas', '--config', config_file]) == EXIT_FAILURE
    assert 'error type=SolverError message="no progress"' in capsys.readouterr().err


def test_validate_reports_failure_code(config_file, mocker, capsys):
    report = ValidationReport(rows=[], mean_relative_gap=0.5, threshold=0.02, passed=False)
    validate = mocker.patch('aircomp_bench.cli.validate_mode', return_value=report)
    code = main(['validate', '--config', config_file, '--samples', '500', '--noiseless'])
    assert code == EXIT_VALIDATION_FAILED
    _, kwargs = validate.call_args
    assert kwargs['samples'] == 500 and kwargs['noiseless'] is True
    captured = capsys.readouterr()
    assert json.loads(captured.out)['passed'] is False
    assert "passed=false" in captured.err


def test_validate_passes_on_small_instance(config_file, capsys):
    code = main(['validate', '--config', config_file, '--samples', '2000', '--noiseless', '--realizations', '1'])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)['passed'] is True


def test_validate_runs_the_selected_algorithm(config_file, capsys):
    code = main(['validate', '--config', config_file, '--algorithms', 'direct-sdr',
                 '--samples', '2000', '--realizations', '1', '--noiseless'])
    assert code == EXIT_OK
    rows = json.loads(capsys.readouterr().out)['rows']
    assert {row['algorithm'] for row in rows} == {'direct-sdr'}


def test_validate_rejects_several_algorithms(config_file, capsys):
    code = main(['validate', '--config', config_file, '--algorithms', 'direct-sdr,sca-opt'])
    assert code == EXIT_CONFIG
    assert 'error type=ConfigError' in capsys.readouterr().err
