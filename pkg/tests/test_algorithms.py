import numpy as np
import pytest

from aircomp_bench.aircomp_core import analytic_mse, effective_gains, feasibility_rescale
from aircomp_bench.algorithms import direct_sca, direct_sdr, reduce, run_algorithm, sca_opt, sdr_opt
from aircomp_bench.error_handler import InvalidArgumentError
from aircomp_bench.schemas import Algorithm, SolverOptions, SystemConfig
from conftest import gaussian_channels, grid_oracle_mse, random_channels

NOISE = 1e-13
POWER = 1.0


def _config(num_antennas, num_devices, **solver):
    solver.setdefault('timing', False)
    return SystemConfig(num_antennas=num_antennas, num_devices=num_devices,
                        power_limit=POWER, noise_power=NOISE, solver=SolverOptions(**solver))


def _non_increasing(trace, rel=1e-9):
    return all(b <= a * (1 + rel) for a, b in zip(trace, trace[1:]))


def _projector(h):
    q, _ = np.linalg.qr(h)
    return q @ q.conj().T


def test_reduce_identity_channels(identity_channels):
    reduced = reduce(identity_channels)
    assert np.allclose(reduced.d_matrix, np.eye(3))
    assert np.allclose(reduced.f_vectors, np.eye(3))


def test_reduce_identities(rng):
    channels = random_channels(8, 4, seed=1)
    reduced = reduce(channels)
    h = channels.h_matrix
    a = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    reference = (h @ a).conj() @ h
    assert np.allclose(a.conj() @ reduced.f_vectors, reference, rtol=1e-12, atol=1e-12 * np.abs(reference).max())
    assert np.linalg.norm(h @ a) ** 2 == pytest.approx(float(np.real(a.conj() @ reduced.d_matrix @ a)), rel=1e-12)
    assert np.allclose(reduced.f_vectors, reduced.d_matrix @ np.eye(4))
    assert np.linalg.eigvalsh(reduced.d_matrix)[0] >= -1e-12 * np.linalg.norm(reduced.d_matrix)


@pytest.mark.parametrize("solver", [direct_sdr, sdr_opt, sca_opt])
def test_single_device_matched_filter(solver):
    channels = random_channels(6, 1, seed=2)
    solution = solver(channels, _config(6, 1), np.random.default_rng(0))
    expected = NOISE / (POWER * np.linalg.norm(channels.h_matrix) ** 2)
    assert solution.mse == pytest.approx(expected, rel=1e-6)


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_orthonormal_channels(identity_channels, algorithm):
    solution = run_algorithm(algorithm, identity_channels, _config(3, 3), np.random.default_rng(0))
    assert solution.mse == pytest.approx(3 * NOISE / POWER, rel=1e-6)


def test_direct_sca_fixed_point():
    channels = random_channels(5, 1, seed=3)
    h = channels.h_matrix[:, 0]
    start = h / np.linalg.norm(h) ** 2
    solution = direct_sca(channels, _config(5, 1), init=start)
    assert solution.diagnostics.iterations == 1
    assert solution.diagnostics.status == "converged"
    trace = solution.diagnostics.objective_trace
    assert trace[-1] == pytest.approx(trace[0], rel=1e-9)
    assert solution.mse == pytest.approx(analytic_mse(start, channels, POWER, NOISE), rel=1e-9)


def test_direct_sca_rejects_infeasible_start():
    channels = random_channels(4, 2, seed=4)
    with pytest.raises(InvalidArgumentError):
        direct_sca(channels, _config(4, 2), init=np.full(4, 1e-6, dtype=complex))


def test_solutions_are_consistent_and_feasible():
    channels = random_channels(8, 4, seed=5)
    config = _config(8, 4)
    for algorithm in Algorithm:
        solution = run_algorithm(algorithm, channels, config, np.random.default_rng(1))
        gains = np.abs(effective_gains(solution.m, channels)) ** 2
        assert gains.min() >= 1 - 1e-6
        assert solution.mse == pytest.approx(analytic_mse(solution.m, channels, POWER, NOISE), rel=1e-9)
        assert np.all(np.abs(solution.design.w) ** 2 <= POWER * (1 + 1e-9))
        if solution.a is not None:
            assert np.linalg.norm(solution.m - channels.h_matrix @ solution.a) <= 1e-8 * np.linalg.norm(solution.m)


def test_relaxation_lower_bounds_returned_solutions():
    for seed in range(4):
        channels = random_channels(6, 3, seed=10 + seed)
        config = _config(6, 3)
        for solver in (direct_sdr, sdr_opt):
            solution = solver(channels, config, np.random.default_rng(seed))
            bound = solution.diagnostics.sdp_objective
            assert bound <= np.linalg.norm(solution.m) ** 2 * (1 + 1e-6)


def test_sca_traces_descend_and_improve_on_initialization():
    for seed in range(6):
        channels = random_channels(8, 5, seed=20 + seed)
        config = _config(8, 5)
        sdr = sdr_opt(channels, config, np.random.default_rng(seed))
        refined = sca_opt(channels, config, init_solution=sdr)
        assert _non_increasing(refined.diagnostics.objective_trace)
        assert refined.mse <= sdr.mse * (1 + 1e-9)
        assert refined.diagnostics.init_seconds == sdr.diagnostics.total_seconds

        direct = direct_sca(channels, config, init=direct_sdr(channels, config, np.random.default_rng(seed)))
        assert _non_increasing(direct.diagnostics.objective_trace)


def _check_iterates_in_channel_span(seed):
    channels = gaussian_channels(8, 3, seed=seed)
    config = _config(8, 3, record_iterates=True, sca_tolerance=1e-8)
    start = feasibility_rescale(channels.h_matrix.sum(axis=1), channels)
    solution = direct_sca(channels, config, init=start)
    projector = _projector(channels.h_matrix)
    assert solution.diagnostics.iterates
    for m in solution.diagnostics.iterates:
        residual = np.linalg.norm(m - projector @ m)
        assert residual <= 1e-8 * np.linalg.norm(m), f"seed {seed}"
        assert np.min(np.abs(effective_gains(m, channels))) ** 2 >= 1 - 1e-9


def test_direct_sca_iterates_lie_in_channel_span():
    for seed in range(10):
        _check_iterates_in_channel_span(30 + seed)


@pytest.mark.slow
def test_direct_sca_iterates_lie_in_channel_span_many_runs():
    for seed in range(100):
        _check_iterates_in_channel_span(1000 + seed)


def test_sca_opt_iterates_are_feasible():
    channels = random_channels(10, 4, seed=41)
    solution = sca_opt(channels, _config(10, 4, record_iterates=True), np.random.default_rng(2))
    for m in solution.diagnostics.iterates:
        assert np.min(np.abs(effective_gains(m, channels))) ** 2 >= 1 - 1e-9


def test_sca_iteration_cap_is_reported():
    channels = random_channels(8, 6, seed=42)
    solution = direct_sca(channels, _config(8, 6, sca_max_iterations=1, sca_tolerance=1e-15),
                          rng=np.random.default_rng(3))
    assert solution.diagnostics.iterations == 1
    assert solution.diagnostics.status in ("max-iterations", "converged")
    assert solution.mse > 0


def test_sdr_opt_more_devices_than_antennas_warns(caplog):
    channels = gaussian_channels(2, 4, seed=43)
    with caplog.at_level("WARNING", logger="aircomp_bench.algorithms"):
        solution = sdr_opt(channels, _config(2, 4), np.random.default_rng(4))
    assert "regularized-gram" in solution.diagnostics.notes
    assert any("singular" in message for message in caplog.messages)
    assert solution.mse > 0


def test_reduced_map_preserves_gains():
    channels = random_channels(12, 4, seed=44)
    solution = sdr_opt(channels, _config(12, 4), np.random.default_rng(5))
    reduced = reduce(channels)
    assert np.allclose(np.abs(effective_gains(solution.m, channels)),
                       np.abs(solution.a.conj() @ reduced.f_vectors), rtol=1e-10)


def test_all_algorithms_match_grid_oracle_on_two_antennas():
    for seed in range(10):
        channels = gaussian_channels(2, 2, seed=100 + seed)
        config = _config(2, 2)
        oracle = grid_oracle_mse(channels, POWER, NOISE)
        results = {algorithm: run_algorithm(algorithm, channels, config, np.random.default_rng(seed)).mse
                   for algorithm in Algorithm}
        for algorithm in Algorithm:
            assert results[algorithm] == pytest.approx(oracle, rel=0.01), f"{algorithm.value} seed {seed}"
        # The oracle is a near-global minimum.
        assert min(results.values()) >= oracle * (1 - 0.005)


def test_sdr_opt_tracks_direct_sdr():
    hits = 0
    for seed in range(10):
        channels = random_channels(16, 4, seed=200 + seed)
        config = _config(16, 4)
        reduced = sdr_opt(channels, config, np.random.default_rng(seed))
        direct = direct_sdr(channels, config, np.random.default_rng(seed))
        hits += abs(reduced.mse - direct.mse) / direct.mse <= 0.05
    assert hits >= 8


@pytest.mark.slow
def test_sca_opt_matches_direct_sca_on_average():
    gaps = []
    for seed in range(32):
        channels = random_channels(32, 6, seed=300 + seed)
        config = _config(32, 6)
        reduced = sca_opt(channels, config, np.random.default_rng(seed))
        direct = direct_sca(channels, config, rng=np.random.default_rng(seed))
        gaps.append(abs(reduced.mse - direct.mse) / reduced.mse)
    assert np.mean(gaps) <= 0.02


def test_timing_is_recorded_when_enabled():
    channels = random_channels(6, 3, seed=45)
    solution = sca_opt(channels, _config(6, 3, timing=True), np.random.default_rng(6))
    assert solution.diagnostics.solve_seconds > 0
    assert solution.diagnostics.init_seconds > 0
    assert solution.diagnostics.total_seconds == pytest.approx(
        solution.diagnostics.solve_seconds + solution.diagnostics.init_seconds)
