import logging

import numpy as np
import pytest
from scipy import optimize

from aircomp_bench.channel import ChannelSet, sample_channel
from aircomp_bench.schemas import ExperimentConfig, SolverOptions, SystemConfig


@pytest.fixture
def rng():
    """Fixture to provide a seeded generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def system_config():
    """Default physics at a small size; timing disabled so results are comparable."""
    return SystemConfig(num_antennas=4, num_devices=3, solver=SolverOptions(timing=False))


@pytest.fixture
def restore_root_logging():
    """Puts the root logger back after code that calls setup_logging."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def identity_channels():
    """Orthonormal channels H = I_3."""
    return ChannelSet.from_matrix(np.eye(3, dtype=complex))


def random_channels(num_antennas: int, num_devices: int, seed: int) -> ChannelSet:
    """Default geometry and fading at the requested size."""
    config = SystemConfig()
    return sample_channel(config.geometry, config.fading, num_antennas, num_devices, np.random.default_rng(seed))


def gaussian_channels(num_antennas: int, num_devices: int, seed: int) -> ChannelSet:
    """Unit-scale i.i.d. CN(0, 1) channels."""
    generator = np.random.default_rng(seed)
    h = (generator.standard_normal((num_antennas, num_devices))
         + 1j * generator.standard_normal((num_antennas, num_devices))) / np.sqrt(2.0)
    return ChannelSet.from_matrix(h)


def grid_oracle_mse(channels: ChannelSet, power_limit: float, noise_power: float, resolution: int = 400) -> float:
    """
    Brute-force optimum for N = 2 over unit beamformer directions.

    Directions (cos t, e^{jp} sin t) cover the complex projective line; the
    best grid points are refined with Nelder-Mead.
    """
    h = channels.h_matrix
    assert h.shape[0] == 2

    def inverse_gain(t, p):
        m = np.stack([np.cos(t), np.exp(1j * p) * np.sin(t)])
        gains = np.abs(np.einsum('a...,ak->...k', np.conj(m), h)) ** 2
        return 1.0 / np.maximum(gains.min(axis=-1), 1e-300)

    thetas = np.linspace(0.0, np.pi / 2, resolution)
    phis = np.linspace(0.0, 2 * np.pi, 2 * resolution, endpoint=False)
    tt, pp = np.meshgrid(thetas, phis, indexing='ij')
    values = inverse_gain(tt, pp)

    best = np.inf
    for flat in np.argsort(values, axis=None)[:5]:
        i, j = np.unravel_index(flat, values.shape)
        result = optimize.minimize(lambda v: float(inverse_gain(v[0], v[1])), x0=[tt[i, j], pp[i, j]],
                                   method='Nelder-Mead', options={'xatol': 1e-10, 'fatol': 1e-14, 'maxiter': 4000})
        best = min(best, float(result.fun), float(values[i, j]))
    return best * noise_power / power_limit


@pytest.fixture
def experiment_config(tmp_path):
    """A tiny two-point antenna sweep."""
    return ExperimentConfig(
        system=SystemConfig(num_antennas=4, num_devices=2, realizations=2,
                            solver=SolverOptions(timing=False, randomization_candidates=20)),
        sweep_axis="antennas",
        sweep_values=[2, 4],
        master_seed=99,
        warm_up=False,
        output_path=tmp_path / "records.csv",
    )
