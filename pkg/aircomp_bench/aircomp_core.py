"""
AirComp signal model and closed-form transceiver design.

For a receive beamformer m the optimal transmit scalars, denoising factor
and MSE are available in closed form; the only remaining design variable is
m itself. Symbols are circularly symmetric complex Gaussian with unit power
and the target function is their plain sum.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .channel import ChannelSet
from .error_handler import DegenerateChannelError, InfiniteMseError, InvalidArgumentError

logger = logging.getLogger(__name__)

# |m^H h_k| below this fraction of ||m|| ||h_k|| is treated as exactly zero.
DEGENERATE_GAIN = 1e-12
POWER_SLACK = 1e-9
SIMULATION_BLOCK = 16384


@dataclass(frozen=True)
class TransmitDesign:
    """Per-device transmit scalars w (sqrt-watts) and the denoising factor eta."""

    w: np.ndarray
    eta: float


@dataclass
class SolverDiagnostics:
    """What a beamforming solver did and how long it took."""

    solver: str
    status: str = "converged"
    iterations: int = 0
    objective_trace: List[float] = field(default_factory=list)
    solve_seconds: float = 0.0
    init_seconds: Optional[float] = None
    sdp_gap: Optional[float] = None
    sdp_objective: Optional[float] = None
    rank_ratio: Optional[float] = None
    notes: List[str] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return self.solve_seconds + (self.init_seconds or 0.0)


@dataclass
class BeamformingSolution:
    """Receive beamformer, optional reduced weights, transmit design and MSE."""

    m: np.ndarray
    design: TransmitDesign
    mse: float
    diagnostics: SolverDiagnostics
    a: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TransmissionSample:
    """One channel use: symbols, noise, target and its estimate."""

    s: np.ndarray
    noise: np.ndarray
    g: complex
    g_hat: complex


def _channel_matrix(channels: Union[ChannelSet, np.ndarray]) -> np.ndarray:
    if isinstance(channels, ChannelSet):
        return channels.h_matrix
    h = np.asarray(channels, dtype=complex)
    return h[:, np.newaxis] if h.ndim == 1 else h


def effective_gains(m: np.ndarray, channels: Union[ChannelSet, np.ndarray]) -> np.ndarray:
    """Complex effective gains m^H h_k for every device."""
    h = _channel_matrix(channels)
    m = np.asarray(m, dtype=complex)
    if m.shape != (h.shape[0],):
        raise InvalidArgumentError(f"beamformer has shape {m.shape}, expected ({h.shape[0]},)")
    return np.conj(m) @ h


def _degenerate_devices(m: np.ndarray, h: np.ndarray, gains: np.ndarray) -> np.ndarray:
    scale = np.linalg.norm(m) * np.linalg.norm(h, axis=0)
    return np.flatnonzero(np.abs(gains) < DEGENERATE_GAIN * scale)


def _checked_gains(m, channels) -> np.ndarray:
    h = _channel_matrix(channels)
    gains = effective_gains(m, h)
    degenerate = _degenerate_devices(np.asarray(m, dtype=complex), h, gains)
    if degenerate.size or not np.any(np.asarray(m) != 0):
        raise DegenerateChannelError(f"beamformer has zero gain on devices {degenerate.tolist()}")
    return gains


def transmit_scalars(m: np.ndarray, channels: ChannelSet, eta: float) -> np.ndarray:
    """Channel-inverting transmit scalars w_k = sqrt(eta) (m^H h_k)^* / |m^H h_k|^2."""
    if eta < 0:
        raise InvalidArgumentError(f"denoising factor must be non-negative, got {eta}")
    gains = _checked_gains(m, channels)
    return np.sqrt(eta) * np.conj(gains) / np.abs(gains) ** 2


def denoising_factor(m: np.ndarray, channels: ChannelSet, power_limit: float) -> float:
    """eta = P * min_k |m^H h_k|^2; zero flags an infeasible beamformer."""
    gains = effective_gains(m, channels)
    return float(power_limit * np.min(np.abs(gains) ** 2))


def analytic_mse(m: np.ndarray, channels: ChannelSet, power_limit: float, noise_power: float) -> float:
    """Closed-form MSE ||m||^2 sigma^2 / (P min_k |m^H h_k|^2)."""
    try:
        gains = _checked_gains(m, channels)
    except DegenerateChannelError as e:
        raise InfiniteMseError(f"MSE is unbounded: {e}") from e
    return float(np.linalg.norm(m) ** 2 * noise_power / (power_limit * np.min(np.abs(gains) ** 2)))


def general_mse(m: np.ndarray, w: np.ndarray, eta: float, channels: ChannelSet, noise_power: float) -> float:
    """MSE for arbitrary transmit scalars: sum_k |m^H h_k w_k / sqrt(eta) - 1|^2 + sigma^2 ||m||^2 / eta."""
    if not eta > 0:
        raise InvalidArgumentError(f"denoising factor must be positive, got {eta}")
    gains = effective_gains(m, channels)
    w = np.asarray(w, dtype=complex)
    if w.shape != gains.shape:
        raise InvalidArgumentError(f"transmit scalars have shape {w.shape}, expected {gains.shape}")
    residual = gains * w / np.sqrt(eta) - 1.0
    return float(np.sum(np.abs(residual) ** 2) + noise_power * np.linalg.norm(m) ** 2 / eta)


def mean_estimate_mse(mse: float, num_devices: int) -> float:
    """MSE of the arithmetic-mean estimate g_hat / K given the sum-target MSE."""
    return mse / num_devices ** 2


def feasibility_rescale(m: np.ndarray, channels: Union[ChannelSet, np.ndarray]) -> np.ndarray:
    """Scales m so that min_k |m^H h_k| = 1 exactly."""
    m = np.asarray(m, dtype=complex)
    gains = _checked_gains(m, channels)
    return m / np.min(np.abs(gains))


def design_transmission(m: np.ndarray, channels: ChannelSet, power_limit: float) -> TransmitDesign:
    """Optimal denoising factor and transmit scalars for a fixed beamformer."""
    eta = denoising_factor(m, channels, power_limit)
    w = transmit_scalars(m, channels, eta)
    # Rounding can put the tight device a hair over the limit.
    excess = np.abs(w) ** 2 > power_limit * (1.0 + POWER_SLACK)
    if np.any(excess):
        raise InvalidArgumentError(f"transmit power limit exceeded on devices {np.flatnonzero(excess).tolist()}")
    return TransmitDesign(w=w, eta=eta)


def build_solution(
    m: np.ndarray,
    channels: ChannelSet,
    power_limit: float,
    noise_power: float,
    diagnostics: SolverDiagnostics,
    a: Optional[np.ndarray] = None,
) -> BeamformingSolution:
    """Fills transmit design and analytic MSE around a solver's beamformer."""
    design = design_transmission(m, channels, power_limit)
    mse = analytic_mse(m, channels, power_limit, noise_power)
    return BeamformingSolution(m=m, design=design, mse=mse, diagnostics=diagnostics, a=a)


def _complex_gaussian(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def transmit_once(
    solution: BeamformingSolution,
    channels: ChannelSet,
    noise_power: float,
    rng: np.random.Generator,
) -> TransmissionSample:
    """Simulates a single channel use and returns everything it produced."""
    h = channels.h_matrix
    s = _complex_gaussian(rng, channels.num_devices)
    noise = _complex_gaussian(rng, channels.num_antennas, noise_power)
    y = h @ (solution.design.w * s) + noise
    g_hat = np.vdot(solution.m, y) / np.sqrt(solution.design.eta)
    return TransmissionSample(s=s, noise=noise, g=complex(np.sum(s)), g_hat=complex(g_hat))


def simulate_transmission(
    solution: BeamformingSolution,
    channels: ChannelSet,
    noise_power: float,
    num_samples: int,
    rng: np.random.Generator,
) -> float:
    """
    Empirical MSE of the estimate over ``num_samples`` channel uses.

    Samples are processed in fixed-size blocks, each with its own seed drawn
    from ``rng`` up front, and block sums are reduced in block order.
    """
    if num_samples < 1:
        raise InvalidArgumentError(f"sample count must be at least 1, got {num_samples}")
    if not solution.design.eta > 0:
        raise InvalidArgumentError("solution has a zero denoising factor")

    h = channels.h_matrix
    m_conj = np.conj(solution.m)
    w = solution.design.w
    sqrt_eta = np.sqrt(solution.design.eta)

    num_blocks = -(-num_samples // SIMULATION_BLOCK)
    block_seeds = rng.integers(0, 2**63, size=num_blocks)
    total = 0.0
    for index, seed in enumerate(block_seeds):
        block_rng = np.random.default_rng(int(seed))
        size = min(SIMULATION_BLOCK, num_samples - index * SIMULATION_BLOCK)
        s = _complex_gaussian(block_rng, (channels.num_devices, size))
        noise = _complex_gaussian(block_rng, (channels.num_antennas, size), noise_power)
        y = h @ (w[:, np.newaxis] * s) + noise
        g_hat = (m_conj @ y) / sqrt_eta
        g = np.sum(s, axis=0)
        total += float(np.sum(np.abs(g_hat - g) ** 2))
    return total / num_samples
