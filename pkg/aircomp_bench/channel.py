"""
Device geometry and channel generation.

Channels combine distance-dependent path loss with Rician small-scale fading
seen by a uniform linear array at the AP. The array axis is the global
x-axis; azimuths are measured in the horizontal plane from broadside (+y).
"""
import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .error_handler import InvalidArgumentError
from .schemas import FadingConfig, GeometryConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelSet:
    """Channel matrix H (column k is h_k) plus per-device metadata."""

    h_matrix: np.ndarray
    positions: Optional[np.ndarray] = None
    distances: Optional[np.ndarray] = None
    large_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        h = np.asarray(self.h_matrix, dtype=complex)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise InvalidArgumentError(f"channel matrix must be a non-empty N x K array, got shape {h.shape}")
        norms = np.sum(np.abs(h) ** 2, axis=0)
        if not np.all(np.isfinite(norms)):
            raise InvalidArgumentError("channel matrix contains non-finite entries")
        if np.any(norms <= 0.0):
            raise InvalidArgumentError(f"channel columns {np.flatnonzero(norms <= 0.0).tolist()} are zero")
        object.__setattr__(self, 'h_matrix', h)

    @classmethod
    def from_matrix(cls, h_matrix) -> "ChannelSet":
        """Wraps a bare channel matrix with no geometry attached."""
        return cls(h_matrix=np.asarray(h_matrix, dtype=complex))

    @property
    def num_antennas(self) -> int:
        return self.h_matrix.shape[0]

    @property
    def num_devices(self) -> int:
        return self.h_matrix.shape[1]


def sample_positions(geometry: GeometryConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws ``count`` device positions uniformly over the disk.

    The radius is sampled as R*sqrt(u) so every call consumes exactly
    2*count uniforms. Returns a (count, 3) array in meters.
    """
    if count < 1:
        raise InvalidArgumentError(f"device count must be at least 1, got {count}")
    u = rng.random(count)
    theta = 2.0 * np.pi * rng.random(count)
    radius = geometry.region_radius * np.sqrt(u)
    center = np.asarray(geometry.region_center, dtype=float)
    positions = np.tile(center, (count, 1))
    positions[:, 0] += radius * np.cos(theta)
    positions[:, 1] += radius * np.sin(theta)
    return positions


def path_loss(distance, fading: FadingConfig):
    """Large-scale power gain t0 * (d / d0) ** -alpha (scalar or array)."""
    d = np.asarray(distance, dtype=float)
    if np.any(~(d > 0.0)):
        raise InvalidArgumentError(f"distance must be positive, got {distance}")
    gain = fading.t0 * (d / fading.d0) ** (-fading.alpha)
    return float(gain) if gain.ndim == 0 else gain


def ula_response(num_antennas: int, azimuth: float, spacing: float = 0.5) -> np.ndarray:
    """Steering vector exp(j*2*pi*spacing*n*sin(azimuth)), n = 0..N-1."""
    if num_antennas < 1:
        raise InvalidArgumentError(f"number of antennas must be at least 1, got {num_antennas}")
    n = np.arange(num_antennas)
    return np.exp(1j * 2.0 * np.pi * spacing * n * np.sin(azimuth))


def device_azimuths(ap_position, positions: np.ndarray) -> np.ndarray:
    """Horizontal-plane azimuth of each device from the array broadside."""
    offset = positions - np.asarray(ap_position, dtype=float)
    return np.arctan2(offset[:, 0], offset[:, 1])


def rician_weights(beta: float):
    """(LOS, NLOS) amplitude weights; their squares sum to one."""
    if math.isinf(beta):
        return 1.0, 0.0
    return math.sqrt(beta / (1.0 + beta)), math.sqrt(1.0 / (1.0 + beta))


def sample_channel(
    geometry: GeometryConfig,
    fading: FadingConfig,
    num_antennas: int,
    num_devices: int,
    rng: np.random.Generator,
) -> ChannelSet:
    """Draws device positions and the N x K Rician channel matrix."""
    if num_antennas < 1:
        raise InvalidArgumentError(f"number of antennas must be at least 1, got {num_antennas}")
    positions = sample_positions(geometry, num_devices, rng)
    ap = np.asarray(geometry.ap_position, dtype=float)
    distances = np.linalg.norm(positions - ap, axis=1)
    large_scale = np.atleast_1d(path_loss(distances, fading))

    azimuths = device_azimuths(ap, positions)
    los = np.stack([ula_response(num_antennas, az, geometry.antenna_spacing) for az in azimuths], axis=1)
    nlos = (rng.standard_normal((num_antennas, num_devices))
            + 1j * rng.standard_normal((num_antennas, num_devices))) / np.sqrt(2.0)

    los_weight, nlos_weight = rician_weights(fading.rician_beta)
    h = np.sqrt(large_scale)[np.newaxis, :] * (los_weight * los + nlos_weight * nlos)
    logger.debug("Sampled channel N=%d K=%d, distances %.1f-%.1f m",
                 num_antennas, num_devices, distances.min(), distances.max())
    return ChannelSet(h_matrix=h, positions=positions, distances=distances, large_scale=large_scale)


def channel_digest(channels: ChannelSet) -> str:
    """Short BLAKE2b digest of the channel matrix, for pairing checks."""
    h = np.ascontiguousarray(channels.h_matrix, dtype=np.complex128)
    return hashlib.blake2b(h.tobytes(), digest_size=8).hexdigest()
