"""
Data schemas and validation for the AirComp benchmark.

This module provides Pydantic models for configuration and result rows,
ensuring every physical parameter is validated once, in linear units, before
any numerical code sees it.
"""
import logging
import math
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

Vector3 = Tuple[float, float, float]


# --- Base Models ---

class BaseConfigModel(BaseModel):
    """Base model for configuration data"""

    model_config = ConfigDict(
        # Unknown fields are configuration typos, never extensions
        extra="forbid",
        validate_assignment=True,
        frozen=False,
    )


class Algorithm(str, Enum):
    """Beamforming algorithms, in the order a sweep runs them."""
    DIRECT_SDR = "direct-sdr"
    DIRECT_SCA = "direct-sca"
    SDR_OPT = "sdr-opt"
    SCA_OPT = "sca-opt"


ALGORITHM_ORDER: Tuple[Algorithm, ...] = tuple(Algorithm)


# --- Channel Models ---

class GeometryConfig(BaseConfigModel):
    """AP placement, device disk and array spacing, in meters and wavelengths."""

    ap_position: Vector3 = Field(default=(0.0, 0.0, 20.0), description="AP location (m)")
    region_center: Vector3 = Field(default=(120.0, 20.0, 0.0), description="Device disk centre (m)")
    region_radius: float = Field(default=20.0, ge=0.0, description="Device disk radius (m)")
    antenna_spacing: float = Field(default=0.5, gt=0.0, description="ULA spacing (wavelengths)")

    @field_validator('ap_position', 'region_center')
    @classmethod
    def validate_finite(cls, v):
        if not all(math.isfinite(c) for c in v):
            raise ValueError("coordinates must be finite")
        return v


class FadingConfig(BaseConfigModel):
    """Large-scale path loss and Rician small-scale fading, in linear units."""

    t0: float = Field(default=1e-3, gt=0.0, description="Power gain at the reference distance (linear)")
    d0: float = Field(default=1.0, gt=0.0, description="Reference distance (m)")
    alpha: float = Field(default=3.0, gt=0.0, description="Path-loss exponent")
    # Linear power ratio, not dB; math.inf means pure line of sight.
    rician_beta: float = Field(default=3.0, ge=0.0, description="Rician factor (linear)")


# --- Solver Models ---

class SolverOptions(BaseConfigModel):
    """Stopping rules and budgets for the convex kernels and SCA loops."""

    sca_tolerance: float = Field(default=1e-5, gt=0.0, description="Relative objective decrease that stops SCA")
    sca_max_iterations: int = Field(default=100, ge=1)
    sdp_tolerance: float = Field(default=1e-8, gt=0.0, description="Relative gap and residual target")
    sdp_max_iterations: int = Field(default=100, ge=1)
    nnqp_tolerance: float = Field(default=1e-10, gt=0.0, description="KKT residual target")
    nnqp_max_iterations: int = Field(default=20000, ge=1)
    randomization_candidates: int = Field(default=100, ge=1)
    timing: bool = Field(default=True, description="Measure wall-clock time around solver work")
    record_iterates: bool = Field(default=False, description="Keep every SCA iterate in diagnostics")


class SystemConfig(BaseConfigModel):
    """All physical and solver parameters of one AirComp instance family."""

    num_antennas: int = Field(default=32, ge=1)
    num_devices: int = Field(default=10, ge=1)
    power_limit: float = Field(default=1.0, gt=0.0, description="Per-device power limit P (W)")
    noise_power: float = Field(default=1e-13, gt=0.0, description="Noise power sigma^2 (W)")
    realizations: int = Field(default=128, ge=1)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    fading: FadingConfig = Field(default_factory=FadingConfig)
    solver: SolverOptions = Field(default_factory=SolverOptions)

    @property
    def sca_tolerance(self) -> float:
        return self.solver.sca_tolerance

    def with_dimensions(self, num_antennas: Optional[int] = None, num_devices: Optional[int] = None) -> "SystemConfig":
        """Returns a copy with N and/or K replaced, revalidated."""
        data = self.model_dump()
        if num_antennas is not None:
            data['num_antennas'] = num_antennas
        if num_devices is not None:
            data['num_devices'] = num_devices
        return SystemConfig(**data)


# --- Experiment Models ---

class ExperimentConfig(BaseConfigModel):
    """A sweep over antennas or devices plus everything needed to reproduce it."""

    system: SystemConfig = Field(default_factory=SystemConfig)
    sweep_axis: Literal["antennas", "devices"] = "antennas"
    sweep_values: List[int] = Field(default_factory=lambda: [8, 16, 32, 64], min_length=1)
    algorithms: List[Algorithm] = Field(default_factory=lambda: list(ALGORITHM_ORDER), min_length=1)
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    output_path: Optional[Path] = None
    jobs: int = Field(default=1, ge=1)
    warm_up: bool = True
    validation_samples: int = Field(default=100_000, ge=1)
    validation_algorithm: Algorithm = Algorithm.SCA_OPT
    debug: bool = False

    @field_validator('sweep_values')
    @classmethod
    def validate_sweep_values(cls, v):
        """Sweep values must be strictly increasing positive integers"""
        if any(value < 1 for value in v):
            raise ValueError("sweep values must be positive integers")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep values must be strictly increasing")
        return v

    @field_validator('algorithms')
    @classmethod
    def validate_algorithms(cls, v):
        """Deduplicate and put algorithms in canonical run order"""
        return [algorithm for algorithm in ALGORITHM_ORDER if algorithm in set(v)]

    def system_at(self, sweep_value: int) -> SystemConfig:
        """System configuration at one point of the sweep."""
        if self.sweep_axis == "antennas":
            return self.system.with_dimensions(num_antennas=sweep_value)
        return self.system.with_dimensions(num_devices=sweep_value)


RECORD_COLUMNS: Tuple[str, ...] = (
    "realization", "seed", "algorithm", "antennas", "devices", "mse",
    "solve_seconds", "init_seconds", "iterations", "sdp_gap", "status",
)
TIME_COLUMNS: Tuple[str, ...] = ("solve_seconds", "init_seconds")


class ExperimentRecord(BaseModel):
    """One (realization, algorithm, N, K) result row."""

    model_config = ConfigDict(extra="forbid")

    realization: int = Field(..., ge=0)
    seed: int = Field(..., ge=0)
    algorithm: str
    antennas: int = Field(..., ge=1)
    devices: int = Field(..., ge=1)
    mse: Optional[float] = None
    solve_seconds: float = Field(default=0.0, ge=0.0)
    init_seconds: Optional[float] = Field(default=None, ge=0.0)
    iterations: int = Field(default=0, ge=0)
    sdp_gap: Optional[float] = None
    status: str = "ok"
    channel_digest: Optional[str] = Field(default=None, description="Emitted in debug mode only")

    @field_validator('mse', 'init_seconds', 'sdp_gap', mode='before')
    @classmethod
    def validate_missing(cls, v):
        """Empty CSV cells and NaN both mean 'not applicable'"""
        if v is None or (isinstance(v, str) and not v.strip()):
            return None
        if isinstance(v, float) and math.isnan(v):
            return None
        return v

    @field_validator('channel_digest', mode='before')
    @classmethod
    def validate_digest(cls, v):
        if v is None or (isinstance(v, float) and math.isnan(v)) or v == "":
            return None
        return str(v)

    @model_validator(mode='after')
    def validate_ok_rows(self):
        """Successful rows must carry a positive MSE"""
        if self.status == "ok" and (self.mse is None or not self.mse > 0):
            raise ValueError("mse must be positive for status 'ok'")
        return self

    def comparable(self) -> dict:
        """Row content without the wall-clock fields."""
        return self.model_dump(exclude=set(TIME_COLUMNS))


# --- Validation Models ---

class ValidationRow(BaseModel):
    """Analytic against empirical MSE for one realization."""

    realization: int = Field(..., ge=0)
    seed: int = Field(..., ge=0)
    algorithm: str
    analytic_mse: float = Field(..., ge=0.0)
    empirical_mse: float = Field(..., ge=0.0)
    relative_gap: float = Field(..., ge=0.0)
    mean_target_mse: float = Field(..., ge=0.0, description="MSE of the arithmetic-mean estimate")
    samples: int = Field(..., ge=1)


class ValidationReport(BaseModel):
    """Monte Carlo consistency report over several realizations."""

    rows: List[ValidationRow] = Field(default_factory=list)
    mean_relative_gap: float = Field(..., ge=0.0)
    threshold: float = Field(default=0.02, gt=0.0)
    passed: bool


__all__ = [
    'Algorithm',
    'ALGORITHM_ORDER',
    'GeometryConfig',
    'FadingConfig',
    'SolverOptions',
    'SystemConfig',
    'ExperimentConfig',
    'ExperimentRecord',
    'RECORD_COLUMNS',
    'TIME_COLUMNS',
    'ValidationRow',
    'ValidationReport',
]
