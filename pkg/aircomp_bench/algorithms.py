"""
Receive beamforming algorithms.

Two relaxation-based designs (``direct_sdr`` over the N-dimensional
beamformer, ``sdr_opt`` over the K-dimensional weights a with m = H a) and
their successive convex approximation refinements (``direct_sca`` and
``sca_opt``). All four minimize ||m||^2 subject to |m^H h_k| >= 1, which is
equivalent to minimizing the closed-form MSE.

Channels are normalized by their largest column norm before any solver
sees them; results are mapped back to the caller's units.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from .aircomp_core import BeamformingSolution, SolverDiagnostics, build_solution, effective_gains
from .channel import ChannelSet
from .error_handler import InvalidArgumentError, SolverError
from .opt_kernels import (
    SdpProblem,
    SdpSolution,
    SdpStatus,
    build_sca_subproblem,
    eigen_rank_ratio,
    gaussian_randomization,
    reconstruct_primal,
    solve_nnqp,
    solve_sdp,
)
from .schemas import Algorithm, SolverOptions, SystemConfig

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
# Relative ridge added to a singular Gram matrix (N < K) in the reduced relaxation.
GRAM_RIDGE = 1e-8


@dataclass(frozen=True)
class ReducedProblem:
    """f_k = H^H h_k (column k of ``f_vectors``) and the Gram matrix D = H^H H."""

    f_vectors: np.ndarray
    d_matrix: np.ndarray

    @property
    def num_devices(self) -> int:
        return self.d_matrix.shape[0]


def reduce(channels: Union[ChannelSet, np.ndarray]) -> ReducedProblem:
    """Recasts the N-dimensional problem onto the channel span."""
    h = channels.h_matrix if isinstance(channels, ChannelSet) else np.asarray(channels, dtype=complex)
    d = h.conj().T @ h
    d = 0.5 * (d + d.conj().T)
    return ReducedProblem(f_vectors=d.copy(), d_matrix=d)


@dataclass
class _ScaRun:
    point: np.ndarray
    iterations: int
    status: str
    trace: List[float]
    iterates: List[np.ndarray]


def _channel_scale(channels: ChannelSet) -> float:
    return float(np.max(np.linalg.norm(channels.h_matrix, axis=0)))


def _timer(options: SolverOptions) -> Callable[[], float]:
    return time.perf_counter if options.timing else (lambda: 0.0)


def _relative_gap(solution: SdpSolution) -> float:
    scale = max(abs(solution.primal_objective), abs(solution.dual_objective), 1e-300)
    return abs(solution.gap) / scale


def _solve_relaxation(problem: SdpProblem, options: SolverOptions, label: str) -> SdpSolution:
    solution = solve_sdp(problem, options)
    if solution.status is SdpStatus.INFEASIBLE:
        raise SolverError(f"{label}: SDP relaxation reported infeasibility after {solution.iterations} iterations")
    return solution


def _rescaled(m: np.ndarray, channels: ChannelSet, a: Optional[np.ndarray] = None):
    """Scales m (and a with it) so the weakest device sees unit gain."""
    factor = float(np.min(np.abs(effective_gains(m, channels))))
    if not factor > 0:
        raise SolverError("solver returned a beamformer with zero gain on some device")
    return m / factor, (None if a is None else a / factor)


def _run_sca(
    basis: np.ndarray,
    start: np.ndarray,
    options: SolverOptions,
    hessian: Optional[np.ndarray] = None,
    label: str = "sca",
) -> _ScaRun:
    """
    Iterates the convexified problem from a feasible ``start``.

    Works in normalized units: the objective is z^H M z (M = I when no
    Hessian is given) and the constraints are |z^H v_k| >= 1 over the
    columns v_k of ``basis``. The trace holds the objective at the start
    point followed by one value per accepted iterate.
    """

    def objective(z):
        if hessian is None:
            return float(np.real(np.vdot(z, z)))
        return float(np.real(np.vdot(z, hessian @ z)))

    z = np.asarray(start, dtype=complex)
    current = objective(z)
    trace = [current]
    iterates: List[np.ndarray] = []
    status = "max-iterations"
    iteration = 0

    for iteration in range(1, options.sca_max_iterations + 1):
        sub = build_sca_subproblem(z, basis, hessian)
        slack = sub.constraint_values(z)
        if np.min(slack) < -FEASIBILITY_TOL * float(np.max(sub.linear)):
            raise SolverError(f"{label}: previous iterate infeasible for its own approximation "
                              f"(worst slack {np.min(slack):.3e})")

        lam = solve_nnqp(sub, options)
        candidate = reconstruct_primal(sub, lam)
        gains = np.abs(np.conj(candidate) @ basis)
        weakest = float(np.min(gains))
        if not weakest > 0:
            raise SolverError(f"{label}: iterate {iteration} has zero gain on some device")
        if weakest < 1.0:
            # NNQP tolerance can leave the tight constraints marginally short.
            candidate = candidate / weakest
        value = objective(candidate)

        if value > current:
            logger.debug("%s: iteration %d did not descend (%.12g > %.12g), keeping previous point",
                         label, iteration, value, current)
            status = "converged"
            break

        decrease = (current - value) / current
        z, current = candidate, value
        trace.append(current)
        if options.record_iterates:
            iterates.append(z.copy())
        logger.debug("%s iter %d: objective %.12g, relative decrease %.3e", label, iteration, current, decrease)
        if decrease <= options.sca_tolerance:
            status = "converged"
            break

    if status != "converged":
        logger.warning("%s: iteration cap %d reached", label, options.sca_max_iterations)
    return _ScaRun(point=z, iterations=iteration, status=status, trace=trace, iterates=iterates)


def direct_sdr(
    channels: ChannelSet,
    config: SystemConfig,
    rng: Optional[np.random.Generator] = None,
) -> BeamformingSolution:
    """SDR over the N x N lifted beamformer with Gaussian randomization."""
    options = config.solver
    clock = _timer(options)
    rng = rng or np.random.default_rng()
    start = clock()

    scale = _channel_scale(channels)
    h = channels.h_matrix / scale
    n = channels.num_antennas
    problem = SdpProblem(
        objective=np.eye(n, dtype=complex),
        constraints=[np.outer(h[:, k], h[:, k].conj()) for k in range(channels.num_devices)],
        rhs=np.ones(channels.num_devices),
    )
    relaxed = _solve_relaxation(problem, options, "direct-sdr")
    m_bar = gaussian_randomization(relaxed, h, None, options.randomization_candidates, rng)
    m, _ = _rescaled(m_bar / scale, channels)
    elapsed = clock() - start

    diagnostics = SolverDiagnostics(
        solver=Algorithm.DIRECT_SDR.value,
        status="converged" if relaxed.status is SdpStatus.OPTIMAL else relaxed.status.value,
        iterations=relaxed.iterations,
        solve_seconds=elapsed,
        sdp_gap=_relative_gap(relaxed),
        sdp_objective=relaxed.primal_objective / scale ** 2,
        rank_ratio=eigen_rank_ratio(relaxed.x),
    )
    logger.info("direct-sdr: N=%d K=%d, %d SDP iterations, rank ratio %.2e, %.3fs",
                n, channels.num_devices, relaxed.iterations, diagnostics.rank_ratio, elapsed)
    return build_solution(m, channels, config.power_limit, config.noise_power, diagnostics)


def _init_vector(init, expected: int) -> np.ndarray:
    vector = init.m if isinstance(init, BeamformingSolution) else np.asarray(init, dtype=complex)
    if vector.shape != (expected,):
        raise InvalidArgumentError(f"initial point has shape {vector.shape}, expected ({expected},)")
    return vector


def direct_sca(
    channels: ChannelSet,
    config: SystemConfig,
    init: Union[BeamformingSolution, np.ndarray, None] = None,
    rng: Optional[np.random.Generator] = None,
    init_seconds: Optional[float] = None,
) -> BeamformingSolution:
    """
    SCA refinement of an N-dimensional beamformer.

    ``init`` defaults to a fresh ``direct_sdr`` solution. It must satisfy
    min_k |init^H h_k| >= 1. ``init_seconds`` overrides the initialization
    time taken from ``init``'s diagnostics.
    """
    options = config.solver
    if init is None:
        init = direct_sdr(channels, config, rng)
    if init_seconds is None and isinstance(init, BeamformingSolution):
        init_seconds = init.diagnostics.total_seconds
    m0 = _init_vector(init, channels.num_antennas)

    gains = np.abs(effective_gains(m0, channels))
    if np.min(gains) ** 2 < 1.0 - FEASIBILITY_TOL:
        raise InvalidArgumentError(f"initial beamformer is infeasible: min |m^H h_k|^2 = {np.min(gains) ** 2:.6g} < 1")

    clock = _timer(options)
    start = clock()
    scale = _channel_scale(channels)
    run = _run_sca(channels.h_matrix / scale, m0 * scale, options, label="direct-sca")
    m, _ = _rescaled(run.point / scale, channels)
    elapsed = clock() - start

    diagnostics = SolverDiagnostics(
        solver=Algorithm.DIRECT_SCA.value,
        status=run.status,
        iterations=run.iterations,
        objective_trace=[value / scale ** 2 for value in run.trace],
        solve_seconds=elapsed,
        init_seconds=init_seconds,
        iterates=[point / scale for point in run.iterates],
    )
    if isinstance(init, BeamformingSolution):
        diagnostics.sdp_gap = init.diagnostics.sdp_gap
        diagnostics.sdp_objective = init.diagnostics.sdp_objective
    logger.info("direct-sca: %d iterations (%s), %.3fs", run.iterations, run.status, elapsed)
    return build_solution(m, channels, config.power_limit, config.noise_power, diagnostics)


def sdr_opt(
    channels: ChannelSet,
    config: SystemConfig,
    rng: Optional[np.random.Generator] = None,
) -> BeamformingSolution:
    """SDR over the K x K lifted weights of the reduced problem, mapped back by m = H a."""
    options = config.solver
    clock = _timer(options)
    rng = rng or np.random.default_rng()
    notes: List[str] = []
    if channels.num_antennas < channels.num_devices:
        logger.warning("sdr-opt: N=%d < K=%d, Gram matrix is singular and will be regularized",
                       channels.num_antennas, channels.num_devices)
        notes.append("regularized-gram")
    start = clock()

    scale = _channel_scale(channels)
    h = channels.h_matrix / scale
    reduced = reduce(h)
    k = reduced.num_devices
    objective = reduced.d_matrix
    if notes:
        objective = objective + GRAM_RIDGE * np.real(np.trace(objective)) / k * np.eye(k)
    problem = SdpProblem(
        objective=objective,
        constraints=[np.outer(reduced.f_vectors[:, j], reduced.f_vectors[:, j].conj()) for j in range(k)],
        rhs=np.ones(k),
    )
    relaxed = _solve_relaxation(problem, options, "sdr-opt")
    a_bar = gaussian_randomization(relaxed, reduced.f_vectors, reduced.d_matrix,
                                   options.randomization_candidates, rng)
    m, a = _rescaled((h @ a_bar) / scale, channels, a_bar / scale ** 2)
    elapsed = clock() - start

    diagnostics = SolverDiagnostics(
        solver=Algorithm.SDR_OPT.value,
        status="converged" if relaxed.status is SdpStatus.OPTIMAL else relaxed.status.value,
        iterations=relaxed.iterations,
        solve_seconds=elapsed,
        sdp_gap=_relative_gap(relaxed),
        sdp_objective=relaxed.primal_objective / scale ** 2,
        rank_ratio=eigen_rank_ratio(relaxed.x),
        notes=notes,
    )
    logger.info("sdr-opt: N=%d K=%d, %d SDP iterations, %.3fs",
                channels.num_antennas, k, relaxed.iterations, elapsed)
    return build_solution(m, channels, config.power_limit, config.noise_power, diagnostics, a=a)


def sca_opt(
    channels: ChannelSet,
    config: SystemConfig,
    rng: Optional[np.random.Generator] = None,
    init_solution: Optional[BeamformingSolution] = None,
) -> BeamformingSolution:
    """
    SCA over the reduced weights, started from the ``sdr_opt`` solution.

    ``solve_seconds`` covers the SCA iterations only; the initialization
    time is reported in ``init_seconds``.
    """
    options = config.solver
    if init_solution is None:
        init_solution = sdr_opt(channels, config, rng)
    if init_solution.a is None:
        raise InvalidArgumentError("initial solution carries no reduced weights")

    clock = _timer(options)
    start = clock()
    scale = _channel_scale(channels)
    h = channels.h_matrix / scale
    reduced = reduce(h)
    run = _run_sca(reduced.f_vectors, init_solution.a * scale ** 2, options,
                   hessian=reduced.d_matrix, label="sca-opt")
    m, a = _rescaled((h @ run.point) / scale, channels, run.point / scale ** 2)
    elapsed = clock() - start

    diagnostics = SolverDiagnostics(
        solver=Algorithm.SCA_OPT.value,
        status=run.status,
        iterations=run.iterations,
        objective_trace=[value / scale ** 2 for value in run.trace],
        solve_seconds=elapsed,
        init_seconds=init_solution.diagnostics.total_seconds,
        sdp_gap=init_solution.diagnostics.sdp_gap,
        sdp_objective=init_solution.diagnostics.sdp_objective,
        notes=list(init_solution.diagnostics.notes),
        iterates=[(h @ point) / scale for point in run.iterates],
    )
    logger.info("sca-opt: %d iterations (%s), %.3fs", run.iterations, run.status, elapsed)
    return build_solution(m, channels, config.power_limit, config.noise_power, diagnostics, a=a)


def run_algorithm(
    algorithm: Union[Algorithm, str],
    channels: ChannelSet,
    config: SystemConfig,
    rng: Optional[np.random.Generator] = None,
    init: Optional[BeamformingSolution] = None,
) -> BeamformingSolution:
    """
    Dispatches by algorithm name.

    ``init`` is handed to the SCA variants only: direct-sca expects a
    direct-sdr solution and sca-opt an sdr-opt one.
    """
    algorithm = Algorithm(algorithm)
    if algorithm is Algorithm.DIRECT_SDR:
        return direct_sdr(channels, config, rng)
    if algorithm is Algorithm.SDR_OPT:
        return sdr_opt(channels, config, rng)
    if algorithm is Algorithm.DIRECT_SCA:
        return direct_sca(channels, config, init=init, rng=rng)
    return sca_opt(channels, config, rng, init_solution=init)


# SCA variant -> the relaxation whose solution initializes it
SCA_INITIALIZERS: Dict[Algorithm, Algorithm] = {
    Algorithm.DIRECT_SCA: Algorithm.DIRECT_SDR,
    Algorithm.SCA_OPT: Algorithm.SDR_OPT,
}
